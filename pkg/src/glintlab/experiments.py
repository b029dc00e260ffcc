"""Experiment runners: convergence strips, light subdivision, R matching for
the heuristic probability, and the MC/LTC ablation grid."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from . import glint, render
from .glint import QuadLight
from .microfacet import MicrofacetModel


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def relative_rms(img, ref, mask=None):
    """Root mean square of the per-pixel relative difference in luminance."""
    a = img.mean(axis=-1)
    b = ref.mean(axis=-1)
    m = b > 0 if mask is None else (mask & (b > 0))
    if not np.any(m):
        return 0.0
    return float(np.sqrt(np.mean(((a[m] - b[m]) / b[m]) ** 2)))


# ---------------------------------------------------------------- convergence


@dataclass
class ConvergenceResult:
    strip: np.ndarray
    smooth: np.ndarray
    rows: list  # (level, density, median N_P, median N_P p, relative rms)

    header = ("level", "density", "median_np", "median_np_p", "rel_rms")


def experiment_convergence(scene, table, levels, seed=0, threads=None):
    """Render with the microfacet density scaled by 4 per level.

    The strip image takes the i-th vertical band from level i. RMS values
    are computed over all lit pixels of each full level image.
    """
    if levels < 2:
        raise ValueError("the convergence experiment needs at least 2 levels")
    w = scene.camera.width
    strip = np.zeros((scene.camera.height, w, 3))
    rows = []
    smooth = None
    for lv in range(levels):
        density = scene.surface.density * 4.0**lv
        sc = scene.with_surface(density=density)
        prep = render.prepare(sc, table, mode="glint", threads=threads)
        img = render.resolve(prep, seed, threads)
        if smooth is None:
            smooth = prep.smooth_image
        lit = (prep.prob.max(axis=0) > 0).reshape(img.shape[:2]) & (smooth.mean(axis=-1) > 0)
        np_p = (prep.count * prep.prob.sum(axis=0)).reshape(img.shape[:2])
        n_lit = prep.count.reshape(img.shape[:2])[lit]
        rows.append((
            lv,
            density,
            float(np.median(n_lit)) if n_lit.size else 0.0,
            float(np.median(np_p[lit])) if n_lit.size else 0.0,
            relative_rms(img, smooth, lit),
        ))
        a = lv * w // levels
        b = (lv + 1) * w // levels
        strip[:, a:b] = img[:, a:b]
    return ConvergenceResult(strip, smooth, rows)


# ---------------------------------------------------------------- subdivision


@njit(cache=True, nogil=True)
def _subdivided_kernel(start, end, uv, extent, count, p_whole, p_sub, smooth_sub, seed, out_whole_k, out_parts_k, out):
    nsub = p_sub.shape[0]
    probs = np.empty(nsub)
    parts = np.empty(nsub, dtype=np.int64)
    for i in range(start, end):
        out[i, 0] = 0.0
        out[i, 1] = 0.0
        out[i, 2] = 0.0
        out_whole_k[i] = 0
        out_parts_k[i] = 0
        p = p_whole[i]
        if p <= 0.0:
            continue
        n = count[i]
        k = glint.footprint_kernel(uv[i, 0], uv[i, 1], extent[i], n, p, seed, 0)
        out_whole_k[i] = k
        for j in range(nsub):
            probs[j] = p_sub[j, i]
        h = glint.key_hash(i, 0, 0, -3, seed, 2)
        glint._split(k, probs, h, parts)
        out_parts_k[i] = parts.sum()
        for j in range(nsub):
            if parts[j] > 0 and probs[j] > 0.0:
                r = parts[j] / (n * probs[j])
                for c in range(3):
                    out[i, c] += smooth_sub[j, i, c] * r


@dataclass
class SubdivisionResult:
    whole: list  # per-seed images
    subdivided: list
    count_sum_exact: bool
    mean_diff: float  # mean over seeds of the image-mean difference
    se_diff: float
    rel_abs_diff: float  # sum |sub - whole| / sum whole, over seeds and pixels

    header = ("seed", "mean_whole", "mean_subdivided", "mean_diff", "abs_diff")

    def rows(self, seeds):
        out = []
        for s, a, b in zip(seeds, self.whole, self.subdivided):
            out.append((s, float(a.mean()), float(b.mean()), float((b - a).mean()), float(np.abs(b - a).mean())))
        return out


def _split_side(k_splits):
    side = int(round(math.sqrt(k_splits)))
    if side < 1 or side * side != k_splits:
        raise ValueError(f"subdivision count must be a square number, got {k_splits}")
    return side


def experiment_subdivision(scene, table, k_splits, seeds, variant="ltc", threads=None):
    """Compare the undivided light with its ``k_splits`` patches under shared counts.

    The total count per footprint is drawn once and split multinomially
    over the patches. ``variant`` "ltc" computes patch probabilities with
    the parent's LTC lobe and the parent's Fresnel term, so each patch
    keeps the parent's radiance-to-probability ratio. ``variant`` "mc"
    estimates radiance and probability of every patch by Monte Carlo and
    sums the patches to obtain the undivided values.
    """
    side = _split_side(k_splits)
    lights = [x for x in scene.lights if isinstance(x, QuadLight)]
    if len(lights) != 1:
        raise ValueError("the subdivision experiment needs exactly one quad light")
    light = lights[0]
    sc = replace(scene, lights=(light,))
    patches = [QuadLight(q, light.radiance) for q in light.quad.subdivide(side)]
    if variant == "ltc":
        whole = render.prepare(sc, table, lo_method="ltc", p_method="ltc", threads=threads)
        parts = render.prepare(sc, table, lo_method="ltc", p_method="ltc", lights=patches, threads=threads)
        p_whole = whole.prob[0]
        raw_whole = whole.prob_raw[0]
        p_sub = parts.prob_raw
        with np.errstate(divide="ignore", invalid="ignore"):
            share = np.where(raw_whole > 0, p_sub / raw_whole, 0.0)
        smooth_sub = whole.smooth[0][None] * share[..., None]
        # the count uses the clamped parent probability; split weights keep proportions
        p_sub = p_whole[None] * share
        smooth_whole = whole.smooth[0]
        base = whole
    elif variant == "mc":
        parts = render.prepare(sc, table, lo_method="mc", p_method="mc", lights=patches, threads=threads)
        smooth_sub = parts.smooth
        p_sub = parts.prob_raw
        smooth_whole = smooth_sub.sum(axis=0)
        p_whole = np.clip(p_sub.sum(axis=0), 0.0, 1.0)
        scale = np.where(p_sub.sum(axis=0) > 0, p_whole / np.where(p_sub.sum(axis=0) > 0, p_sub.sum(axis=0), 1), 0)
        p_sub = p_sub * scale[None]
        base = parts
    else:
        raise ValueError(f"unknown subdivision variant {variant!r}")
    npix = len(base.hit)
    p_sub = np.ascontiguousarray(p_sub)
    smooth_sub = np.ascontiguousarray(smooth_sub)
    whole_imgs, sub_imgs = [], []
    exact = True
    h, w = base.height, base.width
    for s in seeds:
        cs = render.count_seed(base.surface_seed, s)
        out = np.zeros((npix, 3))
        ks = np.zeros(npix, dtype=np.int64)
        ksum = np.zeros(npix, dtype=np.int64)

        def run(a, b, cs=cs, out=out, ks=ks, ksum=ksum):
            _subdivided_kernel(a, b, base.uv, base.extent, base.count, p_whole, p_sub, smooth_sub, cs, ks, ksum, out)

        render._parallel(run, npix, threads)
        ratio = np.where(p_whole > 0, ks / (base.count * np.where(p_whole > 0, p_whole, 1.0)), 0.0)
        whole_img = smooth_whole * ratio[:, None]
        whole_imgs.append(whole_img.reshape(h, w, 3))
        sub_imgs.append(out.reshape(h, w, 3))
        exact &= bool(np.array_equal(ks, ksum))
    d = np.array([(b - a).mean() for a, b in zip(whole_imgs, sub_imgs)])
    total = sum(float(a.sum()) for a in whole_imgs)
    absd = sum(float(np.abs(b - a).sum()) for a, b in zip(whole_imgs, sub_imgs))
    se = float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0
    return SubdivisionResult(whole_imgs, sub_imgs, exact, float(d.mean()), se, absd / total if total > 0 else 0.0)


# ---------------------------------------------------------------- R matching


MATCH_R_HEADER = ("gamma_deg", "sqrt_alpha", "R", "p_normal_unclamped", "clipped")


def experiment_match_r(gammas_deg, roughness, kind="ggx"):
    """Rows of (gamma, sqrt(alpha), R, unclamped normal-incidence probability, clipped)."""
    rows = []
    z = np.array([0.0, 0.0, 1.0])
    for g in gammas_deg:
        for r in roughness:
            model = MicrofacetModel.from_roughness(r, kind)
            gamma = math.radians(g)
            R = glint.match_R(gamma, model)
            p = glint.probability_cap_unclamped(glint.GlintSurface(model), z, z, gamma)
            rows.append((g, r, R, p, p > 1.0))
    return rows


# ---------------------------------------------------------------- ablation


ABLATION_CELLS = (("mc", "mc"), ("mc", "ltc"), ("ltc", "mc"), ("ltc", "ltc"))


def experiment_ablation(scene, table, seed=0, threads=None):
    """Glint renders for radiance by {MC, LTC} x probability by {MC, LTC}.

    Returns the 2x2 grid (rows: radiance method, columns: probability
    method) and a dict of the individual images, including the variant
    that uses the separately fitted NDF lobe for the probability.
    """
    images = {}
    for lo, p in ABLATION_CELLS + (("ltc", "ndf_ltc"),):
        prep = render.prepare(scene, table, lo_method=lo, p_method=p, threads=threads)
        images[(lo, p)] = render.resolve(prep, seed, threads)
    top = np.concatenate([images[("mc", "mc")], images[("mc", "ltc")]], axis=1)
    bottom = np.concatenate([images[("ltc", "mc")], images[("ltc", "ltc")]], axis=1)
    return np.concatenate([top, bottom], axis=0), images


def ablation_rows(images):
    ref = images[("mc", "mc")]
    rows = []
    for (lo, p), img in images.items():
        rows.append((lo, p, float(img.mean()), relative_rms(img, ref)))
    return rows


ABLATION_HEADER = ("radiance", "probability", "mean", "rel_rms_vs_mc")
