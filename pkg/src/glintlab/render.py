"""CPU renderer for a glinty plane under quad, directional and point lights.

Rendering is split in two stages. :func:`prepare` computes everything that
does not depend on the count seed: per pixel and light the smooth radiance
and the reflection probability. :func:`resolve` then draws the microfacet
counts for one seed. Both stages are pure per pixel and run over blocks of
pixels in a thread pool, so the output does not depend on the thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _kernels as K
from . import geom, glint, microfacet
from .glint import DirectionalCap, PointBall, QuadLight
from .ltc import LTCTable
from .scene import PixelGeometry, Scene, pixel_geometry

LO_LTC, LO_MC = 0, 1
P_LTC, P_NDF_LTC, P_MC, P_BASELINE = 0, 1, 2, 3

_MODES = {
    "smooth_ltc": (LO_LTC, None),
    "smooth_mc": (LO_MC, None),
    "glint": (LO_LTC, P_LTC),
    "glint_baseline": (LO_LTC, P_BASELINE),
    "oracle": (LO_MC, P_MC),
}

_BLOCK = 4096


def thread_count():
    env = os.environ.get("GLINTLAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 0
        if n < 1:
            raise ValueError(f"GLINTLAB_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def _parallel(fn, n, threads=None):
    """Run ``fn(start, end)`` over pixel blocks; results land in caller-owned arrays."""
    threads = thread_count() if threads is None else threads
    blocks = [(s, min(s + _BLOCK, n)) for s in range(0, n, _BLOCK)]
    if threads <= 1 or len(blocks) <= 1:
        for s, e in blocks:
            fn(s, e)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda b: fn(*b), blocks))


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _lookup(table, alpha, co, out):
    n = table.shape[0]
    x = min(max(math.sqrt(alpha), 0.0), 1.0) * (n - 1)
    y = min(max(math.sqrt(min(max(co, 0.0), 1.0)), 0.0), 1.0) * (n - 1)
    x0 = min(int(math.floor(x)), n - 2)
    y0 = min(int(math.floor(y)), n - 2)
    fx = x - x0
    fy = y - y0
    for r in range(out.shape[0]):
        out[r] = (1 - fy) * ((1 - fx) * table[y0, x0, r] + fx * table[y0, x0 + 1, r]) + fy * (
            (1 - fx) * table[y0 + 1, x0, r] + fx * table[y0 + 1, x0 + 1, r]
        )


@njit(cache=True, nogil=True)
def _frame(wo, t, b):
    # local frame with n = +z world and wo in the t/n plane
    tx, ty = wo[0], wo[1]
    tl = math.sqrt(tx * tx + ty * ty)
    if tl < 1e-9:
        tx, ty, tl = 1.0, 0.0, 1.0
    t[0], t[1], t[2] = tx / tl, ty / tl, 0.0
    b[0], b[1], b[2] = -t[1], t[0], 0.0


@njit(cache=True, nogil=True)
def _hash_uniform(pixel, seed, i):
    return glint._uniform(glint.key_hash(pixel, 0, 0, -2, seed, 0), i)


@njit(cache=True, nogil=True)
def quad_kernel(start, end, hit, pos, wo, verts, radiance, f0, kind, alpha, dh, table, lo_mode, p_mode, R,
                spp, mc_seed, out_lo, out_p, out_praw):
    """Smooth radiance and reflection probability for one quad light."""
    qn = np.cross(verts[1] - verts[0], verts[2] - verts[1])
    qn /= math.sqrt(qn[0] ** 2 + qn[1] ** 2 + qn[2] ** 2)
    e1 = verts[1] - verts[0]
    e2 = verts[2] - verts[0]
    e3 = verts[3] - verts[0]
    a1 = 0.5 * np.linalg.norm(np.cross(e1, e2))
    a2 = 0.5 * np.linalg.norm(np.cross(e2, e3))
    area = a1 + a2
    t = np.empty(3)
    b = np.empty(3)
    lv = np.empty((4, 3))
    rec = np.empty(10)
    wol = np.empty(3)
    dn = K.ndf(kind, alpha, 1.0)
    for i in range(start, end):
        out_lo[i, 0] = 0.0
        out_lo[i, 1] = 0.0
        out_lo[i, 2] = 0.0
        out_p[i] = 0.0
        out_praw[i] = 0.0
        if not hit[i]:
            continue
        p = pos[i]
        # the emitting side must face the shading point
        if (p[0] - verts[0, 0]) * qn[0] + (p[1] - verts[0, 1]) * qn[1] + (p[2] - verts[0, 2]) * qn[2] <= 0.0:
            continue
        w = wo[i]
        co = w[2]
        _frame(w, t, b)
        wol[0] = w[0] * t[0] + w[1] * t[1]
        wol[1] = 0.0
        wol[2] = co
        mx, my, mz = 0.0, 0.0, 0.0
        for j in range(4):
            dx = verts[j, 0] - p[0]
            dy = verts[j, 1] - p[1]
            dz = verts[j, 2] - p[2]
            lv[j, 0] = dx * t[0] + dy * t[1]
            lv[j, 1] = dx * b[0] + dy * b[1]
            lv[j, 2] = dz
            dl = math.sqrt(dx * dx + dy * dy + dz * dz)
            mx += lv[j, 0] / dl
            my += lv[j, 1] / dl
            mz += lv[j, 2] / dl
        ml = math.sqrt(mx * mx + my * my + mz * mz)
        mx, my, mz = mx / ml, my / ml, mz / ml
        if lo_mode == 0 or p_mode == 0 or p_mode == 1:
            _lookup(table, alpha, co, rec)
        frac = 0.0
        if lo_mode == 0 or p_mode == 0:
            frac = K.ltc_polygon(K.inverse_params(rec[0], rec[1], rec[2], rec[3]), lv)
        if lo_mode == 0:
            hx, hy, hz = mx + wol[0], my, mz + co
            hl = math.sqrt(hx * hx + hy * hy + hz * hz)
            hv = (hx * wol[0] + hz * co) / hl if hl > 1e-12 else 1.0
            s = rec[8] * frac
            for c in range(3):
                out_lo[i, c] = radiance[c] * K.schlick(f0[c], hv) * s
        praw = 0.0
        if p_mode == 0:
            praw = rec[9] * frac / dh
        elif p_mode == 1:
            praw = rec[9] * K.ltc_polygon(K.inverse_params(rec[4], rec[5], rec[6], rec[7]), lv) / dh
        elif p_mode == 3:
            hx, hy, hz = mx + wol[0], my, mz + co
            hl = math.sqrt(hx * hx + hy * hy + hz * hz)
            if hl > 1e-12 and mz > 0.0:
                praw = R * K.ndf(kind, alpha, hz / hl) / dn
        if lo_mode == 1 or p_mode == 2:
            acc = np.zeros(3)
            pacc = 0.0
            for s_i in range(spp):
                u0 = _hash_uniform(i, mc_seed, 2 * s_i)
                u1 = _hash_uniform(i, mc_seed, 2 * s_i + 1)
                # area-uniform point on the quad split into two triangles
                if u0 < a1 / area:
                    uu = u0 * area / a1
                    q0, q1, q2 = verts[0], verts[1], verts[2]
                else:
                    uu = (u0 - a1 / area) * area / a2
                    q0, q1, q2 = verts[0], verts[2], verts[3]
                su = math.sqrt(uu)
                dx = (1 - su) * q0[0] + su * (1 - u1) * q1[0] + su * u1 * q2[0] - p[0]
                dy = (1 - su) * q0[1] + su * (1 - u1) * q1[1] + su * u1 * q2[1] - p[1]
                dz = (1 - su) * q0[2] + su * (1 - u1) * q1[2] + su * u1 * q2[2] - p[2]
                d2 = dx * dx + dy * dy + dz * dz
                dl = math.sqrt(d2)
                wx = (dx * t[0] + dy * t[1]) / dl
                wy = (dx * b[0] + dy * b[1]) / dl
                wz = dz / dl
                cos_l = -(dx * qn[0] + dy * qn[1] + dz * qn[2]) / dl
                if cos_l <= 0.0 or wz <= 0.0:
                    continue
                weight = cos_l * area / d2
                hx, hy, hz = wx + wol[0], wy, wz + co
                hl = math.sqrt(hx * hx + hy * hy + hz * hz)
                if hl < 1e-12:
                    continue
                hx, hy, hz = hx / hl, hy / hl, hz / hl
                hv = hx * wol[0] + hz * co
                if hv <= 0.0:
                    continue
                d = K.ndf(kind, alpha, hz)
                pacc += weight * d / (4.0 * hv)
                g = K.smith_g(kind, alpha, co, wz)
                core = g * d / (4.0 * co) * weight
                for c in range(3):
                    acc[c] += K.schlick(f0[c], hv) * core
            if lo_mode == 1:
                for c in range(3):
                    out_lo[i, c] = radiance[c] * acc[c] / spp
            if p_mode == 2:
                praw = pacc / (spp * dh)
        out_praw[i] = praw
        out_p[i] = min(max(praw, 0.0), 1.0)


@njit(cache=True, nogil=True)
def resolve_kernel(start, end, uv, extent, count, probs, smooth, seed, out):
    nl = probs.shape[0]
    for i in range(start, end):
        out[i, 0] = 0.0
        out[i, 1] = 0.0
        out[i, 2] = 0.0
        for li in range(nl):
            p = probs[li, i]
            if p <= 0.0:
                continue
            n = count[i]
            k = glint.footprint_kernel(uv[i, 0], uv[i, 1], extent[i], n, p, seed, li)
            r = k / (n * p)
            for c in range(3):
                out[i, c] += smooth[li, i, c] * r


@njit(cache=True, nogil=True)
def ratio_moments_kernel(start, end, uv, extent, count, probs, seeds, s1, s2):
    """Sums of k / (N p) and its square over seeds, per light and pixel."""
    nl = probs.shape[0]
    for i in range(start, end):
        for li in range(nl):
            p = probs[li, i]
            if p <= 0.0:
                continue
            n = count[i]
            a = 0.0
            a2 = 0.0
            for s in seeds:
                r = glint.footprint_kernel(uv[i, 0], uv[i, 1], extent[i], n, p, s, li) / (n * p)
                a += r
                a2 += r * r
            s1[li, i] = a
            s2[li, i] = a2


# ---------------------------------------------------------------- caps


def _cap_terms(surface, light, geo: PixelGeometry, p_mode, R, spp, mc_seed):
    n = len(geo.hit)
    lo = np.zeros((n, 3))
    praw = np.zeros(n)
    idx = np.flatnonzero(geo.hit)
    if len(idx) == 0:
        return lo, praw
    pos = geo.position[idx]
    wo = geo.wo[idx]
    if isinstance(light, DirectionalCap):
        wi = np.broadcast_to(np.asarray(light.direction), pos.shape)
        gamma = np.full(len(idx), light.gamma)
        irr = np.broadcast_to(np.asarray(light.irradiance, dtype=float), pos.shape)
    else:
        d = np.asarray(light.position, dtype=float) - pos
        dist = np.linalg.norm(d, axis=1)
        if np.any(dist <= light.radius):
            raise geom.GeometryError("shading point lies inside a point light")
        wi = d / dist[:, None]
        gamma = np.arcsin(light.radius / dist)
        irr = np.asarray(light.intensity, dtype=float) / dist[:, None] ** 2
    model = surface.model
    normal = np.array([0.0, 0.0, 1.0])
    f = microfacet.brdf_eval(model, surface.f0, wi, wo, normal)
    cos_i = np.maximum(wi[:, 2], 0.0)
    lo[idx] = irr * f * cos_i[:, None]
    if p_mode is None:
        return lo, praw
    up = (wi[:, 2] > 0) & (wo[:, 2] > 0)
    s = wi + wo
    h = s / np.maximum(np.linalg.norm(s, axis=1), 1e-300)[:, None]
    if p_mode == P_BASELINE:
        p = R * microfacet.ndf_eval(model, h[:, 2]) / microfacet.ndf_eval(model, 1.0)
    elif p_mode == P_MC:
        p = _cap_probability_mc(model, wo, wi, gamma, spp, np.random.default_rng(mc_seed))
    else:
        dh = microfacet.total_microfacet_area(model)
        omega = geom.cap_solid_angle(gamma)
        hw = np.maximum(geom.dot(h, wi), 1e-300)
        p = omega * microfacet.ndf_eval(model, h[:, 2]) / (dh * 4.0 * hw)
    praw[idx] = np.where(up, p, 0.0)
    return lo, praw


def _cap_probability_mc(model, wo, axis, gamma, spp, rng):
    """Integral of D / (4 h.wi) over each pixel's cap, by uniform cap sampling."""
    n = len(wo)
    cos_g = np.cos(gamma)
    u = rng.random((spp, n, 2))
    z = 1.0 - u[..., 0] * (1.0 - cos_g)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * u[..., 1]
    frame = geom.shading_frame(axis, np.broadcast_to([0.3, 0.5, 0.81], axis.shape))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    wi = np.einsum("snk,nkj->snj", local, frame)
    s = wi + wo
    h = s / np.linalg.norm(s, axis=-1, keepdims=True)
    hw = geom.dot(h, wi)
    val = np.where((wi[..., 2] > 0) & (hw > 0), microfacet.ndf_eval(model, h[..., 2]) / (4.0 * np.maximum(hw, 1e-300)), 0.0)
    omega = geom.cap_solid_angle(gamma)
    return omega * val.mean(axis=0) / microfacet.total_microfacet_area(model)


# ---------------------------------------------------------------- stages


@dataclass
class Prepared:
    """Seed-independent shading state of a scene."""

    width: int
    height: int
    hit: np.ndarray
    uv: np.ndarray
    extent: np.ndarray
    count: np.ndarray
    smooth: np.ndarray  # (lights, pixels, 3)
    prob: np.ndarray  # (lights, pixels), clamped
    prob_raw: np.ndarray  # before clamping
    counting: bool
    surface_seed: int = 0

    @property
    def smooth_image(self):
        return self.smooth.sum(axis=0).reshape(self.height, self.width, 3)


def _resolve_mode(scene, mode, lo_method, p_method):
    mode = mode or scene.render.mode
    if mode not in _MODES:
        raise ValueError(f"unknown render mode {mode!r}")
    lo_mode, p_mode = _MODES[mode]
    if mode in ("glint", "glint_baseline") and scene.render.use_ndf_lobe and p_mode == P_LTC:
        p_mode = P_NDF_LTC
    if lo_method is not None:
        lo_mode = {"ltc": LO_LTC, "mc": LO_MC}[lo_method]
    if p_method is not None:
        p_mode = {"ltc": P_LTC, "ndf_ltc": P_NDF_LTC, "mc": P_MC, "baseline": P_BASELINE}[p_method]
    if p_mode == P_BASELINE and scene.render.R is None:
        raise ValueError("glint_baseline mode needs render.R")
    return lo_mode, p_mode


def footprint_counts(surface, geo: PixelGeometry):
    area = np.abs(geo.duv_dx[:, 0] * geo.duv_dy[:, 1] - geo.duv_dx[:, 1] * geo.duv_dy[:, 0])
    count = np.maximum(1, np.rint(surface.density * area)).astype(np.int64)
    extent = np.maximum(np.linalg.norm(geo.duv_dx, axis=1), np.linalg.norm(geo.duv_dy, axis=1))
    return count, extent


def prepare(scene: Scene, table: LTCTable | None, mode=None, lo_method=None, p_method=None, lights=None,
            threads=None) -> Prepared:
    """Smooth radiance and reflection probabilities for every pixel and light."""
    lo_mode, p_mode = _resolve_mode(scene, mode, lo_method, p_method)
    surface = scene.surface
    model = surface.model
    needs_table = lo_mode == LO_LTC or p_mode in (P_LTC, P_NDF_LTC)
    if needs_table:
        if table is None:
            raise ValueError("this render mode needs an LTC table")
        if table.kind != model.kind:
            raise ValueError(f"table is for {table.kind}, surface uses {model.kind}")
    lights = scene.lights if lights is None else tuple(lights)
    geo = pixel_geometry(scene.camera, scene.plane)
    npix = len(geo.hit)
    count, extent = footprint_counts(surface, geo)
    kind = K.KIND_ID[model.kind]
    dh = microfacet.total_microfacet_area(model)
    f0 = np.asarray(surface.f0, dtype=float)
    tdata = table.data if table is not None else np.zeros((2, 2, 10))
    smooth = np.zeros((len(lights), npix, 3))
    prob = np.zeros((len(lights), npix))
    raw = np.zeros((len(lights), npix))
    R = float(scene.render.R or 0.0)
    mc_seed = surface.seed
    pos = np.ascontiguousarray(geo.position)
    wo = np.ascontiguousarray(geo.wo)
    for li, light in enumerate(lights):
        if isinstance(light, QuadLight):
            verts = np.ascontiguousarray(light.quad.vertices, dtype=float)
            rad = np.asarray(light.radiance, dtype=float)
            pm = -1 if p_mode is None else p_mode
            lo_l, p_l, raw_l = smooth[li], prob[li], raw[li]

            def run(s, e, verts=verts, rad=rad, pm=pm, lo_l=lo_l, p_l=p_l, raw_l=raw_l, li=li):
                quad_kernel(s, e, geo.hit, pos, wo, verts, rad, f0, kind, model.alpha, dh, tdata, lo_mode, pm, R,
                            scene.render.spp, mc_seed + 7919 * li, lo_l, p_l, raw_l)

            _parallel(run, npix, threads)
        elif isinstance(light, (DirectionalCap, PointBall)):
            lo_l, raw_l = _cap_terms(surface, light, geo, p_mode, R, scene.render.spp, mc_seed + 7919 * li)
            smooth[li] = lo_l
            raw[li] = raw_l
            prob[li] = np.clip(raw_l, 0.0, 1.0)
        else:
            raise TypeError(f"unsupported light {type(light).__name__}")
    return Prepared(scene.camera.width, scene.camera.height, geo.hit, np.ascontiguousarray(geo.uv), extent, count,
                    smooth, prob, raw, p_mode is not None, surface.seed)


def count_seed(surface_seed, seed):
    """Combine the material's global seed with a per-render seed."""
    return (int(surface_seed) * 1000003 + int(seed)) % (1 << 63)


def resolve(prep: Prepared, seed, threads=None) -> np.ndarray:
    """Image (height, width, 3) for one count seed."""
    if not prep.counting:
        return prep.smooth_image.copy()
    npix = len(prep.hit)
    out = np.zeros((npix, 3))
    seed = count_seed(prep.surface_seed, seed)

    def run(s, e):
        resolve_kernel(s, e, prep.uv, prep.extent, prep.count, prep.prob, prep.smooth, seed, out)

    _parallel(run, npix, threads)
    return out.reshape(prep.height, prep.width, 3)


def ratio_moments(prep: Prepared, seeds, threads=None):
    """Per light and pixel: sums of k / (N p) and of its square over ``seeds``."""
    npix = len(prep.hit)
    s1 = np.zeros(prep.prob.shape)
    s2 = np.zeros(prep.prob.shape)
    seeds = np.array([count_seed(prep.surface_seed, s) for s in seeds], dtype=np.int64)

    def run(s, e):
        ratio_moments_kernel(s, e, prep.uv, prep.extent, prep.count, prep.prob, seeds, s1, s2)

    _parallel(run, npix, threads)
    return s1, s2


def render(scene: Scene, table: LTCTable | None, seed=0, mode=None, threads=None, **kw) -> np.ndarray:
    """Render ``scene``; returns a linear HDR image of shape (height, width, 3)."""
    prep = prepare(scene, table, mode=mode, threads=threads, **kw)
    return resolve(prep, seed, threads)
