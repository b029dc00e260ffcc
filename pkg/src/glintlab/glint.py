"""Glint shading: reflection probabilities for area and cap lights, the
binomial counting kernel, radiance modulation and multinomial splitting.

The mean microfacet reflectance never appears here. The glint radiance is
the smooth radiance scaled by k / (N p), the count divided by its
expectation, and the mean reflectance cancels out of that ratio.

Randomness is counter based: every draw is a pure function of a
:class:`CountKey`, the global seed and a stream index, so results do not
depend on evaluation order or thread count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import geom, ltc, microfacet
from .microfacet import MicrofacetModel

log = logging.getLogger(__name__)

EXACT_LIMIT = 64
# below this variance the Gaussian approximation is replaced by exact inversion
GAUSS_MIN_VARIANCE = 9.0
SPLIT_LIGHT_ID = -1
SUM_TOL = 1e-6


@dataclass(frozen=True)
class GlintSurface:
    """Material of a glinty surface; ``density`` is microfacets per unit UV area."""

    model: MicrofacetModel
    f0: tuple = (0.04, 0.04, 0.04)
    density: float = 1e6
    seed: int = 0

    def __post_init__(self):
        if not self.density > 0:
            raise ValueError("microfacet density must be positive")
        f0 = np.broadcast_to(np.asarray(self.f0, dtype=float), (3,))
        if np.any(f0 < 0) or np.any(f0 > 1):
            raise ValueError("f0 components must lie in [0, 1]")
        object.__setattr__(self, "f0", tuple(float(x) for x in f0))
        object.__setattr__(self, "seed", int(self.seed))


MIN_FOOTPRINT_AREA = 1e-300


@dataclass(frozen=True)
class FootprintSample:
    """Pixel footprint in UV space: center and per-pixel derivatives."""

    uv: tuple
    duv_dx: tuple
    duv_dy: tuple

    @property
    def area(self):
        a = abs(self.duv_dx[0] * self.duv_dy[1] - self.duv_dx[1] * self.duv_dy[0])
        return max(a, MIN_FOOTPRINT_AREA)

    @property
    def extent(self):
        return max(math.hypot(*self.duv_dx), math.hypot(*self.duv_dy))


@dataclass(frozen=True)
class CountKey:
    cell_x: int
    cell_y: int
    lod: int
    light_id: int


# ---------------------------------------------------------------- lights


@dataclass(frozen=True)
class QuadLight:
    quad: geom.Quad
    radiance: tuple = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class DirectionalCap:
    """Distant light widened to a cap of half-angle ``gamma`` (radians).

    ``direction`` points toward the light; ``irradiance`` is measured on a
    plane facing it.
    """

    direction: tuple
    gamma: float
    irradiance: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0.0 < self.gamma < 0.5 * math.pi:
            raise ValueError("cap half-angle must lie strictly between 0 and 90 degrees")
        object.__setattr__(self, "direction", tuple(geom.normalize(np.asarray(self.direction, dtype=float))))

    def cap_at(self, point):
        return np.asarray(self.direction), self.gamma, np.asarray(self.irradiance, dtype=float)


@dataclass(frozen=True)
class PointBall:
    """Spherical light of finite radius, seen from a point as a cap."""

    position: tuple
    radius: float
    intensity: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("point light radius must be positive")

    def cap_at(self, point):
        d = np.asarray(self.position, dtype=float) - np.asarray(point, dtype=float)
        dist = float(np.linalg.norm(d))
        if dist <= self.radius:
            raise geom.GeometryError("shading point lies inside the light")
        gamma = math.asin(self.radius / dist)
        return d / dist, gamma, np.asarray(self.intensity, dtype=float) / dist**2


# ---------------------------------------------------------------- probabilities


def _clamp_probability(p, what):
    if p > 1.0:
        log.debug("%s probability %.4g clipped to 1", what, p)
    return min(max(p, 0.0), 1.0)


def probability_area_unclamped(table, surface, cos_nv, alpha, poly, use_ndf_lobe=False):
    model = MicrofacetModel(surface.model.kind, alpha)
    ndf_area = ltc.integrated_ndf_area(table, poly, cos_nv, alpha, use_ndf_lobe)
    return ndf_area / microfacet.total_microfacet_area(model)


def probability_area(table, surface, cos_nv, alpha, poly, use_ndf_lobe=False):
    """Probability that one microfacet reflects the polygon light toward the viewer."""
    p = probability_area_unclamped(table, surface, cos_nv, alpha, poly, use_ndf_lobe)
    return _clamp_probability(p, "area-light")


def probability_cap_unclamped(surface, wo, wi, gamma, n=(0.0, 0.0, 1.0)):
    wo = np.asarray(wo, dtype=float)
    wi = np.asarray(wi, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.dot(wo, n) <= 0 or np.dot(wi, n) <= 0:
        return 0.0
    h = geom.halfway(wi, wo)
    d = float(microfacet.ndf_eval(surface.model, np.dot(h, n)))
    dh = microfacet.total_microfacet_area(surface.model)
    return geom.cap_solid_angle(gamma) * d / (dh * 4.0 * float(np.dot(h, wi)))


def probability_cap(surface, wo, wi, gamma, n=(0.0, 0.0, 1.0)):
    """Cap-light probability with the NDF taken as constant over the cap."""
    return _clamp_probability(probability_cap_unclamped(surface, wo, wi, gamma, n), "cap-light")


def baseline_probability(R, model, h, n=(0.0, 0.0, 1.0)):
    """The heuristic p = R D(h) / D(n), clamped to [0, 1]."""
    h = np.asarray(h, dtype=float)
    n = np.asarray(n, dtype=float)
    d = microfacet.ndf_eval(model, np.dot(h, n))
    return float(np.clip(R * d / microfacet.ndf_eval(model, 1.0), 0.0, 1.0))


def match_R(gamma, model: MicrofacetModel):
    """R making the heuristic agree with the cap probability at normal incidence."""
    if not 0.0 < gamma < 0.5 * math.pi:
        raise ValueError("gamma must lie strictly between 0 and 90 degrees")
    d_n = float(microfacet.ndf_eval(model, 1.0))
    return geom.cap_solid_angle(gamma) * d_n / (4.0 * microfacet.total_microfacet_area(model))


def footprint_count(surface: GlintSurface, fp: FootprintSample) -> int:
    return max(1, int(round(surface.density * fp.area)))


def glint_radiance(smooth_lo, n, p, k):
    """Smooth radiance scaled by the count over its expectation."""
    smooth_lo = np.asarray(smooth_lo, dtype=float)
    if p <= 0 or n <= 0:
        return np.zeros_like(smooth_lo)
    return smooth_lo * (k / (n * p))


# ---------------------------------------------------------------- random kernels


_U64 = np.uint64


@njit(cache=True, nogil=True)
def _mix(z):
    z = z + _U64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


@njit(cache=True, nogil=True)
def _as_u64(x):
    # two's complement reinterpretation of a signed 64-bit integer
    x = np.int64(x)
    if x < 0:
        return _U64(x + 9223372036854775807 + 1) | _U64(0x8000000000000000)
    return _U64(x)


@njit(cache=True, nogil=True)
def key_hash(cell_x, cell_y, lod, light_id, seed, stream):
    h = _mix(_as_u64(seed))
    h = _mix(h ^ _as_u64(cell_x))
    h = _mix(h ^ _as_u64(cell_y))
    h = _mix(h ^ _as_u64(lod))
    h = _mix(h ^ _as_u64(light_id))
    return _mix(h ^ _as_u64(stream))


@njit(cache=True, nogil=True)
def _uniform(h, i):
    z = _mix(_U64(h) + _U64(i) * _U64(0xD1B54A32D192ED03))
    return (np.float64(z >> _U64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def _norm_ppf(u):
    # rational approximation, relative error below 1.2e-9
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
    lo = 0.02425
    if u < lo:
        q = math.sqrt(-2.0 * math.log(u))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    elif u <= 1.0 - lo:
        q = u - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - u))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    return x


@njit(cache=True, nogil=True)
def _binomial_inversion(n, p, u):
    # p <= 0.5 and n p small: walk the cdf from zero
    q = 1.0 - p
    pmf = math.exp(n * math.log1p(-p))
    cdf = pmf
    k = 0
    ratio = p / q
    while u > cdf and k < n:
        pmf *= (n - k) / (k + 1.0) * ratio
        k += 1
        cdf += pmf
        if pmf < 1e-300 and cdf >= 1.0 - 1e-15:
            break
    return k


@njit(cache=True, nogil=True)
def binomial(n, p, h):
    """Binomial(n, p) draw driven by the hashed stream ``h``."""
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    if n <= EXACT_LIMIT:
        k = 0
        for i in range(n):
            if _uniform(h, i) < p:
                k += 1
        return k
    var = n * p * (1.0 - p)
    u = _uniform(h, 0)
    if var >= GAUSS_MIN_VARIANCE:
        x = math.floor(n * p + math.sqrt(var) * _norm_ppf(u) + 0.5)
        return int(min(max(x, 0.0), float(n)))
    if p > 0.5:
        return n - _binomial_inversion(n, 1.0 - p, u)
    return _binomial_inversion(n, p, u)


@njit(cache=True, nogil=True)
def _split(k, probs, h, out):
    """Sequential conditional binomials; ``probs`` need not be normalized."""
    rest = 0.0
    for j in range(len(probs)):
        rest += probs[j]
    remaining = k
    for j in range(len(probs)):
        if j == len(probs) - 1 or remaining == 0:
            out[j] = remaining
            remaining = 0
            continue
        q = probs[j] / rest if rest > 0 else 0.0
        kj = binomial(remaining, min(max(q, 0.0), 1.0), _mix(h ^ _U64(j + 1)))
        out[j] = kj
        remaining -= kj
        rest -= probs[j]
    return out


@njit(cache=True, nogil=True)
def footprint_kernel(u, v, extent, count, p, seed, light_id):
    """Count of reflecting microfacets for one footprint and one light.

    The footprint is a box of side 2^floor(log2(extent)) around (u, v) on
    the UV grid of that level; ``count`` microfacets are shared over the
    up-to-four covered cells in proportion to overlap, each cell drawing
    its own binomial from a key that does not depend on the pixel.
    """
    if count <= 0 or p <= 0.0:
        return 0
    lod = int(math.floor(math.log2(max(extent, 1e-30))))
    s = 2.0**lod
    gx = (u - 0.5 * s) / s
    gy = (v - 0.5 * s) / s
    ix = int(math.floor(gx))
    iy = int(math.floor(gy))
    fx = gx - ix
    fy = gy - iy
    primary_x = int(math.floor(u / s))
    primary_y = int(math.floor(v / s))
    hs = key_hash(primary_x, primary_y, lod, SPLIT_LIGHT_ID, seed, 0)
    # the overlap weights factor into x and y parts, so the multinomial
    # split is a binomial split in x followed by one in y per column
    left = binomial(count, 1.0 - fx, _mix(hs ^ _U64(1)))
    k = 0
    for col in range(2):
        nc = left if col == 0 else count - left
        if nc == 0:
            continue
        low = binomial(nc, 1.0 - fy, _mix(hs ^ _U64(2 + col)))
        for row in range(2):
            nj = low if row == 0 else nc - low
            if nj > 0:
                k += binomial(nj, p, key_hash(ix + col, iy + row, lod, light_id, seed, 0))
    return k


@njit(cache=True, nogil=True)
def _keyed_binomial(n, p, cx, cy, lod, light_id, seed, stream):
    return binomial(n, p, key_hash(cx, cy, lod, light_id, seed, stream))


@njit(cache=True, nogil=True)
def _keyed_split(k, probs, cx, cy, lod, light_id, seed):
    out = np.zeros(len(probs), dtype=np.int64)
    return _split(k, probs, key_hash(cx, cy, lod, light_id, seed, 1), out)


# ---------------------------------------------------------------- public wrappers


def sample_binomial_count(n, p, key: CountKey, seed, stream=0) -> int:
    """Deterministic Binomial(n, p) draw for ``key`` and ``seed``.

    Exact Bernoulli summation up to n = 64. Above that a continuity
    corrected Gaussian with clamping to [0, n], except when n p (1 - p) is
    below 9 where the exact distribution is inverted instead.
    """
    if n < 0:
        raise ValueError("count must be non-negative")
    if not 0.0 <= p <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    return int(_keyed_binomial(int(n), float(p), key.cell_x, key.cell_y, key.lod, key.light_id, int(seed), int(stream)))


def split_count_multinomial(k, sub_probs, key: CountKey, seed, p=None):
    """Divide ``k`` over sub-lights with probabilities ``sub_probs``.

    Conditional on k ~ Binomial(N, sum(sub_probs)) each part is marginally
    Binomial(N, p_j) and the parts always sum to ``k``.
    """
    probs = np.asarray(sub_probs, dtype=float).ravel()
    if k < 0 or np.any(probs < 0):
        raise ValueError("counts and probabilities must be non-negative")
    if p is not None and abs(probs.sum() - p) > SUM_TOL:
        raise ValueError(f"sub-probabilities sum to {probs.sum()}, expected {p}")
    if len(probs) == 0:
        raise ValueError("need at least one sub-light")
    out = _keyed_split(int(k), probs, key.cell_x, key.cell_y, key.lod, key.light_id, int(seed))
    return [int(x) for x in out]


def footprint_glint_count(surface: GlintSurface, fp: FootprintSample, p, light_id=0):
    """(N, k) for one footprint: the microfacet count and how many reflect."""
    n = footprint_count(surface, fp)
    k = footprint_kernel(float(fp.uv[0]), float(fp.uv[1]), fp.extent, n, float(p), surface.seed, int(light_id))
    return n, int(k)
