"""Linearly transformed cosines: lobe evaluation, polygon integration,
fitting to the BRDF and NDF, and the baked (sqrt(alpha), sqrt(n.v)) table.

Lobes live in the local shading frame: normal = +z and the view direction
in the xz-plane with a non-negative x component.
"""

from __future__ import annotations

import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import optimize

from . import _kernels as K
from . import geom, microfacet
from .microfacet import MicrofacetModel

log = logging.getLogger(__name__)

BRDF = "brdf"
NDF = "ndf"
TARGETS = (BRDF, NDF)

MAGIC = b"GLTB"
FORMAT_VERSION = 1
MODEL_IDS = {microfacet.GGX: 0, microfacet.BECKMANN: 1}
RECORD = 10

MIN_ALPHA = 1e-3
MIN_COS = 1e-3
FIT_GRID = 32
FIT_ITERS = 200


@dataclass(frozen=True)
class LTCLobe:
    """Clamped cosine warped by ``m``; ``target`` records what it was fitted to."""

    m: np.ndarray
    target: str = BRDF
    minv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(3, 3)
        det = np.linalg.det(m)
        if not np.isfinite(det) or abs(det) <= 1e-12 * np.abs(m).max() ** 3:
            raise ValueError("LTC matrix is singular")
        if self.target not in TARGETS:
            raise ValueError(f"unknown LTC target {self.target!r}")
        minv = np.linalg.inv(m)
        m.setflags(write=False)
        minv.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "minv", minv)

    @classmethod
    def from_params(cls, a, b, c, d, target=BRDF):
        return cls(np.array([[a, 0.0, b], [0.0, c, 0.0], [d, 0.0, 1.0]]), target)

    @classmethod
    def identity(cls, target=BRDF):
        return cls(np.eye(3), target)

    @property
    def params(self):
        m = self.m / self.m[2, 2]
        return float(m[0, 0]), float(m[0, 2]), float(m[1, 1]), float(m[2, 0])


def ltc_eval(lobe: LTCLobe, w):
    """Density (per steradian) of the lobe at unit direction(s) ``w``."""
    w = np.asarray(w, dtype=float)
    v = w @ lobe.minv.T
    length = geom.norm(v)
    cos = np.maximum(v[..., 2] / length, 0.0)
    return cos / math.pi * abs(np.linalg.det(lobe.minv)) / length**3


def _vertices(poly):
    if isinstance(poly, geom.SphericalPolygon):
        return np.ascontiguousarray(poly.vertices)
    return np.ascontiguousarray(np.asarray(poly, dtype=float).reshape(-1, 3))


def integrate_ltc_polygon(lobe: LTCLobe, poly) -> float:
    """Fraction of the lobe's mass falling inside a convex spherical polygon.

    ``poly`` is a :class:`~glintlab.geom.SphericalPolygon` or an (n, 3) array
    of vertex directions. The parts below the horizon are clipped away.
    """
    return float(K.ltc_polygon(np.ascontiguousarray(lobe.minv), _vertices(poly)))


# ---------------------------------------------------------------- fitting kernels


@njit(cache=True, nogil=True)
def _target(kind, alpha, wo, w, which):
    """Unnormalized target value at ``w`` and the pdf of the proposal sampler there."""
    hx, hy, hz = w[0] + wo[0], w[1] + wo[1], w[2] + wo[2]
    hl = math.sqrt(hx * hx + hy * hy + hz * hz)
    if hl < 1e-12:
        return 0.0, 0.0
    hx /= hl
    hy /= hl
    hz /= hl
    hv = hx * wo[0] + hy * wo[1] + hz * wo[2]
    d = K.ndf(kind, alpha, hz)
    if hv <= 0.0 or d == 0.0:
        return 0.0, 0.0
    pdf = d * hz / (4.0 * hv)
    if w[2] <= 0.0:
        return 0.0, pdf
    if which == 0:
        val = K.smith_g(kind, alpha, wo[2], w[2]) * d / (4.0 * wo[2])
    else:
        val = d / (4.0 * hv)
    return val, pdf


@njit(cache=True, nogil=True)
def _sample_proposal(kind, alpha, wo, u1, u2, out):
    a2 = alpha * alpha
    if kind == 0:
        t = a2 * u1 / max(1.0 - u1, 1e-300)
    else:
        t = -a2 * math.log(max(1.0 - u1, 1e-300))
    ct = 1.0 / math.sqrt(1.0 + t)
    st = math.sqrt(t / (1.0 + t))
    phi = 2.0 * math.pi * u2
    hx, hy, hz = st * math.cos(phi), st * math.sin(phi), ct
    hv = hx * wo[0] + hy * wo[1] + hz * wo[2]
    out[0] = 2.0 * hv * hx - wo[0]
    out[1] = 2.0 * hv * hy - wo[1]
    out[2] = 2.0 * hv * hz - wo[2]


@njit(cache=True, nogil=True)
def _ltc_density(minv, detinv, w):
    vx = minv[0, 0] * w[0] + minv[0, 1] * w[1] + minv[0, 2] * w[2]
    vy = minv[1, 0] * w[0] + minv[1, 1] * w[1] + minv[1, 2] * w[2]
    vz = minv[2, 0] * w[0] + minv[2, 1] * w[1] + minv[2, 2] * w[2]
    length = math.sqrt(vx * vx + vy * vy + vz * vz)
    if vz <= 0.0:
        return 0.0
    return vz / length / math.pi * detinv / (length * length * length)


@njit(cache=True, nogil=True)
def _fit_error(m, minv, detinv, kind, alpha, wo, which, norm, n):
    w = np.empty(3)
    err = 0.0
    for i in range(n):
        for j in range(n):
            u1 = (i + 0.5) / n
            u2 = (j + 0.5) / n
            # sample the lobe: cosine-distributed direction pushed through m
            r = math.sqrt(u1)
            px = r * math.cos(2.0 * math.pi * u2)
            py = r * math.sin(2.0 * math.pi * u2)
            pz = math.sqrt(max(1.0 - u1, 0.0))
            for k in range(3):
                w[k] = m[k, 0] * px + m[k, 1] * py + m[k, 2] * pz
            wl = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
            w /= wl
            f, pf = _target(kind, alpha, wo, w, which)
            g = _ltc_density(minv, detinv, w)
            if g + pf > 0.0:
                diff = f / norm - g
                err += diff * diff / (g + pf)
            # sample the target's proposal
            _sample_proposal(kind, alpha, wo, u1, u2, w)
            f, pf = _target(kind, alpha, wo, w, which)
            g = _ltc_density(minv, detinv, w)
            if g + pf > 0.0:
                diff = f / norm - g
                err += diff * diff / (g + pf)
    return err / (n * n)


@njit(cache=True, nogil=True)
def _average_direction(kind, alpha, wo, which, n):
    w = np.empty(3)
    acc = np.zeros(3)
    for i in range(n):
        for j in range(n):
            _sample_proposal(kind, alpha, wo, (i + 0.5) / n, (j + 0.5) / n, w)
            f, pf = _target(kind, alpha, wo, w, which)
            if pf > 0.0 and f > 0.0:
                acc += f / pf * w
    return acc


# ---------------------------------------------------------------- FGD / D_PR


_TH_X, _TH_W = np.polynomial.legendre.leggauss(48)
_PH_X, _PH_W = np.polynomial.legendre.leggauss(64)
_PH_X = 0.5 * (_PH_X + 1.0)
_PH_W = 0.5 * _PH_W


@njit(cache=True, nogil=True)
def _ring_limit(theta, co, so):
    if so < 1e-12:
        return math.pi if theta < 0.25 * math.pi else 0.0
    s2 = math.sin(2.0 * theta)
    c2 = math.cos(2.0 * theta)
    if s2 <= 0.0:
        return math.pi if c2 > 0 else 0.0
    c = -co * c2 / (s2 * so)
    return math.acos(min(max(c, -1.0), 1.0))


@njit(cache=True, nogil=True)
def _fgd_dpr_panels(kind, alpha, co, edges, tx, tw, px, pw):
    so = math.sqrt(max(0.0, 1.0 - co * co))
    fgd = 0.0
    dpr = 0.0
    for e in range(len(edges) - 1):
        lo, hi = edges[e], edges[e + 1]
        half = 0.5 * (hi - lo)
        for i in range(len(tx)):
            th = lo + half * (tx[i] + 1.0)
            st, ct = math.sin(th), math.cos(th)
            dens = K.ndf(kind, alpha, ct) * st * half * tw[i]
            pmax = _ring_limit(th, co, so)
            if dens == 0.0 or pmax == 0.0:
                continue
            ring = 0.0
            for j in range(len(px)):
                phi = pmax * px[j]
                hv = st * math.cos(phi) * so + ct * co
                ci = 2.0 * hv * ct - co
                ring += pw[j] * K.smith_g(kind, alpha, co, ci) * hv
            fgd += dens * 2.0 * pmax * ring / co
            dpr += dens * 2.0 * pmax
    return fgd, dpr


def fast_fgd_dpr(model: MicrofacetModel, cos_nv):
    """Fixed-panel Gauss-Legendre version of :func:`microfacet.fgd_dpr` used when baking."""
    co = float(np.clip(cos_nv, 1e-6, 1.0))
    edges = np.array([0.0] + microfacet._lobe_points(model) + [0.5 * math.pi])
    # the ring limit has a kink where the mirrored view reaches the horizon
    so = math.sqrt(max(0.0, 1.0 - co * co))
    kink = 0.5 * (0.5 * math.pi - math.acos(co)) if so > 0 else 0.25 * math.pi
    edges = np.unique(np.append(edges, [kink, 0.5 * math.pi - kink if so > 0 else kink]))
    edges = edges[(edges >= 0) & (edges <= 0.5 * math.pi)]
    return _fgd_dpr_panels(K.KIND_ID[model.kind], model.alpha, co, edges, _TH_X, _TH_W, _PH_X, _PH_W)


# ---------------------------------------------------------------- fitting


def _frame(avg):
    z = np.array([avg[0], 0.0, avg[2]])
    nz = np.linalg.norm(z)
    z = z / nz if nz > 0 and np.all(np.isfinite(z)) else np.array([0.0, 0.0, 1.0])
    x = np.array([z[2], 0.0, -z[0]])
    return np.column_stack([x, [0.0, 1.0, 0.0], z])


def _matrix(basis, p, isotropic):
    if isotropic:
        m11, m22, m13 = p[0], p[0], 0.0
    else:
        m11, m22, m13 = p
    return basis @ np.array([[m11, 0.0, m13], [0.0, m22, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class FitResult:
    lobe: LTCLobe
    error: float
    start_error: float
    shape: tuple
    flagged: bool = False
    reason: str = ""


def _fit(model, cos_nv, target, norm, start, grid=FIT_GRID, iters=FIT_ITERS):
    kind = K.KIND_ID[model.kind]
    which = 0 if target == BRDF else 1
    co = float(np.clip(cos_nv, MIN_COS, 1.0))
    wo = np.array([math.sqrt(max(0.0, 1.0 - co * co)), 0.0, co])
    basis = _frame(_average_direction(kind, model.alpha, wo, which, grid))
    isotropic = co >= 1.0 - 1e-12

    def objective(p):
        m = _matrix(basis, p, isotropic)
        det = np.linalg.det(m)
        if not np.isfinite(det) or det <= 1e-14 or np.any(np.abs(p[:2]) < 1e-7):
            return 1e30
        minv = np.linalg.inv(m)
        return _fit_error(m, minv, abs(1.0 / det), kind, model.alpha, wo, which, norm, grid)

    x0 = np.array([start[0]] if isotropic else list(start), dtype=float)
    e0 = objective(x0)
    res = optimize.minimize(
        objective, x0, method="Nelder-Mead", options={"maxiter": iters, "xatol": 1e-6, "fatol": 1e-9}
    )
    p = res.x if res.fun <= e0 else x0
    err = min(res.fun, e0)
    shape = (p[0], p[0], 0.0) if isotropic else tuple(p)
    m = _matrix(basis, p, isotropic)
    flagged, reason = False, ""
    if not np.all(np.isfinite(m)) or not np.isfinite(err) or err >= 1e30:
        flagged, reason = True, "non-finite result"
    elif m[2, 2] <= 1e-9:
        flagged, reason = True, "negative scale"
    if flagged:
        return FitResult(LTCLobe.identity(target), float("inf"), e0, tuple(start), True, reason)
    lobe = LTCLobe(m / m[2, 2], target)
    return FitResult(lobe, float(err), float(e0), shape, False, "")


def fit_ltc(model: MicrofacetModel, cos_nv, target=BRDF, start=(1.0, 1.0, 0.0), norm=None) -> LTCLobe:
    """Fit the lobe minimizing an L2 error to the normalized target.

    ``target`` is :data:`BRDF` (BRDF times cosine with F = 1, divided by
    FGD) or :data:`NDF` (D mapped to incoming directions, divided by D_PR).
    ``start`` holds the (m11, m22, m13) shape parameters of the initial
    guess. Deterministic: the error uses a fixed stratified grid.
    """
    if norm is None:
        f, d = fast_fgd_dpr(model, max(float(cos_nv), MIN_COS))
        norm = f if target == BRDF else d
    res = _fit(model, cos_nv, target, norm, start)
    if res.flagged:
        raise RuntimeError(f"LTC fit failed: {res.reason}")
    return res.lobe


def fit_error(model: MicrofacetModel, cos_nv, lobe: LTCLobe, norm=None, grid=FIT_GRID):
    """L2 error of ``lobe`` against its normalized target (the fitting objective)."""
    which = 0 if lobe.target == BRDF else 1
    co = float(np.clip(cos_nv, MIN_COS, 1.0))
    if norm is None:
        f, d = fast_fgd_dpr(model, co)
        norm = f if which == 0 else d
    wo = np.array([math.sqrt(max(0.0, 1.0 - co * co)), 0.0, co])
    m = np.ascontiguousarray(lobe.m)
    minv = np.ascontiguousarray(lobe.minv)
    return _fit_error(m, minv, abs(np.linalg.det(minv)), K.KIND_ID[model.kind], model.alpha, wo, which, norm, grid)


# ---------------------------------------------------------------- table


def grid_alpha(x):
    return np.maximum(np.asarray(x, dtype=float) ** 2, MIN_ALPHA)


def grid_cos(y):
    return np.maximum(np.asarray(y, dtype=float) ** 2, MIN_COS)


@dataclass
class LTCTable:
    """Baked LTC parameters, FGD and D_PR on an (sqrt(alpha), sqrt(n.v)) grid.

    ``data`` has shape (N, N, 10) indexed ``[y, x]`` with x = sqrt(alpha)
    and y = sqrt(n.v), both sampled at i / (N - 1).
    """

    kind: str
    data: np.ndarray
    bake_log: list = field(default_factory=list, compare=False)
    flagged: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        n = self.data.shape[0]
        if self.data.shape != (n, n, RECORD) or n < 2:
            raise ValueError(f"bad table shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("table contains non-finite entries")
        self.data.setflags(write=False)

    @property
    def resolution(self):
        return self.data.shape[0]

    def lookup(self, alpha, cos_nv):
        """Bilinearly interpolated records, shape (..., 10); edges clamp."""
        n = self.resolution
        x = np.clip(np.sqrt(np.asarray(alpha, dtype=float)), 0.0, 1.0) * (n - 1)
        y = np.clip(np.sqrt(np.clip(np.asarray(cos_nv, dtype=float), 0.0, 1.0)), 0.0, 1.0) * (n - 1)
        x, y = np.broadcast_arrays(x, y)
        x0 = np.minimum(np.floor(x).astype(int), n - 2)
        y0 = np.minimum(np.floor(y).astype(int), n - 2)
        fx = (x - x0)[..., None]
        fy = (y - y0)[..., None]
        d = self.data
        return (1 - fy) * ((1 - fx) * d[y0, x0] + fx * d[y0, x0 + 1]) + fy * (
            (1 - fx) * d[y0 + 1, x0] + fx * d[y0 + 1, x0 + 1]
        )

    def lobe(self, alpha, cos_nv, target=BRDF):
        r = self.lookup(alpha, cos_nv)
        off = 0 if target == BRDF else 4
        return LTCLobe.from_params(*r[off : off + 4], target=target)

    def fgd(self, alpha, cos_nv):
        return self.lookup(alpha, cos_nv)[..., 8]

    def d_pr(self, alpha, cos_nv):
        return self.lookup(alpha, cos_nv)[..., 9]

    def model(self, alpha):
        return MicrofacetModel(self.kind, alpha)


def bake_table(model_kind=microfacet.GGX, resolution=64, iters=FIT_ITERS, grid=FIT_GRID, progress=None):
    """Fit BRDF and NDF lobes plus FGD and D_PR for every grid cell.

    Rows of constant view angle are processed from normal incidence toward
    grazing; within a row roughness decreases and each fit starts from the
    previous cell. The first cell of a row starts from the first cell of
    the row before. Failed fits are flagged, reported in ``bake_log`` and
    filled from the previously fitted neighbor.
    """
    kind = str(model_kind).lower()
    if resolution < 2:
        raise ValueError("table resolution must be at least 2")
    n = resolution
    data = np.zeros((n, n, RECORD))
    logs, flagged = [], []
    t0 = time.perf_counter()
    row_start = {BRDF: (1.0, 1.0, 0.0), NDF: (1.0, 1.0, 0.0)}
    for yi in range(n - 1, -1, -1):
        cos_nv = float(grid_cos(yi / (n - 1)))
        start = dict(row_start)
        prev = {}
        for xi in range(n - 1, -1, -1):
            model = MicrofacetModel(kind, float(grid_alpha(xi / (n - 1))))
            fgd_v, dpr_v = fast_fgd_dpr(model, cos_nv)
            data[yi, xi, 8] = fgd_v
            data[yi, xi, 9] = dpr_v
            for off, target, norm in ((0, BRDF, fgd_v), (4, NDF, dpr_v)):
                res = _fit(model, cos_nv, target, norm, start[target], grid=grid, iters=iters)
                if res.flagged:
                    flagged.append((xi, yi, target))
                    logs.append(f"cell x={xi} y={yi} {target}: {res.reason}, filled from neighbor")
                    params = prev.get(target, (1.0, 0.0, 1.0, 0.0))
                else:
                    params = res.lobe.params
                    start[target] = res.shape
                    prev[target] = params
                data[yi, xi, off : off + 4] = params
            if xi == n - 1:
                row_start = dict(start)
        if progress is not None:
            progress(n - yi, n)
    logs.append(f"baked {n}x{n} {kind} table in {time.perf_counter() - t0:.1f} s, {len(flagged)} flagged fits")
    for line in logs:
        log.info(line)
    return LTCTable(kind, data, logs, flagged)


def write_table(table: LTCTable, path):
    n = table.resolution
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IBI", FORMAT_VERSION, MODEL_IDS[table.kind], n))
        fh.write(table.data.astype("<f4").tobytes())


def read_table(path) -> LTCTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = 4 + struct.calcsize("<IBI")
    if len(blob) < head or blob[:4] != MAGIC:
        raise OSError(f"{path}: not a GLTB table (bad magic)")
    version, model_id, n = struct.unpack("<IBI", blob[4:head])
    if version != FORMAT_VERSION:
        raise OSError(f"{path}: unsupported table version {version}")
    kinds = {v: k for k, v in MODEL_IDS.items()}
    if model_id not in kinds:
        raise OSError(f"{path}: unknown model id {model_id}")
    expected = head + n * n * RECORD * 4
    if len(blob) != expected:
        raise OSError(f"{path}: truncated table ({len(blob)} bytes, expected {expected})")
    data = np.frombuffer(blob, dtype="<f4", offset=head).reshape(n, n, RECORD).astype(np.float64)
    return LTCTable(kinds[model_id], data)


def default_table_path(kind=microfacet.GGX):
    from importlib import resources

    return resources.files("glintlab") / "data" / f"{kind}_64.gltb"


def load_default_table(kind=microfacet.GGX) -> LTCTable:
    """The pre-baked resolution-64 table shipped with the package."""
    from importlib import resources

    with resources.as_file(default_table_path(kind)) as p:
        return read_table(p)


# ---------------------------------------------------------------- shading


def view_direction(cos_nv):
    c = float(np.clip(cos_nv, 0.0, 1.0))
    return np.array([math.sqrt(1.0 - c * c), 0.0, c])


def smooth_radiance_area(table: LTCTable, f0, radiance, poly, cos_nv, alpha):
    """Smooth reflected radiance from a constant-radiance polygonal light.

    ``poly`` is given in the local shading frame. Fresnel is a single
    Schlick term at the halfway vector between the view and the polygon's
    mean direction.
    """
    v = _vertices(poly)
    lobe = table.lobe(alpha, cos_nv, BRDF)
    frac = integrate_ltc_polygon(lobe, v)
    radiance = np.asarray(radiance, dtype=float)
    if frac == 0.0 or not np.any(radiance):
        return np.zeros(np.broadcast(radiance, np.asarray(f0, dtype=float)).shape)
    f_eff = effective_fresnel(f0, v, view_direction(cos_nv))
    return radiance * f_eff * float(table.fgd(alpha, cos_nv)) * frac


def effective_fresnel(f0, vertices, wo):
    mean = geom.normalize(geom.normalize(np.asarray(vertices, dtype=float)).sum(axis=0))
    h = geom.normalize(mean + np.asarray(wo, dtype=float))
    return microfacet.fresnel_schlick(f0, float(np.dot(h, wo)))


def integrated_ndf_area(table: LTCTable, poly, cos_nv, alpha, use_ndf_lobe=False):
    """LTC estimate of the integral of D(h) / (4 h.wi) over the light's directions."""
    lobe = table.lobe(alpha, cos_nv, NDF if use_ndf_lobe else BRDF)
    return float(table.d_pr(alpha, cos_nv)) * integrate_ltc_polygon(lobe, poly)
