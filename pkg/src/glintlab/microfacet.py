"""Continuous microfacet model: GGX / Beckmann NDFs, Smith masking, Schlick
Fresnel, the smooth BRDF and the scalar tables derived from them.

All functions work in the local shading frame (normal = +z) and broadcast
over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import geom

GGX = "ggx"
BECKMANN = "beckmann"
MODEL_KINDS = (GGX, BECKMANN)

# 128 nodes on [0, 1] for the azimuthal part of hemispherical quadrature
_GL_X, _GL_W = np.polynomial.legendre.leggauss(128)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


@dataclass(frozen=True)
class MicrofacetModel:
    """Isotropic microfacet distribution with roughness ``alpha`` in (0, 1]."""

    kind: str = GGX
    alpha: float = 0.25

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown microfacet model {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "alpha", float(self.alpha))

    @classmethod
    def from_roughness(cls, roughness, kind=GGX):
        """Build from perceptual roughness (alpha = roughness**2)."""
        return cls(kind, float(roughness) ** 2)

    @property
    def roughness(self):
        return math.sqrt(self.alpha)

    def with_alpha(self, alpha):
        return MicrofacetModel(self.kind, alpha)


def ndf_eval(model: MicrofacetModel, cos_nh):
    c = np.asarray(cos_nh, dtype=float)
    a2 = model.alpha * model.alpha
    pos = c > 0
    cc = np.where(pos, c, 1.0)
    c2 = cc * cc
    if model.kind == GGX:
        d = c2 * (a2 - 1.0) + 1.0
        val = a2 / (math.pi * d * d)
    else:
        tan2 = (1.0 - c2) / c2
        val = np.exp(-tan2 / a2) / (math.pi * a2 * c2 * c2)
    return np.where(pos, val, 0.0)


def smith_lambda(model: MicrofacetModel, cos_theta):
    c = np.clip(np.asarray(cos_theta, dtype=float), 1e-300, 1.0)
    tan2 = np.maximum(1.0 - c * c, 0.0) / (c * c)
    if model.kind == GGX:
        return 0.5 * (np.sqrt(1.0 + model.alpha**2 * tan2) - 1.0)
    tan = np.sqrt(tan2)
    flat = tan == 0
    a = 1.0 / (model.alpha * np.where(flat, 1.0, tan))
    lam = 0.5 * np.exp(-a * a) * (1.0 / (a * math.sqrt(math.pi)) - special.erfcx(a))
    return np.where(flat, 0.0, np.maximum(lam, 0.0))


def smith_g(model: MicrofacetModel, cos_nv, cos_nl):
    """Height-correlated Smith shadowing-masking; zero for non-positive cosines."""
    cv = np.asarray(cos_nv, dtype=float)
    cl = np.asarray(cos_nl, dtype=float)
    g = 1.0 / (1.0 + smith_lambda(model, cv) + smith_lambda(model, cl))
    return np.where((cv > 0) & (cl > 0), g, 0.0)


def fresnel_schlick(f0, cos_theta):
    """Schlick's approximation; ``f0`` may be a scalar or an rgb triple."""
    f0 = np.asarray(f0, dtype=float)
    c = np.clip(np.asarray(cos_theta, dtype=float), 0.0, 1.0)
    w = (1.0 - c) ** 5
    if f0.ndim:
        w = w[..., None]
    return f0 + (1.0 - f0) * w


def brdf_eval(model: MicrofacetModel, f0, wi, wo, n=(0.0, 0.0, 1.0)):
    """Smooth microfacet BRDF F*G*D / (4 (n.wo)(n.wi)).

    Returns an rgb array when ``f0`` is rgb. Directions below the horizon of
    ``n`` give zero.
    """
    wi = np.asarray(wi, dtype=float)
    wo = np.asarray(wo, dtype=float)
    n = np.asarray(n, dtype=float)
    ci = geom.dot(wi, n)
    co = geom.dot(wo, n)
    s = wi + wo
    sl = geom.norm(s)
    valid = (ci > 0) & (co > 0) & (sl > 1e-12)
    h = s / np.where(sl > 1e-12, sl, 1.0)[..., None]
    hv = geom.dot(h, wo)
    d = ndf_eval(model, geom.dot(h, n))
    g = smith_g(model, np.where(valid, co, 1.0), np.where(valid, ci, 1.0))
    g = np.where(hv > 0, g, 0.0)
    denom = 4.0 * np.where(valid, co * ci, 1.0)
    core = np.where(valid, g * d / denom, 0.0)
    f = fresnel_schlick(f0, hv)
    if np.ndim(f0):
        return f * core[..., None]
    return f * core


def total_microfacet_area(model: MicrofacetModel, exact=False):
    """Hemispherical integral of the NDF.

    GGX uses its closed form. Beckmann uses the quadratic fit by default and
    the erfc expression when ``exact`` is set.
    """
    a = model.alpha
    if model.kind == GGX:
        b2 = 1.0 - a * a
        if b2 <= 0.0:
            return 2.0
        b = math.sqrt(b2)
        if b < 1e-4:
            # atanh(b)/b = 1 + b^2/3 + O(b^4)
            return 1.0 + a * a * (1.0 + b2 / 3.0)
        return 1.0 + a * a * math.log((1.0 + b) / a) / b
    if exact:
        return beckmann_area_exact(a)
    return 1.0 + 0.466 * a - 0.091 * a * a


def beckmann_area_exact(alpha):
    # 1 + sqrt(pi)/2 * a * exp(1/a^2) * erfc(1/a), overflow-free via erfcx
    return 1.0 + 0.5 * math.sqrt(math.pi) * alpha * float(special.erfcx(1.0 / alpha))


def _ring_limit(theta, cos_o, sin_o):
    """Half-width of the azimuth range of half vectors whose mirror of wo stays above the horizon."""
    if sin_o < 1e-12:
        return np.where(theta < math.pi / 4, math.pi, 0.0)
    s2 = np.sin(2.0 * theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = -cos_o * np.cos(2.0 * theta) / (s2 * sin_o)
    c = np.where(s2 > 0, c, np.where(np.cos(2.0 * theta) > 0, -np.inf, np.inf))
    return np.arccos(np.clip(c, -1.0, 1.0))


def _lobe_points(model):
    w = math.atan(model.alpha)
    return sorted({min(k * w, 1.5) for k in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)})


def fgd_dpr(model: MicrofacetModel, cos_nv, epsrel=1e-8):
    """Directional albedo (F = 1) and potentially reflecting area for one view.

    Both are integrated over half vectors: adaptive Gauss-Kronrod in the
    polar angle, Gauss-Legendre over the admissible azimuth range.
    """
    cos_o = float(np.clip(cos_nv, 1e-6, 1.0))
    sin_o = math.sqrt(max(0.0, 1.0 - cos_o * cos_o))
    wo = np.array([sin_o, 0.0, cos_o])

    def integrand(theta):
        st, ct = math.sin(theta), math.cos(theta)
        dens = float(ndf_eval(model, ct)) * st
        pmax = float(_ring_limit(theta, cos_o, sin_o))
        if dens == 0.0 or pmax == 0.0:
            return np.zeros(2)
        phi = pmax * _GL_X
        h = np.stack([st * np.cos(phi), st * np.sin(phi), np.full_like(phi, ct)], axis=-1)
        hv = h @ wo
        cos_i = 2.0 * hv * ct - cos_o
        g = smith_g(model, cos_o, cos_i)
        ring = 2.0 * pmax * np.dot(_GL_W, g * hv) / cos_o
        return np.array([dens * ring, dens * 2.0 * pmax])

    val, _ = integrate.quad_vec(
        integrand, 0.0, math.pi / 2, epsabs=1e-12, epsrel=epsrel, points=_lobe_points(model), limit=400
    )
    return float(val[0]), float(val[1])


def fgd(model: MicrofacetModel, cos_nv):
    return fgd_dpr(model, cos_nv)[0]


def d_pr(model: MicrofacetModel, cos_nv):
    return fgd_dpr(model, cos_nv)[1]


def ndf_hemisphere_integral(model: MicrofacetModel, epsrel=1e-11):
    """Adaptive quadrature of the NDF over the hemisphere (independent of the closed forms)."""
    val, _ = integrate.quad(
        lambda t: 2.0 * math.pi * float(ndf_eval(model, math.cos(t))) * math.sin(t),
        0.0,
        math.pi / 2,
        epsabs=0.0,
        epsrel=epsrel,
        limit=500,
        points=_lobe_points(model),
    )
    return val


def _from_tan2(t, phi):
    c = 1.0 / np.sqrt(1.0 + t)
    s = np.sqrt(t / (1.0 + t))
    return np.stack([s * np.cos(phi), s * np.sin(phi), c], axis=-1)


def sample_ndf_cos(model: MicrofacetModel, u1, u2):
    """Map uniforms to half vectors with solid-angle density D(h) * cos(theta_h)."""
    u1 = np.asarray(u1, dtype=float)
    a2 = model.alpha**2
    if model.kind == GGX:
        t = a2 * u1 / np.maximum(1.0 - u1, 1e-300)
    else:
        t = -a2 * np.log1p(-np.minimum(u1, 1.0 - 1e-16))
    return _from_tan2(t, 2.0 * math.pi * np.asarray(u2, dtype=float))


def _sample_sin2(rng, m):
    """Angles on [0, pi/2) with density proportional to sin^2."""
    out = np.empty(0)
    while len(out) < m:
        k = 2 * (m - len(out)) + 16
        psi = 0.5 * math.pi * rng.random(k)
        out = np.concatenate([out, psi[rng.random(k) < np.sin(psi) ** 2]])
    return out[:m]


def sample_ndf(model: MicrofacetModel, rng: np.random.Generator, size: int):
    """Draw ``size`` half vectors with solid-angle density D(h) / D_H.

    Exact rejection sampling in t = tan^2(theta) with the envelope
    sqrt(1 + t) <= 1 + sqrt(t), which splits into two directly sampled
    components; acceptance is above 1/sqrt(2).
    """
    a = model.alpha
    a2 = a * a
    out = np.empty(size)
    filled = 0
    if model.kind == GGX:
        p_first = 1.0 / (1.0 + 0.5 * math.pi * a)
    else:
        p_first = 1.0 / (1.0 + 0.5 * math.sqrt(math.pi) * a)
    while filled < size:
        m = int((size - filled) * 1.5) + 16
        first = rng.random(m) < p_first
        t = np.empty(m)
        n1 = int(first.sum())
        if model.kind == GGX:
            u = rng.random(n1)
            t[first] = a2 * u / (1.0 - u)
            t[~first] = a2 * np.tan(_sample_sin2(rng, m - n1)) ** 2
        else:
            t[first] = a2 * rng.standard_exponential(n1)
            t[~first] = a2 * rng.gamma(1.5, 1.0, m - n1)
        keep = rng.random(m) * (1.0 + np.sqrt(t)) < np.sqrt(1.0 + t)
        t = t[keep & np.isfinite(t)]
        take = min(len(t), size - filled)
        out[filled : filled + take] = t[:take]
        filled += take
    phi = 2.0 * math.pi * rng.random(size)
    return _from_tan2(out, phi)
