"""Ground-truth oracles: Monte-Carlo integrals of the smooth radiance and of
the integrated NDF, explicit discrete-microfacet simulation and the
expectation of the discrete NDF over a cap.

Every estimator returns its standard error so comparisons can be z-tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import geom, microfacet
from .microfacet import MicrofacetModel

_Z = np.array([0.0, 0.0, 1.0])
_CHUNK = 1 << 18


@dataclass(frozen=True)
class McEstimate:
    mean: np.ndarray | float
    std_error: np.ndarray | float
    sample_count: int

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValueError("an estimate needs at least one sample")
        if np.any(np.asarray(self.std_error) < 0):
            raise ValueError("standard error must be non-negative")

    def z_score(self, value, extra_se=0.0):
        se = np.sqrt(np.asarray(self.std_error) ** 2 + np.asarray(extra_se) ** 2)
        diff = np.asarray(self.mean) - np.asarray(value)
        return np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff == 0, 0.0, np.inf))


class _Moments:
    """Streaming sums for mean and standard error (pairwise within chunks)."""

    def __init__(self, shape=()):
        self.s1 = np.zeros(shape)
        self.s2 = np.zeros(shape)
        self.n = 0

    def add(self, x):
        self.s1 = self.s1 + np.sum(x, axis=0)
        self.s2 = self.s2 + np.sum(x * x, axis=0)
        self.n += len(x)

    def estimate(self):
        mean = self.s1 / self.n
        var = np.maximum(self.s2 / self.n - mean * mean, 0.0)
        se = np.sqrt(var / max(self.n - 1, 1))
        if np.ndim(mean) == 0:
            return McEstimate(float(mean), float(se), self.n)
        return McEstimate(mean, se, self.n)


def _chunks(n):
    while n > 0:
        m = min(n, _CHUNK)
        yield m
        n -= m


def _quad_samples(quad: geom.Quad, point, rng, m):
    """Directions toward area-uniform points on the quad and the solid-angle weight."""
    y = quad.sample(rng.random((m, 2)))
    d = y - point
    dist2 = geom.dot(d, d)
    wi = d / np.sqrt(dist2)[:, None]
    cos_l = -geom.dot(wi, quad.normal)
    weight = np.where(cos_l > 0, cos_l * quad.area / dist2, 0.0)
    return wi, weight


def mc_radiance_area(surface, light, point, wo, n_samples, rng, normal=(0.0, 0.0, 1.0)):
    """Estimate L_i times the integral of f_r (n.wi) over the light's solid angle.

    ``light`` is a :class:`~glintlab.glint.QuadLight`; directions are in
    world space. Sampling is area uniform on the light quad.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    point = np.asarray(point, dtype=float)
    normal = np.asarray(normal, dtype=float)
    radiance = np.asarray(light.radiance, dtype=float)
    acc = _Moments(radiance.shape)
    for m in _chunks(n_samples):
        wi, weight = _quad_samples(light.quad, point, rng, m)
        f = microfacet.brdf_eval(surface.model, surface.f0, wi, np.broadcast_to(wo, wi.shape), normal)
        cos_i = np.maximum(geom.dot(wi, normal), 0.0)
        acc.add(f * (cos_i * weight)[:, None] * radiance)
    return acc.estimate()


def _ndf_integrand(model, wi, wo, normal):
    h_raw = wi + wo
    hl = geom.norm(h_raw)
    ok = (hl > 1e-12) & (geom.dot(wi, normal) > 0)
    h = h_raw / np.where(ok, hl, 1.0)[:, None]
    hw = geom.dot(h, wi)
    d = microfacet.ndf_eval(model, geom.dot(h, normal))
    return np.where(ok & (hw > 0), d / (4.0 * np.where(hw > 0, hw, 1.0)), 0.0)


def _uniform_hemisphere(rng, m):
    u = rng.random((m, 2))
    z = u[:, 0]
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * u[:, 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def mc_integrated_ndf(model: MicrofacetModel, poly, wo, n_samples, rng, point=None, normal=(0.0, 0.0, 1.0)):
    """Estimate the integral of D(h) / (4 h.wi) over the light's directions.

    ``poly`` is either a :class:`~glintlab.geom.Quad` seen from ``point``
    (area sampling) or a :class:`~glintlab.geom.SphericalPolygon` of
    directions (uniform hemisphere sampling with membership tests).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    wo = np.asarray(wo, dtype=float)
    normal = np.asarray(normal, dtype=float)
    acc = _Moments()
    for m in _chunks(n_samples):
        if isinstance(poly, geom.Quad):
            wi, weight = _quad_samples(poly, np.asarray(point, dtype=float), rng, m)
        else:
            if np.any(normal != _Z):
                raise ValueError("spherical polygons are sampled in the local frame (normal = +z)")
            wi = _uniform_hemisphere(rng, m)
            weight = np.where(geom.contains(poly, wi), 2.0 * math.pi, 0.0)
        acc.add(weight * _ndf_integrand(model, wi, wo, normal))
    return acc.estimate()


def _inside(poly, wi, point):
    if isinstance(poly, geom.Quad):
        return geom.contains(poly.spherical_polygon(point), wi)
    return geom.contains(poly, wi)


def discrete_oracle_count(model: MicrofacetModel, n, poly, wo, rng, point=None) -> int:
    """Explicitly draw ``n`` microfacet normals and count those reflecting
    the view direction into the light (local frame, normal = +z)."""
    if n < 0:
        raise ValueError("microfacet count must be non-negative")
    wo = np.asarray(wo, dtype=float)
    k = 0
    for m in _chunks(int(n)):
        h = microfacet.sample_ndf(model, rng, m)
        facing = geom.dot(h, wo) > 0
        wi = geom.reflect(np.broadcast_to(wo, h.shape), h)
        hit = facing & (wi[:, 2] > 0) & _inside(poly, wi, point)
        k += int(np.count_nonzero(hit))
    return k


def cap_ndf_integral(model: MicrofacetModel, cap: geom.SphericalCap, epsrel=1e-10):
    """Quadrature of the NDF over the orientations inside a cap."""
    gamma = cap.half_angle
    if gamma == 0:
        return 0.0
    ta = math.acos(np.clip(cap.axis[2], -1.0, 1.0))
    cg = math.cos(gamma)

    def width(t):
        st = math.sin(t)
        if ta < 1e-12 or st < 1e-15:
            return 2.0 * math.pi if math.cos(t - ta) >= cg else 0.0
        c = (cg - math.cos(t) * math.cos(ta)) / (st * math.sin(ta))
        return 2.0 * math.acos(min(max(c, -1.0), 1.0))

    lo = max(0.0, ta - gamma)
    hi = min(0.5 * math.pi, ta + gamma)
    if lo >= hi:
        return 0.0
    pts = [p for p in (abs(ta - gamma), gamma - ta, ta) if lo < p < hi]
    val, _ = integrate.quad(
        lambda t: float(microfacet.ndf_eval(model, math.cos(t))) * math.sin(t) * width(t),
        lo,
        hi,
        points=pts or None,
        epsabs=0.0,
        epsrel=epsrel,
        limit=400,
    )
    return val


def expected_discrete_ndf_cap(model: MicrofacetModel, n, cap: geom.SphericalCap, trials, rng) -> McEstimate:
    """Average over trials of D_H / n times the number of sampled normals in the cap."""
    if trials < 1:
        raise ValueError("trials must be positive")
    dh = microfacet.total_microfacet_area(model, exact=True)
    acc = _Moments()
    per_chunk = max(1, _CHUNK // max(int(n), 1))
    done = 0
    while done < trials:
        t = min(per_chunk, trials - done)
        if n == 0:
            acc.add(np.zeros(t))
        else:
            h = microfacet.sample_ndf(model, rng, t * int(n))
            hits = cap.contains(h).reshape(t, int(n)).sum(axis=1)
            acc.add(dh * hits / n)
        done += t
    return acc.estimate()
