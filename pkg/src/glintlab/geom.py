"""Spherical geometry: directions, frames, spherical polygons and caps.

Vectors are numpy arrays whose last axis has length 3; most helpers
broadcast over leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-9
# boundary slack for membership tests; edge midpoints are exactly on the arc
_EDGE_EPS = 1e-12


class GeometryError(ValueError):
    """Raised for inputs outside an operation's geometric domain."""


def dot(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def norm(v):
    return np.sqrt(dot(v, v))


def normalize(v):
    v = np.asarray(v, dtype=float)
    n = norm(v)
    if np.any(n == 0):
        raise GeometryError("cannot normalize a zero vector")
    return v / n[..., None] if v.ndim > 1 else v / n


def unit(x, y, z):
    """Build a unit vector and check it really is unit length."""
    v = np.array([x, y, z], dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise GeometryError(f"not a unit vector: {v}")
    return v


def spherical_direction(theta, phi=0.0):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta) * np.ones_like(st)], axis=-1)


def halfway(wi, wo):
    """Normalized sum of two directions."""
    s = np.asarray(wi, dtype=float) + np.asarray(wo, dtype=float)
    n = norm(s)
    if np.any(n < 1e-12):
        raise GeometryError("halfway vector undefined for antipodal directions")
    return s / (n[..., None] if s.ndim > 1 else n)


def reflect(w, m):
    """Mirror ``w`` about the microfacet normal ``m``."""
    w = np.asarray(w, dtype=float)
    m = np.asarray(m, dtype=float)
    return 2.0 * dot(w, m)[..., None] * m - w


def shading_frame(n, wo):
    """Orthonormal frame (t, b, n) with ``wo`` in the t/n plane.

    Returns an array of shape (..., 3, 3) whose rows are the frame axes, so
    ``frame @ v`` expresses a world vector in local coordinates. At normal
    incidence the tangent falls back to a fixed axis.
    """
    n = np.asarray(n, dtype=float)
    wo = np.asarray(wo, dtype=float)
    n, wo = np.broadcast_arrays(n, wo)
    t = wo - dot(wo, n)[..., None] * n
    tl = norm(t)
    fallback = np.where(np.abs(n[..., :1]) < 0.9, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    fb = fallback - dot(fallback, n)[..., None] * n
    degenerate = (tl < 1e-9)[..., None]
    t = np.where(degenerate, fb, t)
    t = t / norm(t)[..., None]
    b = np.cross(n, t)
    return np.stack([t, b, n], axis=-2)


def cap_solid_angle(gamma):
    """Solid angle of a spherical cap with half-angle ``gamma`` (radians)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0) or np.any(g > math.pi / 2 + 1e-12):
        raise GeometryError(f"cap half-angle must lie in [0, pi/2], got {gamma}")
    # 2*pi*(1 - cos g) without cancellation at small angles
    out = 4.0 * math.pi * np.sin(0.5 * g) ** 2
    return float(out) if out.ndim == 0 else out


def _dedupe(vertices, tol=1e-12):
    keep = []
    n = len(vertices)
    for i in range(n):
        if np.linalg.norm(vertices[i] - vertices[(i + 1) % n]) > tol:
            keep.append(vertices[i])
    return np.array(keep).reshape(-1, 3)


def _edge_normals(v):
    """Inward great-circle normals for a counter-clockwise (from center) polygon."""
    return np.cross(np.roll(v, -1, axis=0), v)


@dataclass(frozen=True)
class SphericalPolygon:
    """Convex spherical polygon given by its unit vertex directions.

    Vertices are stored counter-clockwise as seen from the sphere center
    looking along the polygon's mean direction; input in the opposite order
    is reversed. When the mean direction is undefined (e.g. four points on
    a great circle describing a hemisphere) the given order is kept and
    defines which side is the interior.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 3:
            raise GeometryError("a spherical polygon needs at least 3 vertices")
        v = normalize(v)
        nxt = np.roll(v, -1, axis=0)
        if np.any(norm(v - nxt) < 1e-12):
            raise GeometryError("consecutive vertices are identical")
        if np.any(norm(v + nxt) < 1e-12):
            raise GeometryError("consecutive vertices are antipodal")
        mean = v.sum(axis=0)
        if np.linalg.norm(mean) > 1e-9:
            turn = np.sum(dot(np.cross(v, nxt), mean))
            if turn > 0:
                v = v[::-1].copy()
        normals = _edge_normals(v)
        # every vertex must sit on the inner side of every edge
        side = v @ normals.T
        if np.any(side < -1e-9):
            raise GeometryError("spherical polygon is not convex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)

    @property
    def mean_direction(self):
        return normalize(self.vertices.sum(axis=0))

    def rotated(self, shift):
        return SphericalPolygon(np.roll(self.vertices, shift, axis=0))

    def contains(self, d):
        return contains(self, d)


@dataclass(frozen=True)
class SphericalCap:
    axis: np.ndarray
    half_angle: float

    def __post_init__(self):
        if not 0.0 <= self.half_angle <= math.pi / 2 + 1e-12:
            raise GeometryError("cap half-angle must lie in [0, pi/2]")
        a = normalize(np.asarray(self.axis, dtype=float))
        a.setflags(write=False)
        object.__setattr__(self, "axis", a)

    @property
    def solid_angle(self):
        return cap_solid_angle(self.half_angle)

    def contains(self, d):
        d = np.asarray(d, dtype=float)
        return dot(d, self.axis) >= math.cos(self.half_angle) - _EDGE_EPS


def polygon_solid_angle(poly) -> float:
    """Spherical excess (Girard) of a convex spherical polygon.

    Accepts a :class:`SphericalPolygon` or a raw vertex array; raw input
    with collapsed (repeated) vertices that leaves fewer than three distinct
    corners has zero area.
    """
    if isinstance(poly, SphericalPolygon):
        v = poly.vertices
    else:
        v = _dedupe(normalize(np.asarray(poly, dtype=float)))
        if len(v) < 3:
            return 0.0
    n = len(v)
    prev = np.roll(v, 1, axis=0)
    nxt = np.roll(v, -1, axis=0)
    t1 = prev - dot(prev, v)[:, None] * v
    t2 = nxt - dot(nxt, v)[:, None] * v
    l1, l2 = norm(t1), norm(t2)
    if np.any(l1 < 1e-15) or np.any(l2 < 1e-15):
        return 0.0
    angles = np.arctan2(norm(np.cross(t1, t2)), dot(t1, t2))
    excess = float(np.sum(angles) - (n - 2) * math.pi)
    return max(excess, 0.0)


def contains(poly: SphericalPolygon, d) -> np.ndarray | bool:
    """Boundary-inclusive point-in-polygon test for unit directions ``d``."""
    d = np.asarray(d, dtype=float)
    normals = _edge_normals(poly.vertices)
    inside = np.all(d @ normals.T >= -_EDGE_EPS, axis=-1)
    return inside if inside.ndim else bool(inside)


@dataclass(frozen=True)
class Quad:
    """Planar convex quadrilateral in 3D (an area light's emitting surface).

    The emitting side is the one the right-handed vertex normal points to.
    """

    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.shape != (4, 3):
            raise GeometryError("a quad needs exactly 4 vertices in 3D")
        nrm = self._newell(v)
        if np.linalg.norm(nrm) < 1e-14:
            raise GeometryError("degenerate quad")
        unit_n = nrm / np.linalg.norm(nrm)
        if np.max(np.abs((v - v.mean(axis=0)) @ unit_n)) > 1e-9 * (1 + np.abs(v).max()):
            raise GeometryError("quad vertices are not coplanar")
        turns = np.cross(np.roll(v, -1, axis=0) - v, np.roll(v, -2, axis=0) - np.roll(v, -1, axis=0)) @ unit_n
        if np.any(turns < -1e-12):
            raise GeometryError("quad is not convex")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @staticmethod
    def _newell(v):
        return 0.5 * np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)

    @classmethod
    def rectangle(cls, center, size, height=None, facing_down=True):
        """Axis-aligned rectangle in a z = const plane, emitting downwards by default."""
        cx, cy = center[0], center[1]
        cz = center[2] if height is None else height
        sx, sy = (size, size) if np.isscalar(size) else size
        hx, hy = 0.5 * sx, 0.5 * sy
        v = np.array(
            [[cx - hx, cy - hy, cz], [cx + hx, cy - hy, cz], [cx + hx, cy + hy, cz], [cx - hx, cy + hy, cz]]
        )
        return cls(v[::-1] if facing_down else v)

    @property
    def normal(self):
        n = self._newell(self.vertices)
        return n / np.linalg.norm(n)

    @property
    def area(self):
        return float(np.linalg.norm(self._newell(self.vertices)))

    @property
    def center(self):
        return self.vertices.mean(axis=0)

    def translated(self, offset):
        return Quad(self.vertices + np.asarray(offset, dtype=float))

    def faces(self, point):
        """True where ``point`` lies strictly on the emitting side."""
        return dot(np.asarray(point, dtype=float) - self.vertices[0], self.normal) > 0

    def sample(self, u):
        """Area-uniform points for ``u`` of shape (..., 2); exact for parallelograms.

        General convex quads are split into two triangles sampled in
        proportion to their areas.
        """
        u = np.asarray(u, dtype=float)
        a, b, c, d = self.vertices
        a1 = 0.5 * np.linalg.norm(np.cross(b - a, c - a))
        a2 = 0.5 * np.linalg.norm(np.cross(c - a, d - a))
        f = a1 / (a1 + a2)
        first = u[..., 0] < f
        u0 = np.where(first, u[..., 0] / f, (u[..., 0] - f) / (1 - f))
        su = np.sqrt(u0)
        w1 = (1 - su)[..., None]
        w2 = (su * (1 - u[..., 1]))[..., None]
        w3 = (su * u[..., 1])[..., None]
        p1 = w1 * a + w2 * b + w3 * c
        p2 = w1 * a + w2 * c + w3 * d
        return np.where(first[..., None], p1, p2)

    def subdivide(self, nx, ny=None):
        """Split into ``nx * ny`` sub-quads by bilinear interpolation of the corners."""
        ny = nx if ny is None else ny
        a, b, c, d = self.vertices

        def at(s, t):
            return (1 - s) * (1 - t) * a + s * (1 - t) * b + s * t * c + (1 - s) * t * d

        out = []
        for j in range(ny):
            for i in range(nx):
                s0, s1 = i / nx, (i + 1) / nx
                t0, t1 = j / ny, (j + 1) / ny
                out.append(Quad(np.array([at(s0, t0), at(s1, t0), at(s1, t1), at(s0, t1)])))
        return out

    def spherical_polygon(self, origin=(0.0, 0.0, 0.0)):
        return SphericalPolygon(self.vertices - np.asarray(origin, dtype=float))
