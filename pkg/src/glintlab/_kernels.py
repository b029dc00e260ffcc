"""Scalar numba kernels shared by the fitting, counting and rendering paths.

Model kinds are passed as integers: 0 = GGX, 1 = Beckmann.
"""

import math

import numpy as np
from numba import njit

KIND_ID = {"ggx": 0, "beckmann": 1}

_SQRT_PI = math.sqrt(math.pi)


@njit(cache=True, nogil=True)
def ndf(kind, alpha, c):
    if c <= 0.0:
        return 0.0
    a2 = alpha * alpha
    c2 = c * c
    if kind == 0:
        d = c2 * (a2 - 1.0) + 1.0
        return a2 / (math.pi * d * d)
    tan2 = (1.0 - c2) / c2
    return math.exp(-tan2 / a2) / (math.pi * a2 * c2 * c2)


@njit(cache=True, nogil=True)
def smith_lambda(kind, alpha, c):
    if c >= 1.0:
        return 0.0
    if c < 1e-300:
        c = 1e-300
    tan2 = (1.0 - c * c) / (c * c)
    if kind == 0:
        return 0.5 * (math.sqrt(1.0 + alpha * alpha * tan2) - 1.0)
    a = 1.0 / (alpha * math.sqrt(tan2))
    if a > 25.0:
        return 0.0
    lam = 0.5 * (math.exp(-a * a) / (a * _SQRT_PI) - math.erfc(a))
    return max(lam, 0.0)


@njit(cache=True, nogil=True)
def smith_g(kind, alpha, co, ci):
    if co <= 0.0 or ci <= 0.0:
        return 0.0
    return 1.0 / (1.0 + smith_lambda(kind, alpha, co) + smith_lambda(kind, alpha, ci))


@njit(cache=True, nogil=True)
def total_area(kind, alpha):
    a = alpha
    if kind == 0:
        b2 = 1.0 - a * a
        if b2 <= 0.0:
            return 2.0
        b = math.sqrt(b2)
        if b < 1e-4:
            return 1.0 + a * a * (1.0 + b2 / 3.0)
        return 1.0 + a * a * math.log((1.0 + b) / a) / b
    return 1.0 + 0.466 * a - 0.091 * a * a


@njit(cache=True, nogil=True)
def schlick(f0, c):
    c = min(max(c, 0.0), 1.0)
    return f0 + (1.0 - f0) * (1.0 - c) ** 5


# ---------------------------------------------------------------- polygons


@njit(cache=True, nogil=True)
def clipped_cosine_integral(p, n):
    """Clamped-cosine integral (over pi) of a convex spherical polygon.

    ``p`` holds ``n`` (not necessarily unit) vertex directions; the polygon
    is clipped against z >= 0 before the edge integral. Orientation
    agnostic, result clamped to [0, 1].
    """
    buf = np.empty((2 * n, 3))
    m = 0
    for i in range(n):
        a = p[i]
        b = p[(i + 1) % n]
        if a[2] >= 0.0:
            buf[m, 0] = a[0]
            buf[m, 1] = a[1]
            buf[m, 2] = a[2]
            m += 1
        if (a[2] >= 0.0) != (b[2] >= 0.0):
            t = a[2] / (a[2] - b[2])
            buf[m, 0] = a[0] + t * (b[0] - a[0])
            buf[m, 1] = a[1] + t * (b[1] - a[1])
            buf[m, 2] = 0.0
            m += 1
    if m < 3:
        return 0.0
    s = 0.0
    for i in range(m):
        ax, ay, az = buf[i, 0], buf[i, 1], buf[i, 2]
        j = (i + 1) % m
        bx, by, bz = buf[j, 0], buf[j, 1], buf[j, 2]
        cx = ay * bz - az * by
        cy = az * bx - ax * bz
        cz = ax * by - ay * bx
        cl = math.sqrt(cx * cx + cy * cy + cz * cz)
        if cl < 1e-300:
            continue
        ang = math.atan2(cl, ax * bx + ay * by + az * bz)
        s += ang * cz / cl
    v = abs(s) / (2.0 * math.pi)
    return min(v, 1.0)


@njit(cache=True, nogil=True)
def ltc_polygon(minv, verts):
    """Integral of an LTC lobe (given by its inverse matrix) over a polygon."""
    n = verts.shape[0]
    p = np.empty((n, 3))
    for i in range(n):
        for r in range(3):
            p[i, r] = minv[r, 0] * verts[i, 0] + minv[r, 1] * verts[i, 1] + minv[r, 2] * verts[i, 2]
    return clipped_cosine_integral(p, n)


@njit(cache=True, nogil=True)
def inverse_params(a, b, c, d):
    """Inverse of [[a,0,b],[0,c,0],[d,0,1]] as a 3x3 array."""
    det = a - b * d
    out = np.zeros((3, 3))
    out[0, 0] = 1.0 / det
    out[0, 2] = -b / det
    out[1, 1] = 1.0 / c
    out[2, 0] = -d / det
    out[2, 2] = a / det
    return out
