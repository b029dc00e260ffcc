"""Scene description: JSON schema, validation and the pinhole camera."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geom
from .glint import DirectionalCap, GlintSurface, PointBall, QuadLight
from .microfacet import MODEL_KINDS, MicrofacetModel

SCHEMA_VERSION = 1
MODES = ("smooth_ltc", "smooth_mc", "glint", "glint_baseline", "oracle")


class SceneError(ValueError):
    """Invalid scene document; the message starts with the offending field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Plane:
    """The z = center[2] plane; UVs span [0, 1] over a square of side ``size``.

    ``size`` None makes the plane unbounded (UVs keep the unit scale).
    """

    center: tuple = (0.0, 0.0, 0.0)
    size: float | None = 1.0

    @property
    def scale(self):
        return 1.0 if self.size is None else float(self.size)


@dataclass(frozen=True)
class Camera:
    position: tuple = (0.0, -2.0, 2.0)
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 0.0, 1.0)
    fov: float = 45.0
    width: int = 128
    height: int = 128

    def basis(self):
        pos = np.asarray(self.position, dtype=float)
        fwd = geom.normalize(np.asarray(self.look_at, dtype=float) - pos)
        right = np.cross(fwd, np.asarray(self.up, dtype=float))
        if np.linalg.norm(right) < 1e-9:
            raise geom.GeometryError("camera up vector is parallel to the view direction")
        right = geom.normalize(right)
        up = np.cross(right, fwd)
        return pos, fwd, right, up


@dataclass(frozen=True)
class RenderSettings:
    mode: str = "glint"
    spp: int = 64
    R: float | None = None
    exposure: float = 1.0
    tonemap: bool = True
    use_ndf_lobe: bool = False


@dataclass(frozen=True)
class Scene:
    surface: GlintSurface
    plane: Plane = Plane()
    camera: Camera = Camera()
    lights: tuple = field(default_factory=tuple)
    render: RenderSettings = RenderSettings()

    def __post_init__(self):
        if not self.lights:
            raise SceneError("lights", "at least one light is required")
        object.__setattr__(self, "lights", tuple(self.lights))

    def with_render(self, **kw):
        return replace(self, render=replace(self.render, **kw))

    def with_surface(self, **kw):
        return replace(self, surface=replace(self.surface, **kw))


@dataclass
class PixelGeometry:
    """Per-pixel plane intersections, flattened in row-major order (top row first)."""

    width: int
    height: int
    hit: np.ndarray
    position: np.ndarray
    wo: np.ndarray
    uv: np.ndarray
    duv_dx: np.ndarray
    duv_dy: np.ndarray


def pixel_geometry(camera: Camera, plane: Plane) -> PixelGeometry:
    """Intersect primary rays with the plane; UV derivatives come from
    differentiating the ray/plane intersection analytically."""
    pos, fwd, right, up = camera.basis()
    w, h = camera.width, camera.height
    tan_half = math.tan(0.5 * math.radians(camera.fov))
    aspect = w / h
    xs = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * tan_half * aspect
    ys = (1.0 - 2.0 * (np.arange(h) + 0.5) / h) * tan_half
    a, b = np.meshgrid(xs, ys)
    d = fwd + a.reshape(-1, 1) * right + b.reshape(-1, 1) * up
    dx = np.broadcast_to(2.0 * tan_half * aspect / w * right, d.shape)
    dy = np.broadcast_to(-2.0 * tan_half / h * up, d.shape)
    cz = float(plane.center[2])
    dz = d[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (cz - pos[2]) / dz
    hit = np.isfinite(t) & (t > 1e-9)
    t = np.where(hit, t, 0.0)
    p = pos + t[:, None] * d
    dz_safe = np.where(hit, dz, 1.0)[:, None]
    dpdx = t[:, None] * (dx - d * dx[:, 2:3] / dz_safe)
    dpdy = t[:, None] * (dy - d * dy[:, 2:3] / dz_safe)
    scale = plane.scale
    uv = (p[:, :2] - np.asarray(plane.center[:2], dtype=float)) / scale + 0.5
    if plane.size is not None:
        hit &= np.all((uv >= 0.0) & (uv <= 1.0), axis=1)
    wo = pos - p
    wo = wo / np.where(hit, np.linalg.norm(wo, axis=1), 1.0)[:, None]
    # the surface is only lit and seen from above
    hit &= wo[:, 2] > 0
    return PixelGeometry(w, h, hit, p, wo, uv, dpdx[:, :2] / scale, dpdy[:, :2] / scale)


# ---------------------------------------------------------------- parsing


def _get(d, key, path, default=...):
    if not isinstance(d, dict):
        raise SceneError(path, "expected an object")
    if key not in d:
        if default is ...:
            raise SceneError(f"{path}.{key}" if path else key, "missing required field")
        return default
    return d[key]


def _num(x, path, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise SceneError(path, f"expected a finite number, got {x!r}")
    if x < lo or x > hi or (lo_open and x == lo) or (hi_open and x == hi):
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise SceneError(path, f"must lie in {lb}{lo}, {hi}{rb}, got {x}")
    return float(x)


def _int(x, path, lo):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or x != int(x):
        raise SceneError(path, f"expected an integer, got {x!r}")
    return int(_num(x, path, lo))


def _vec(x, path, n=3):
    if not isinstance(x, (list, tuple)) or len(x) != n:
        raise SceneError(path, f"expected a list of {n} numbers")
    return tuple(_num(v, f"{path}[{i}]") for i, v in enumerate(x))


def _rgb(x, path, lo=0.0, hi=math.inf):
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        v = _num(x, path, lo, hi)
        return (v, v, v)
    vals = _vec(x, path)
    for i, v in enumerate(vals):
        _num(v, f"{path}[{i}]", lo, hi)
    return vals


def _surface(d, path="surface"):
    kind = _get(d, "model", path, "ggx")
    if kind not in MODEL_KINDS:
        raise SceneError(f"{path}.model", f"must be one of {MODEL_KINDS}")
    if "alpha" in d and "roughness" in d:
        raise SceneError(path, "give either roughness or alpha, not both")
    if "alpha" in d:
        alpha = _num(d["alpha"], f"{path}.alpha", 0.0, 1.0, lo_open=True)
    else:
        r = _num(_get(d, "roughness", path, 0.5), f"{path}.roughness", 0.0, 1.0, lo_open=True)
        alpha = r * r
    f0 = _rgb(_get(d, "f0", path, 0.04), f"{path}.f0", 0.0, 1.0)
    density = _num(_get(d, "density", path, 1e6), f"{path}.density", 0.0, lo_open=True)
    seed = _get(d, "seed", path, 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not -(2**63) <= seed < 2**63:
        raise SceneError(f"{path}.seed", "expected a 64-bit integer")
    pd = _get(d, "plane", path, {})
    center = _vec(_get(pd, "center", f"{path}.plane", [0.0, 0.0, 0.0]), f"{path}.plane.center")
    size = _get(pd, "size", f"{path}.plane", 1.0)
    if size is not None:
        size = _num(size, f"{path}.plane.size", 0.0, lo_open=True)
    return GlintSurface(MicrofacetModel(kind, alpha), f0, density, seed), Plane(center, size)


def _camera(d, path="camera"):
    c = Camera(
        position=_vec(_get(d, "position", path), f"{path}.position"),
        look_at=_vec(_get(d, "look_at", path, [0.0, 0.0, 0.0]), f"{path}.look_at"),
        up=_vec(_get(d, "up", path, [0.0, 0.0, 1.0]), f"{path}.up"),
        fov=_num(_get(d, "fov", path, 45.0), f"{path}.fov", 0.0, 180.0, True, True),
        width=_int(_get(d, "width", path, 128), f"{path}.width", 1),
        height=_int(_get(d, "height", path, 128), f"{path}.height", 1),
    )
    try:
        c.basis()
    except geom.GeometryError as e:
        raise SceneError(path, str(e)) from None
    return c


def _light(d, path):
    kind = _get(d, "type", path)
    try:
        if kind == "quad":
            radiance = _rgb(_get(d, "radiance", path, 1.0), f"{path}.radiance")
            if "vertices" in d:
                vs = _get(d, "vertices", path)
                if not isinstance(vs, list) or len(vs) != 4:
                    raise SceneError(f"{path}.vertices", "expected 4 vertices")
                quad = geom.Quad(np.array([_vec(v, f"{path}.vertices[{i}]") for i, v in enumerate(vs)]))
            else:
                center = _vec(_get(d, "center", path), f"{path}.center")
                size = _get(d, "size", path)
                if isinstance(size, list):
                    size = _vec(size, f"{path}.size", 2)
                    _num(min(size), f"{path}.size", 0.0, lo_open=True)
                else:
                    size = _num(size, f"{path}.size", 0.0, lo_open=True)
                quad = geom.Quad.rectangle(center, size, facing_down=_get(d, "facing_down", path, True))
            return QuadLight(quad, radiance)
        if kind == "directional":
            gamma = _num(_get(d, "gamma_deg", path), f"{path}.gamma_deg", 0.0, 90.0, True, True)
            return DirectionalCap(
                _vec(_get(d, "direction", path), f"{path}.direction"),
                math.radians(gamma),
                _rgb(_get(d, "irradiance", path, 1.0), f"{path}.irradiance"),
            )
        if kind == "point":
            return PointBall(
                _vec(_get(d, "position", path), f"{path}.position"),
                _num(_get(d, "radius", path), f"{path}.radius", 0.0, lo_open=True),
                _rgb(_get(d, "intensity", path, 1.0), f"{path}.intensity"),
            )
    except geom.GeometryError as e:
        raise SceneError(path, str(e)) from None
    raise SceneError(f"{path}.type", f"unknown light type {kind!r} (quad, directional, point)")


def _render(d, path="render"):
    mode = _get(d, "mode", path, "glint")
    if mode not in MODES:
        raise SceneError(f"{path}.mode", f"must be one of {MODES}")
    r = _get(d, "R", path, None)
    if r is not None:
        r = _num(r, f"{path}.R", 0.0, 1.0)
    tonemap = _get(d, "tonemap", path, True)
    ndf_lobe = _get(d, "use_ndf_lobe", path, False)
    for name, v in (("tonemap", tonemap), ("use_ndf_lobe", ndf_lobe)):
        if not isinstance(v, bool):
            raise SceneError(f"{path}.{name}", "expected true or false")
    return RenderSettings(
        mode=mode,
        spp=_int(_get(d, "spp", path, 64), f"{path}.spp", 1),
        R=r,
        exposure=_num(_get(d, "exposure", path, 1.0), f"{path}.exposure", 0.0),
        tonemap=tonemap,
        use_ndf_lobe=ndf_lobe,
    )


def scene_from_dict(doc) -> Scene:
    if not isinstance(doc, dict):
        raise SceneError("<root>", "expected a JSON object")
    version = _get(doc, "version", "")
    if version != SCHEMA_VERSION:
        raise SceneError("version", f"unsupported scene version {version!r} (expected {SCHEMA_VERSION})")
    surface, plane = _surface(_get(doc, "surface", ""))
    camera = _camera(_get(doc, "camera", ""))
    lights = _get(doc, "lights", "")
    if not isinstance(lights, list) or not lights:
        raise SceneError("lights", "expected a non-empty list")
    parsed = tuple(_light(x, f"lights[{i}]") for i, x in enumerate(lights))
    return Scene(surface, plane, camera, parsed, _render(_get(doc, "render", "", {})))


def load_scene(path) -> Scene:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SceneError("<root>", f"invalid JSON: {e}") from None
    return scene_from_dict(doc)


def default_scene_dict(light_size=5.0, width=128, height=128, mode="glint", roughness=0.5, density=1e8):
    """Plane under a square quad light at height 1, camera at about 45 degrees elevation."""
    return {
        "version": SCHEMA_VERSION,
        "surface": {
            "model": "ggx",
            "roughness": roughness,
            "f0": [0.9, 0.9, 0.9],
            "density": density,
            "seed": 1,
            "plane": {"center": [0.0, 0.0, 0.0], "size": 1.0},
        },
        "camera": {
            "position": [0.0, -1.6, 1.6],
            "look_at": [0.0, 0.0, 0.0],
            "up": [0.0, 0.0, 1.0],
            "fov": 40.0,
            "width": width,
            "height": height,
        },
        "lights": [{"type": "quad", "center": [0.0, 0.6, 1.0], "size": light_size, "radiance": [1.0, 1.0, 1.0]}],
        "render": {"mode": mode, "spp": 64, "exposure": 1.0, "tonemap": True},
    }
