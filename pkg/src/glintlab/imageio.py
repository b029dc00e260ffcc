"""PFM (linear float) and PPM (tonemapped 8-bit) image files."""

from __future__ import annotations

import numpy as np


def _check(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if np.any(img < 0):
        raise ValueError("image contains negative values")
    return img


def write_pfm(img, path):
    """Little-endian colour PFM; scanlines are stored bottom-up."""
    img = _check(img)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(np.flipud(img).astype("<f4")).tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        tokens = []
        while len(tokens) < 4:
            line = fh.readline()
            if not line:
                raise OSError(f"{path}: truncated PFM header")
            tokens += line.split()
        kind, w, h, scale = tokens[0], int(tokens[1]), int(tokens[2]), float(tokens[3])
        if kind not in (b"PF", b"Pf"):
            raise OSError(f"{path}: not a PFM file")
        channels = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise OSError(f"{path}: expected {w * h * channels} values, found {data.size}")
    img = np.flipud(data.reshape(h, w, channels)).astype(np.float32)
    return img if channels == 3 else img[..., 0]


def tonemap(img, exposure=1.0, enabled=True):
    """Exposure, Reinhard x / (1 + x) and gamma 1/2.2, quantized to 8 bits."""
    x = _check(img) * exposure
    if enabled:
        x = x / (1.0 + x)
    x = np.clip(x, 0.0, 1.0) ** (1.0 / 2.2)
    return np.round(x * 255.0).astype(np.uint8)


def write_ppm(img, path, exposure=1.0, enabled=True):
    q = tonemap(img, exposure, enabled)
    h, w, _ = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        tokens = []
        while len(tokens) < 4:
            line = fh.readline()
            if not line:
                raise OSError(f"{path}: truncated PPM header")
            tokens += line.split()
        if tokens[0] != b"P6":
            raise OSError(f"{path}: not a binary PPM")
        w, h = int(tokens[1]), int(tokens[2])
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    return data.reshape(h, w, 3)


def write_image(img, path, fmt=None, exposure=1.0, tonemap_enabled=True):
    fmt = fmt or str(path).rsplit(".", 1)[-1].lower()
    if fmt == "pfm":
        write_pfm(img, path)
    elif fmt == "ppm":
        write_ppm(img, path, exposure, tonemap_enabled)
    else:
        raise ValueError(f"unsupported image format {fmt!r} (pfm, ppm)")
