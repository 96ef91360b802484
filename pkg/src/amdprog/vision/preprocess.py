"""Field-of-view circle detection, square crop and bilinear resize.

Images are float arrays of shape (H, W, 3) in [0, 1]. Geometry uses
continuous pixel coordinates: pixel ``i`` spans ``[i, i + 1)`` so its centre
is at ``i + 0.5``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FieldCircle:
    center_x: float
    center_y: float
    radius: float


def load_png(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_png(img: np.ndarray, path: str | Path) -> None:
    PILImage.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if min(img.shape[:2]) < 16:
        raise ValueError(f"image too small: {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image has non-finite pixels")


def _boundary_points(mask: np.ndarray) -> np.ndarray:
    """Left/right edges of every foreground row and top/bottom edges of every column.

    Extents that touch the image border are dropped: they lie on the crop, not
    on the circle.
    """
    h, w = mask.shape
    rows = np.flatnonzero(mask.any(axis=1))
    first = np.argmax(mask[rows], axis=1)
    last = w - 1 - np.argmax(mask[rows, ::-1], axis=1)
    cols = np.flatnonzero(mask.any(axis=0))
    top = np.argmax(mask[:, cols], axis=0)
    bottom = h - 1 - np.argmax(mask[::-1, cols], axis=0)
    parts = [
        np.column_stack([first, rows + 0.5])[first > 0],
        np.column_stack([last + 1.0, rows + 0.5])[last < w - 1],
        np.column_stack([cols + 0.5, top])[top > 0],
        np.column_stack([cols + 0.5, bottom + 1.0])[bottom < h - 1],
    ]
    return np.concatenate(parts).astype(float).reshape(-1, 2)


def fit_circle(pts: np.ndarray) -> tuple[float, float, float, float]:
    """Algebraic least-squares circle fit. Returns (cx, cy, r, rms radial residual)."""
    x, y = pts[:, 0], pts[:, 1]
    A = np.column_stack([x, y, np.ones_like(x)])
    b = x * x + y * y
    (p, q, s), *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = p / 2.0, q / 2.0
    r2 = s + cx * cx + cy * cy
    if r2 <= 0:
        return cx, cy, 0.0, np.inf
    r = float(np.sqrt(r2))
    resid = np.hypot(x - cx, y - cy) - r
    return float(cx), float(cy), r, float(np.sqrt(np.mean(resid**2)))


def detect_field_circle(img: np.ndarray, luminance_threshold: float = 0.05,
                        max_rel_residual: float = 0.03, min_coverage: float = 0.10) -> FieldCircle | None:
    """Find the circular field of view, or ``None`` when it cannot be found."""
    check_image(img)
    mask = img @ LUMA > luminance_threshold
    if mask.mean() < min_coverage:
        return None
    pts = _boundary_points(mask)
    if len(pts) < 8:
        return None
    cx, cy, r, rms = fit_circle(pts)
    h, w = mask.shape
    if r <= 0 or rms > max_rel_residual * r or r < 0.25 * min(h, w):
        return None
    if cx + r < 0 or cx - r > w or cy + r < 0 or cy - r > h:
        return None
    return FieldCircle(cx, cy, r)


def _resample_matrix(start: float, length: float, out_size: int, in_size: int) -> np.ndarray:
    """Bilinear weights mapping ``in_size`` source pixels onto ``out_size`` samples.

    Source samples outside the image contribute zero (black padding).
    """
    scale = length / out_size
    src = start + (np.arange(out_size) + 0.5) * scale - 0.5
    i0 = np.floor(src).astype(int)
    frac = src - i0
    m = np.zeros((out_size, in_size))
    for idx, wt in ((i0, 1.0 - frac), (i0 + 1, frac)):
        ok = (idx >= 0) & (idx < in_size)
        np.add.at(m, (np.flatnonzero(ok), idx[ok]), wt[ok])
    return m


def crop_resize(img: np.ndarray, circle: FieldCircle, out_size: int = 587) -> np.ndarray:
    """Crop the circle's bounding square (black where it overhangs) and resize to ``out_size``."""
    check_image(img)
    h, w = img.shape[:2]
    if not circle.radius >= 0.25 * min(h, w):
        raise ValueError(f"degenerate circle radius {circle.radius} for {w}x{h} image")
    side = 2.0 * circle.radius
    ry = _resample_matrix(circle.center_y - circle.radius, side, out_size, h)
    rx = _resample_matrix(circle.center_x - circle.radius, side, out_size, w)
    rows = np.tensordot(ry, img, axes=(1, 0))  # (out, w, c)
    return np.einsum("owc,pw->opc", rows, rx)


def preprocess(img: np.ndarray, out_size: int, luminance_threshold: float = 0.05) -> np.ndarray | None:
    circle = detect_field_circle(img, luminance_threshold)
    if circle is None:
        return None
    return crop_resize(img, circle, out_size)
