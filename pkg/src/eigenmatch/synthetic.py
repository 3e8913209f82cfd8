"""Synthetic imagery and warps for benchmarks and self-checks.

Everything here is seeded and deterministic so that experiment scripts and
the test suite can reproduce results exactly.
"""

from __future__ import annotations

import numpy as np

from .features import GrayImage, resample_plane


def value_noise_texture(
    width: int, height: int, seed: int, octaves: int = 4, base_cells: int = 4
) -> GrayImage:
    """Multi-octave value noise, normalised into [0.05, 0.95].

    Coarse random lattices are bilinearly upsampled and summed with
    halving amplitudes; the result has structure at several scales, which
    gives patch descriptors something distinctive in every region.
    """
    rng = np.random.default_rng(seed)
    accum = np.zeros((height, width))
    amplitude = 1.0
    cells = base_cells
    for _ in range(octaves):
        cw = min(cells, width)
        ch = min(cells, height)
        lattice = rng.uniform(0.0, 1.0, size=(ch, cw, 1))
        accum += amplitude * resample_plane(lattice, width, height)[:, :, 0]
        amplitude /= 2.0
        cells *= 2
    lo, hi = accum.min(), accum.max()
    if hi - lo < 1e-12:
        pixels = np.full_like(accum, 0.5)
    else:
        pixels = 0.05 + 0.9 * (accum - lo) / (hi - lo)
    return GrayImage.from_array(pixels)


def random_homography(
    width: int,
    height: int,
    rng: np.random.Generator,
    max_rotation_deg: float = 6.0,
    scale_range: tuple[float, float] = (0.92, 1.08),
    max_translation: float = 10.0,
    max_perspective: float = 5e-4,
) -> np.ndarray:
    """Similarity about the image centre plus bounded perspective terms."""
    angle = np.deg2rad(rng.uniform(-max_rotation_deg, max_rotation_deg))
    scale = rng.uniform(*scale_range)
    tx, ty = rng.uniform(-max_translation, max_translation, size=2)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0

    c, s = scale * np.cos(angle), scale * np.sin(angle)
    similarity = np.array(
        [
            [c, -s, cx - c * cx + s * cy + tx],
            [s, c, cy - s * cx - c * cy + ty],
            [0.0, 0.0, 1.0],
        ]
    )
    similarity[2, 0] = rng.uniform(-max_perspective, max_perspective)
    similarity[2, 1] = rng.uniform(-max_perspective, max_perspective)
    return similarity


def warp_image(
    image: GrayImage,
    h_matrix: np.ndarray,
    out_width: int | None = None,
    out_height: int | None = None,
) -> GrayImage:
    """Forward-warp an image: output pixel p gets I(H^{-1} p), bilinear
    sampled with edge clamping (pixel-center convention)."""
    out_w = out_width or image.width
    out_h = out_height or image.height
    hinv = np.linalg.inv(np.asarray(h_matrix, dtype=np.float64))

    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64), np.arange(out_h, dtype=np.float64))
    denom = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / denom
    sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / denom

    sx = np.clip(sx, 0.0, image.width - 1.0)
    sy = np.clip(sy, 0.0, image.height - 1.0)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, image.width - 1)
    y1 = np.minimum(y0 + 1, image.height - 1)
    fx = sx - x0
    fy = sy - y0

    px = image.pixels
    top = px[y0, x0] * (1 - fx) + px[y0, x1] * fx
    bottom = px[y1, x0] * (1 - fx) + px[y1, x1] * fx
    return GrayImage.from_array(top * (1 - fy) + bottom * fy)


def photometric_jitter(
    image: GrayImage,
    rng: np.random.Generator,
    contrast_range: tuple[float, float] = (0.85, 1.15),
    max_brightness: float = 0.08,
) -> GrayImage:
    """Random contrast about mid-gray plus a brightness offset, clipped."""
    contrast = rng.uniform(*contrast_range)
    brightness = rng.uniform(-max_brightness, max_brightness)
    pixels = np.clip(contrast * (image.pixels - 0.5) + 0.5 + brightness, 0.0, 1.0)
    return GrayImage.from_array(pixels)


def interior_grid_points(
    width: int, height: int, per_side: int = 6, margin: float = 20.0
) -> np.ndarray:
    """Regular (per_side x per_side) lattice of keypoints inside a margin."""
    xs = np.linspace(margin, width - 1 - margin, per_side)
    ys = np.linspace(margin, height - 1 - margin, per_side)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])
