"""Dense feature grids and their interchange format.

A feature grid holds one descriptor vector per cell of a regular grid laid
over a source image.  Grids are the hand-off point between feature sources
(the built-in patch descriptor below, or an external CNN exporter) and the
spectral matching pipeline, so they carry their own binary format:

FGRD format (little-endian throughout)
    bytes 0-3   magic ``FGRD``
    byte  4     version (=1)
    bytes 5-7   reserved, zero
    4 x uint32  grid_width, grid_height, channels, image_id_length
    ...         image_id_length bytes of UTF-8 id
    2 x uint32  source_image_width, source_image_height
    payload     grid_width * grid_height * channels float32 values,
                row-major in (row, column, channel) order

Pixel coordinates follow the pixel-center convention: pixel (ix, iy) is
centred at continuous coordinates (ix, iy), so the image domain is
[-0.5, width-0.5] x [-0.5, height-0.5].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, TruncationError, ValidationError

FGRD_MAGIC = b"FGRD"
FGRD_VERSION = 1


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GrayImage:
    """Grayscale image with intensities in [0, 1], pixels row-major."""

    width: int
    height: int
    pixels: np.ndarray  # shape (height, width), float64

    def __post_init__(self):
        px = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.float64))
        if px.shape != (self.height, self.width):
            raise ValidationError(
                f"pixel array shape {px.shape} does not match "
                f"declared {self.height}x{self.width}"
            )
        if self.width < 1 or self.height < 1:
            raise ValidationError("image dimensions must be >= 1")
        if not np.all(np.isfinite(px)):
            raise ValidationError("image contains non-finite pixels")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _freeze(px))

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "GrayImage":
        pixels = np.asarray(pixels, dtype=np.float64)
        h, w = pixels.shape
        return cls(width=w, height=h, pixels=pixels)


@dataclass(frozen=True)
class FeatureGrid:
    """Per-cell descriptor field over a grid_height x grid_width grid.

    ``values`` has shape (grid_height, grid_width, channels).  An optional
    ``degenerate_mask`` marks cells that were zeroed because their original
    descriptor norm fell below the normalisation epsilon; the mask is not
    part of the binary format.
    """

    grid_width: int
    grid_height: int
    channels: int
    values: np.ndarray
    source_image_width: int
    source_image_height: int
    image_id: str = ""
    degenerate_mask: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.grid_width < 1 or self.grid_height < 1 or self.channels < 1:
            raise ValidationError("grid dimensions and channels must be >= 1")
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        expected = (self.grid_height, self.grid_width, self.channels)
        if vals.shape != expected:
            raise ValidationError(
                f"values shape {vals.shape} does not match declared {expected}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValidationError("feature grid contains non-finite values")
        if self.source_image_width < 1 or self.source_image_height < 1:
            raise ValidationError("source image dimensions must be >= 1")
        object.__setattr__(self, "values", _freeze(vals))
        if self.degenerate_mask is not None:
            mask = np.ascontiguousarray(np.asarray(self.degenerate_mask, dtype=bool))
            if mask.shape != (self.grid_height, self.grid_width):
                raise ValidationError("degenerate mask shape mismatch")
            object.__setattr__(self, "degenerate_mask", _freeze(mask))

    @property
    def n_cells(self) -> int:
        return self.grid_width * self.grid_height

    def cell_vectors(self) -> np.ndarray:
        """Descriptors as an (n_cells, channels) array, cells row-major."""
        return self.values.reshape(self.n_cells, self.channels)

    @classmethod
    def from_values(
        cls,
        values: np.ndarray,
        source_image_width: int,
        source_image_height: int,
        image_id: str = "",
        degenerate_mask: np.ndarray | None = None,
    ) -> "FeatureGrid":
        values = np.asarray(values, dtype=np.float64)
        gh, gw, ch = values.shape
        return cls(
            grid_width=gw,
            grid_height=gh,
            channels=ch,
            values=values,
            source_image_width=source_image_width,
            source_image_height=source_image_height,
            image_id=image_id,
            degenerate_mask=degenerate_mask,
        )


def write_feature_grid(grid: FeatureGrid, path) -> None:
    """Serialize a grid to the FGRD binary format (float32 payload)."""
    id_bytes = grid.image_id.encode("utf-8")
    header = FGRD_MAGIC + bytes([FGRD_VERSION, 0, 0, 0])
    header += struct.pack(
        "<4I", grid.grid_width, grid.grid_height, grid.channels, len(id_bytes)
    )
    header += id_bytes
    header += struct.pack("<2I", grid.source_image_width, grid.source_image_height)
    payload = grid.values.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_feature_grid(path) -> FeatureGrid:
    """Read an FGRD file, checking magic, sizes and payload finiteness."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8:
        raise FormatError(f"{path}: file too short for an FGRD header")
    if buf[:4] != FGRD_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {FGRD_MAGIC!r}")
    if buf[4] != FGRD_VERSION:
        raise FormatError(f"{path}: unsupported version {buf[4]}")
    if buf[5:8] != b"\x00\x00\x00":
        raise FormatError(f"{path}: reserved header bytes are not zero")
    if len(buf) < 24:
        raise TruncationError(f"{path}: header truncated")
    gw, gh, ch, id_len = struct.unpack_from("<4I", buf, 8)
    offset = 24
    if len(buf) < offset + id_len + 8:
        raise TruncationError(f"{path}: image id or size fields truncated")
    try:
        image_id = buf[offset : offset + id_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: image id is not valid UTF-8") from exc
    offset += id_len
    src_w, src_h = struct.unpack_from("<2I", buf, offset)
    offset += 8
    expected = gw * gh * ch * 4
    actual = len(buf) - offset
    if actual != expected:
        raise TruncationError(
            f"{path}: payload holds {actual} bytes but header declares "
            f"{gw}x{gh}x{ch} ({expected} bytes)"
        )
    raw = np.frombuffer(buf, dtype="<f4", count=gw * gh * ch, offset=offset)
    values = raw.astype(np.float64).reshape(gh, gw, ch)
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{path}: payload contains non-finite values")
    return FeatureGrid(
        grid_width=gw,
        grid_height=gh,
        channels=ch,
        values=values,
        source_image_width=src_w,
        source_image_height=src_h,
        image_id=image_id,
    )


def load_gray_image(path) -> GrayImage:
    """Load any Pillow-readable image, converted to grayscale in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return GrayImage.from_array(arr)


def patch_center_indices(size: int, cells: int, radius: int) -> np.ndarray:
    """Integer pixel index of each cell's centre, clamped so the patch fits."""
    idx = np.floor((np.arange(cells) + 0.5) * size / cells).astype(int)
    return np.clip(idx, radius, size - 1 - radius)


def builtin_dense_descriptor(
    image: GrayImage,
    grid_width: int,
    grid_height: int,
    patch_radius: int = 4,
    orientation_bins: int = 8,
) -> FeatureGrid:
    """Classical dense descriptor: one vector per grid cell.

    Each cell's descriptor is the mean-subtracted intensities of the
    (2r+1)x(2r+1) patch around the cell's centre pixel, concatenated with a
    magnitude-weighted gradient orientation histogram over the same patch.
    Mean subtraction plus the downstream cosine distance make the result
    insensitive to affine photometric changes.  Fully deterministic.
    """
    if grid_width < 1 or grid_height < 1:
        raise ValidationError("grid dimensions must be >= 1")
    if orientation_bins < 4:
        raise ValidationError("orientation_bins must be >= 4")
    if patch_radius < 0:
        raise ValidationError("patch_radius must be >= 0")
    side = 2 * patch_radius + 1
    if image.width < side or image.height < side:
        raise DimensionError(
            f"image {image.width}x{image.height} smaller than "
            f"{side}x{side} descriptor patch"
        )

    pixels = image.pixels
    gy, gx = np.gradient(pixels)
    magnitude = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    bins = np.minimum(
        (angle * (orientation_bins / (2.0 * np.pi))).astype(int),
        orientation_bins - 1,
    )

    cx = patch_center_indices(image.width, grid_width, patch_radius)
    cy = patch_center_indices(image.height, grid_height, patch_radius)

    channels = side * side + orientation_bins
    values = np.empty((grid_height, grid_width, channels), dtype=np.float64)
    for r in range(grid_height):
        ys = slice(cy[r] - patch_radius, cy[r] + patch_radius + 1)
        for c in range(grid_width):
            xs = slice(cx[c] - patch_radius, cx[c] + patch_radius + 1)
            patch = pixels[ys, xs].ravel()
            hist = np.bincount(
                bins[ys, xs].ravel(),
                weights=magnitude[ys, xs].ravel(),
                minlength=orientation_bins,
            )
            values[r, c, : side * side] = patch - patch.mean()
            values[r, c, side * side :] = hist

    return FeatureGrid.from_values(
        values,
        source_image_width=image.width,
        source_image_height=image.height,
        image_id="builtin-descriptor",
    )


def l2_normalize_channels(grid: FeatureGrid, epsilon: float = 1e-12) -> FeatureGrid:
    """Scale each cell's descriptor to unit Euclidean norm.

    Cells whose norm falls below ``epsilon`` are zeroed and flagged in the
    returned grid's ``degenerate_mask``.  Idempotent on normalised grids.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be > 0")
    norms = np.linalg.norm(grid.values, axis=2)
    mask = norms < epsilon
    safe = np.where(mask, 1.0, norms)
    values = np.where(mask[:, :, None], 0.0, grid.values / safe[:, :, None])
    return FeatureGrid(
        grid_width=grid.grid_width,
        grid_height=grid.grid_height,
        channels=grid.channels,
        values=values,
        source_image_width=grid.source_image_width,
        source_image_height=grid.source_image_height,
        image_id=grid.image_id,
        degenerate_mask=mask,
    )


def resample_plane(values: np.ndarray, target_width: int, target_height: int) -> np.ndarray:
    """Bilinear resample of an (h, w, c) array over cell centres.

    Uses the half-cell convention src = (dst + 0.5) * src_dim / dst_dim - 0.5
    with edge clamping, which makes same-size resampling an exact identity.
    """
    h, w = values.shape[:2]
    sx = np.clip((np.arange(target_width) + 0.5) * w / target_width - 0.5, 0, w - 1)
    sy = np.clip((np.arange(target_height) + 0.5) * h / target_height - 0.5, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]
    top = values[y0][:, x0] * (1 - fx) + values[y0][:, x1] * fx
    bottom = values[y1][:, x0] * (1 - fx) + values[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resample_grid(grid: FeatureGrid, target_width: int, target_height: int) -> FeatureGrid:
    """Bilinear per-channel resample to a new grid resolution."""
    if target_width < 1 or target_height < 1:
        raise ValidationError("target dimensions must be >= 1")
    values = resample_plane(grid.values, target_width, target_height)
    return FeatureGrid(
        grid_width=target_width,
        grid_height=target_height,
        channels=grid.channels,
        values=values,
        source_image_width=grid.source_image_width,
        source_image_height=grid.source_image_height,
        image_id=grid.image_id,
    )
