"""Joint affinity graph over two feature grids and its spectral embedding.

Two images contribute n1 and n2 feature points (grid cells).  The joint
affinity matrix stacks intra-image blocks W1, W2 and the cross-image block C:

    W = [[W1, C ],
         [C', W2]]            (n1+n2) x (n1+n2), symmetric

with every entry exp(-d^2) of a cosine feature distance d.  The top-m
eigenvectors of W that carry spatial contrast form a shared embedding;
splitting each eigenvector into its first n1 and last n2 components yields
per-image coordinates in which corresponding cells lie close together.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CapacityError,
    DimensionError,
    FormatError,
    NumericalError,
    TruncationError,
    ValidationError,
)
from .features import FeatureGrid, _freeze

DEFAULT_EMBEDDING_DIM = 30
DEFAULT_TRIVIALITY_CV = 1e-3
DEFAULT_MAX_DISTANCE = 1.0
DEFAULT_NORM_EPSILON = 1e-12

#: exp(-d^2) on the literal cosine distance, or exp(-e^2) where e is the
#: Euclidean distance between unit vectors (e^2 = 2d, so exp(-2d)).
DISTANCE_VARIANTS = ("cosine", "euclidean")


def cosine_distance_flagged(
    u: np.ndarray,
    v: np.ndarray,
    epsilon: float = DEFAULT_NORM_EPSILON,
    max_distance: float = DEFAULT_MAX_DISTANCE,
) -> tuple[float, bool]:
    """Cosine distance 1 - cos(u, v) in [0, 2] plus a degeneracy flag.

    If either vector's norm falls below ``epsilon`` the configured
    ``max_distance`` is returned and the flag is set.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"vector lengths differ: {u.size} vs {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < epsilon or nv < epsilon:
        return float(max_distance), True
    sim = np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)
    return float(1.0 - sim), False


def cosine_distance(
    u: np.ndarray,
    v: np.ndarray,
    epsilon: float = DEFAULT_NORM_EPSILON,
    max_distance: float = DEFAULT_MAX_DISTANCE,
) -> float:
    return cosine_distance_flagged(u, v, epsilon, max_distance)[0]


def _unit_rows(vals: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(vals, axis=1)
    degenerate = norms < epsilon
    safe = np.where(degenerate, 1.0, norms)
    return vals / safe[:, None], degenerate


def _distance_matrix(
    a: np.ndarray, b: np.ndarray, epsilon: float, max_distance: float
) -> np.ndarray:
    ua, da = _unit_rows(a, epsilon)
    ub, db = _unit_rows(b, epsilon)
    sim = np.clip(ua @ ub.T, -1.0, 1.0)
    dist = 1.0 - sim
    dist[da, :] = max_distance
    dist[:, db] = max_distance
    return dist


def _affinity_from_distance(dist: np.ndarray, variant: str) -> np.ndarray:
    if variant == "cosine":
        return np.exp(-(dist**2))
    if variant == "euclidean":
        return np.exp(-2.0 * dist)
    raise ValidationError(
        f"unknown distance variant {variant!r}, expected one of {DISTANCE_VARIANTS}"
    )


def intra_affinity(
    grid: FeatureGrid,
    epsilon: float = DEFAULT_NORM_EPSILON,
    max_distance: float = DEFAULT_MAX_DISTANCE,
    variant: str = "cosine",
) -> np.ndarray:
    """Within-image affinity block: exp(-d^2), symmetric, unit diagonal."""
    vals = grid.cell_vectors()
    dist = _distance_matrix(vals, vals, epsilon, max_distance)
    dist = (dist + dist.T) / 2.0
    aff = _affinity_from_distance(dist, variant)
    np.fill_diagonal(aff, 1.0)
    return aff


def cross_affinity(
    grid1: FeatureGrid,
    grid2: FeatureGrid,
    epsilon: float = DEFAULT_NORM_EPSILON,
    max_distance: float = DEFAULT_MAX_DISTANCE,
    variant: str = "cosine",
) -> np.ndarray:
    """Between-image affinity block, n1 x n2, entries in (0, 1]."""
    if grid1.channels != grid2.channels:
        raise DimensionError(
            f"channel counts differ: {grid1.channels} vs {grid2.channels}"
        )
    dist = _distance_matrix(
        grid1.cell_vectors(), grid2.cell_vectors(), epsilon, max_distance
    )
    return _affinity_from_distance(dist, variant)


@dataclass(frozen=True)
class JointAffinity:
    """Symmetric joint matrix with an n1/n2 block split.

    Instances produced by :func:`joint_affinity` additionally have every
    entry in [exp(-4), 1] and an exact unit diagonal; the constructor only
    enforces what the eigensolver needs (square, symmetric, finite), so
    arbitrary symmetric matrices can be wrapped for spectral analysis.
    """

    n1: int
    n2: int
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.ascontiguousarray(np.asarray(self.matrix, dtype=np.float64))
        n = self.n1 + self.n2
        if self.n1 < 1 or self.n2 < 1:
            raise ValidationError("block sizes must be >= 1")
        if mat.shape != (n, n):
            raise ValidationError(
                f"matrix shape {mat.shape} does not match n1+n2={n}"
            )
        if not np.all(np.isfinite(mat)):
            raise ValidationError("affinity matrix contains non-finite entries")
        if np.max(np.abs(mat - mat.T)) > 1e-12:
            raise ValidationError("affinity matrix is not symmetric to 1e-12")
        object.__setattr__(self, "matrix", _freeze(mat))

    @property
    def size(self) -> int:
        return self.n1 + self.n2

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W1, W2, C) views of the block structure."""
        n1 = self.n1
        return (
            self.matrix[:n1, :n1],
            self.matrix[n1:, n1:],
            self.matrix[:n1, n1:],
        )


def joint_affinity(
    grid1: FeatureGrid,
    grid2: FeatureGrid,
    epsilon: float = DEFAULT_NORM_EPSILON,
    max_distance: float = DEFAULT_MAX_DISTANCE,
    variant: str = "cosine",
) -> JointAffinity:
    """Assemble the joint matrix [[W1, C], [C', W2]] from two grids."""
    w1 = intra_affinity(grid1, epsilon, max_distance, variant)
    w2 = intra_affinity(grid2, epsilon, max_distance, variant)
    c = cross_affinity(grid1, grid2, epsilon, max_distance, variant)
    matrix = np.block([[w1, c], [c.T, w2]])
    return JointAffinity(n1=grid1.n_cells, n2=grid2.n_cells, matrix=matrix)


@dataclass(frozen=True)
class SpectralEmbedding:
    """Top-m eigenpairs of a joint matrix, split per image.

    ``rows1[i]`` is the m-dimensional embedding of image-1 point i;
    eigenvalues are sorted non-increasing.  ``triviality_mask`` records, in
    the same descending-eigenvalue order, which raw eigenvectors were
    skipped as near-constant.
    """

    m: int
    eigenvalues: np.ndarray
    rows1: np.ndarray
    rows2: np.ndarray
    triviality_mask: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.eigenvalues, dtype=np.float64))
        r1 = np.ascontiguousarray(np.asarray(self.rows1, dtype=np.float64))
        r2 = np.ascontiguousarray(np.asarray(self.rows2, dtype=np.float64))
        if vals.shape != (self.m,):
            raise ValidationError("eigenvalue count does not match m")
        if r1.ndim != 2 or r2.ndim != 2 or r1.shape[1] != self.m or r2.shape[1] != self.m:
            raise ValidationError("embedding rows must be (n, m) matrices")
        if np.any(np.diff(vals) > 0):
            raise ValidationError("eigenvalues must be sorted non-increasing")
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(r1)) and np.all(np.isfinite(r2))):
            raise ValidationError("embedding contains non-finite values")
        object.__setattr__(self, "eigenvalues", _freeze(vals))
        object.__setattr__(self, "rows1", _freeze(r1))
        object.__setattr__(self, "rows2", _freeze(r2))
        if self.triviality_mask is not None:
            mask = np.ascontiguousarray(np.asarray(self.triviality_mask, dtype=bool))
            object.__setattr__(self, "triviality_mask", _freeze(mask))

    @property
    def n1(self) -> int:
        return self.rows1.shape[0]

    @property
    def n2(self) -> int:
        return self.rows2.shape[0]


def coefficient_of_variation(vectors: np.ndarray) -> np.ndarray:
    """Per-column stddev over mean absolute component.

    Near-constant columns (e.g. the Perron vector of an all-positive
    matrix) score ~0; sign-balanced columns score ~1 or above.
    """
    std = vectors.std(axis=0)
    mean_abs = np.abs(vectors).mean(axis=0)
    return std / np.where(mean_abs == 0.0, 1.0, mean_abs)


def fix_eigenvector_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the first largest-magnitude component is positive."""
    vectors = vectors.copy()
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eig_topm(
    affinity: JointAffinity,
    m: int = DEFAULT_EMBEDDING_DIM,
    triviality_cv_threshold: float = DEFAULT_TRIVIALITY_CV,
) -> SpectralEmbedding:
    """Top-m non-trivial eigenpairs of the joint matrix, split per image.

    All eigenpairs are computed, sorted by descending eigenvalue, and
    eigenvectors whose coefficient of variation falls below the threshold
    are discarded as trivial before the first m survivors are retained.
    Each retained eigenvector gets a deterministic sign and is split into
    its image-1 (first n1) and image-2 (last n2) components.
    """
    if m < 1:
        raise ValidationError("m must be >= 1")
    if triviality_cv_threshold <= 0:
        raise ValidationError("triviality_cv_threshold must be > 0")
    try:
        evals, evecs = np.linalg.eigh(affinity.matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    evals = evals[::-1]
    evecs = evecs[:, ::-1]

    trivial = coefficient_of_variation(evecs) < triviality_cv_threshold
    keep = np.flatnonzero(~trivial)
    if keep.size < m:
        raise CapacityError(available=int(keep.size), requested=m)
    sel = keep[:m]
    vectors = fix_eigenvector_signs(evecs[:, sel])
    return SpectralEmbedding(
        m=m,
        eigenvalues=evals[sel],
        rows1=vectors[: affinity.n1],
        rows2=vectors[affinity.n1 :],
        triviality_mask=trivial,
    )


JEMB_MAGIC = b"JEMB"
JEMB_VERSION = 1


def write_embedding(embedding: SpectralEmbedding, path) -> None:
    """Dump an embedding to the JEMB binary format (float32 payload)."""
    header = JEMB_MAGIC + bytes([JEMB_VERSION, 0, 0, 0])
    header += struct.pack("<3I", embedding.n1, embedding.n2, embedding.m)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(embedding.eigenvalues.astype("<f4").tobytes(order="C"))
        fh.write(embedding.rows1.astype("<f4").tobytes(order="C"))
        fh.write(embedding.rows2.astype("<f4").tobytes(order="C"))


def read_embedding(path) -> SpectralEmbedding:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8 or buf[:4] != JEMB_MAGIC:
        raise FormatError(f"{path}: not a JEMB file")
    if buf[4] != JEMB_VERSION:
        raise FormatError(f"{path}: unsupported version {buf[4]}")
    if len(buf) < 20:
        raise TruncationError(f"{path}: header truncated")
    n1, n2, m = struct.unpack_from("<3I", buf, 8)
    expected = (m + n1 * m + n2 * m) * 4
    if len(buf) - 20 != expected:
        raise TruncationError(
            f"{path}: payload holds {len(buf) - 20} bytes, expected {expected}"
        )
    floats = np.frombuffer(buf, dtype="<f4", offset=20).astype(np.float64)
    return SpectralEmbedding(
        m=m,
        eigenvalues=floats[:m],
        rows1=floats[m : m + n1 * m].reshape(n1, m),
        rows2=floats[m + n1 * m :].reshape(n2, m),
    )
