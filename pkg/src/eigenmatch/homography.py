"""Point matching in embedding space and projective transform estimation.

Conventions: points are column vectors under the hood (p' = H p with
dehomogenization by the third coordinate), stored row-wise as (n, 2)
arrays in the pixel-center coordinate frame of features.py.  Homographies
are canonicalized so their largest-magnitude entry equals +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegeneracyError,
    DimensionError,
    FormatError,
    InsufficientMatchesError,
    PointAtInfinityError,
    ValidationError,
)
from .features import FeatureGrid, _freeze
from .graph import SpectralEmbedding

_W_EPSILON = 1e-12


@dataclass(frozen=True)
class Homography:
    """Invertible 3x3 projective transform, scale-fixed on construction."""

    h: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.h, dtype=np.float64)
        if mat.shape != (3, 3):
            raise ValidationError(f"homography must be 3x3, got {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValidationError("homography contains non-finite entries")
        pivot = mat.flat[np.argmax(np.abs(mat))]
        if pivot == 0.0:
            raise ValidationError("homography is the zero matrix")
        mat = np.ascontiguousarray(mat / pivot)
        if abs(np.linalg.det(mat)) <= 1e-12:
            raise ValidationError("homography is not invertible")
        object.__setattr__(self, "h", _freeze(mat))

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @property
    def matrix(self) -> np.ndarray:
        return self.h

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))


@dataclass(frozen=True)
class GridGeometry:
    """Maps grid cells to pixel-center coordinates in the source image."""

    grid_width: int
    grid_height: int
    image_width: int
    image_height: int

    @classmethod
    def from_grid(cls, grid: FeatureGrid) -> "GridGeometry":
        return cls(
            grid_width=grid.grid_width,
            grid_height=grid.grid_height,
            image_width=grid.source_image_width,
            image_height=grid.source_image_height,
        )

    @property
    def n_cells(self) -> int:
        return self.grid_width * self.grid_height

    def centers(self) -> np.ndarray:
        """(n_cells, 2) array of (x, y) cell centres, cells row-major."""
        xs = (np.arange(self.grid_width) + 0.5) * self.image_width / self.grid_width - 0.5
        ys = (np.arange(self.grid_height) + 0.5) * self.image_height / self.grid_height - 0.5
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True)
class MatchSet:
    """Paired points with non-negative scores (lower = closer embedding)."""

    points1: np.ndarray
    points2: np.ndarray
    scores: np.ndarray
    pair_id: str = ""

    def __post_init__(self):
        p1 = np.ascontiguousarray(np.asarray(self.points1, dtype=np.float64).reshape(-1, 2))
        p2 = np.ascontiguousarray(np.asarray(self.points2, dtype=np.float64).reshape(-1, 2))
        sc = np.ascontiguousarray(np.asarray(self.scores, dtype=np.float64).ravel())
        if not (len(p1) == len(p2) == len(sc)):
            raise DimensionError("points1, points2 and scores must have equal length")
        if not (np.all(np.isfinite(p1)) and np.all(np.isfinite(p2)) and np.all(np.isfinite(sc))):
            raise ValidationError("match set contains non-finite values")
        if sc.size and sc.min() < 0:
            raise ValidationError("match scores must be non-negative")
        object.__setattr__(self, "points1", _freeze(p1))
        object.__setattr__(self, "points2", _freeze(p2))
        object.__setattr__(self, "scores", _freeze(sc))

    def __len__(self) -> int:
        return len(self.scores)


def embed_match(
    embedding: SpectralEmbedding,
    geometry1: GridGeometry,
    geometry2: GridGeometry,
    ratio_threshold: float = 0.9,
    mutual: bool = True,
    pair_id: str = "",
) -> MatchSet:
    """Nearest-neighbour matching of embedding rows with a ratio test.

    For every image-1 cell the nearest and second-nearest image-2 cells by
    Euclidean embedding distance are found; the match survives if
    nearest/second-nearest <= ratio_threshold and, when ``mutual`` is set,
    the image-2 cell's nearest image-1 cell is the original one.  Matched
    cells are emitted as their centre pixel coordinates, scored by the
    embedding distance.
    """
    if embedding.m < 1:
        raise ValidationError("embedding dimension m must be >= 1")
    if not (0.0 < ratio_threshold <= 1.0):
        raise ValidationError("ratio_threshold must lie in (0, 1]")
    if embedding.n1 != geometry1.n_cells or embedding.n2 != geometry2.n_cells:
        raise DimensionError("embedding row counts do not match grid geometries")

    r1, r2 = embedding.rows1, embedding.rows2
    sq = (
        np.sum(r1**2, axis=1)[:, None]
        + np.sum(r2**2, axis=1)[None, :]
        - 2.0 * (r1 @ r2.T)
    )
    dist = np.sqrt(np.maximum(sq, 0.0))

    nearest = np.argmin(dist, axis=1)
    d1 = dist[np.arange(len(r1)), nearest]
    if dist.shape[1] >= 2:
        part = np.partition(dist, 1, axis=1)
        d2 = part[:, 1]
    else:
        d2 = np.full(len(r1), np.inf)
    ratio = np.divide(d1, d2, out=np.zeros_like(d1), where=d2 > 0)
    keep = ratio <= ratio_threshold
    if mutual:
        reverse = np.argmin(dist, axis=0)
        keep &= reverse[nearest] == np.arange(len(r1))

    idx1 = np.flatnonzero(keep)
    centers1 = geometry1.centers()
    centers2 = geometry2.centers()
    return MatchSet(
        points1=centers1[idx1],
        points2=centers2[nearest[idx1]],
        scores=d1[idx1],
        pair_id=pair_id,
    )


def project_points(h: Homography, points: np.ndarray) -> np.ndarray:
    """Apply p' = H p with dehomogenization to an (n, 2) point array."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ h.matrix.T
    w = hom[:, 2]
    bad = np.abs(w) < _W_EPSILON
    if np.any(bad):
        i = int(np.argmax(bad))
        raise PointAtInfinityError(index=i, point=pts[i])
    return hom[:, :2] / w[:, None]


def pointwise_loss(h: Homography, points1: np.ndarray, points2: np.ndarray) -> float:
    """Mean squared Euclidean distance between H(points1) and points2."""
    p1 = np.asarray(points1, dtype=np.float64).reshape(-1, 2)
    p2 = np.asarray(points2, dtype=np.float64).reshape(-1, 2)
    if len(p1) != len(p2):
        raise DimensionError(f"point list lengths differ: {len(p1)} vs {len(p2)}")
    if len(p1) < 1:
        raise DimensionError("at least one point pair is required")
    diff = project_points(h, p1) - p2
    return float(np.mean(np.sum(diff**2, axis=1)))


def _hartley_normalization(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate to zero centroid and scale to mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(points - centroid, axis=1))
    if mean_dist < 1e-12:
        raise DegeneracyError("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    t = np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return (points - centroid) * s, t


def estimate_homography_dlt(matches: MatchSet) -> Homography:
    """Hartley-normalized direct linear transform from >= 4 correspondences.

    Solves for the null direction of the stacked 2n x 9 design matrix via
    SVD; a second-smallest singular value within 1e-10 of the largest
    signals a degenerate (e.g. collinear) configuration.
    """
    n = len(matches)
    if n < 4:
        raise InsufficientMatchesError(f"homography needs >= 4 matches, got {n}")
    q1, t1 = _hartley_normalization(matches.points1)
    q2, t2 = _hartley_normalization(matches.points2)

    x, y = q1[:, 0], q1[:, 1]
    xp, yp = q2[:, 0], q2[:, 1]
    zeros = np.zeros(n)
    ones = np.ones(n)
    rows_a = np.column_stack([zeros, zeros, zeros, -x, -y, -ones, yp * x, yp * y, yp])
    rows_b = np.column_stack([x, y, ones, zeros, zeros, zeros, -xp * x, -xp * y, -xp])
    design = np.empty((2 * n, 9))
    design[0::2] = rows_a
    design[1::2] = rows_b

    _, sing, vt = np.linalg.svd(design, full_matrices=True)
    sing = np.concatenate([sing, np.zeros(9 - len(sing))])
    if sing[-2] < 1e-10 * sing[0]:
        raise DegeneracyError(
            "point configuration does not determine a unique homography"
        )
    h_norm = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(t2) @ h_norm @ t1)


def _huber_rho(t: np.ndarray, delta: float) -> np.ndarray:
    # quadratic up to delta, linear beyond; C1 at the knee
    return np.where(t <= delta, t**2, delta * (2.0 * t - delta))


def _huber_objective(h: np.ndarray, p1: np.ndarray, p2: np.ndarray, delta: float) -> float:
    hom = np.column_stack([p1, np.ones(len(p1))]) @ h.T
    w = hom[:, 2]
    if np.any(np.abs(w) < _W_EPSILON):
        return np.inf
    resid = hom[:, :2] / w[:, None] - p2
    t = np.linalg.norm(resid, axis=1)
    return float(np.mean(_huber_rho(t, delta)))


@dataclass
class RefineResult:
    """Outcome of iterative homography refinement.

    ``objectives`` holds the robust objective at the start and after each
    accepted step; it is non-increasing by construction.
    """

    homography: Homography
    objectives: list[float]
    converged: bool
    message: str = ""


def refine_homography(
    h0: Homography,
    matches: MatchSet,
    huber_delta: float = 2.0,
    max_iters: int = 50,
    tol: float = 1e-10,
) -> RefineResult:
    """Damped Gauss-Newton descent on the Huber-robustified mean squared
    reprojection error, over the 8 entries of H not pinned by scale.

    Only steps that do not increase the objective are accepted, so the
    returned objective never exceeds the one at ``h0``.  If the damped
    normal equations cannot be solved at all, ``h0`` is returned with a
    diagnostic message.
    """
    if huber_delta <= 0:
        raise ValidationError("huber_delta must be > 0")
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    if len(matches) < 4:
        raise InsufficientMatchesError(
            f"refinement needs >= 4 matches, got {len(matches)}"
        )

    p1, p2 = matches.points1, matches.points2
    h = h0.matrix.copy()
    pinned = int(np.argmax(np.abs(h)))
    free = np.array([i for i in range(9) if i != pinned])

    objective = _huber_objective(h, p1, p2, huber_delta)
    objectives = [objective]
    if not np.isfinite(objective):
        return RefineResult(h0, objectives, False, "objective not finite at start")

    lam = 1e-3
    message = "max iterations reached"
    converged = False
    n = len(p1)
    ones = np.ones(n)

    for _ in range(max_iters):
        hom = np.column_stack([p1, ones]) @ h.T
        w = hom[:, 2]
        proj = hom[:, :2] / w[:, None]
        resid = proj - p2
        t = np.linalg.norm(resid, axis=1)
        weights = np.where(t <= huber_delta, 1.0, huber_delta / np.maximum(t, 1e-300))

        x, y = p1[:, 0], p1[:, 1]
        inv_w = 1.0 / w
        jac = np.zeros((2 * n, 9))
        jac[0::2, 0] = x * inv_w
        jac[0::2, 1] = y * inv_w
        jac[0::2, 2] = inv_w
        jac[0::2, 6] = -proj[:, 0] * x * inv_w
        jac[0::2, 7] = -proj[:, 0] * y * inv_w
        jac[0::2, 8] = -proj[:, 0] * inv_w
        jac[1::2, 3] = x * inv_w
        jac[1::2, 4] = y * inv_w
        jac[1::2, 5] = inv_w
        jac[1::2, 6] = -proj[:, 1] * x * inv_w
        jac[1::2, 7] = -proj[:, 1] * y * inv_w
        jac[1::2, 8] = -proj[:, 1] * inv_w
        jac = jac[:, free]

        wvec = np.repeat(weights, 2)
        rvec = np.empty(2 * n)
        rvec[0::2] = resid[:, 0]
        rvec[1::2] = resid[:, 1]
        normal = jac.T @ (jac * wvec[:, None])
        gradient = jac.T @ (wvec * rvec)

        accepted = False
        while lam <= 1e12:
            damped = normal + lam * np.diag(np.maximum(np.diag(normal), 1e-12))
            try:
                step = np.linalg.solve(damped, -gradient)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(step)):
                lam *= 10.0
                continue
            trial = h.copy()
            trial.flat[free] += step
            trial_obj = _huber_objective(trial, p1, p2, huber_delta)
            if trial_obj <= objective:
                h = trial
                previous = objective
                objective = trial_obj
                objectives.append(objective)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            if len(objectives) == 1:
                return RefineResult(
                    h0, objectives, False, "normal equations unsolvable at start"
                )
            message = "no further improving step"
            converged = True
            break
        if previous - objective <= tol * max(previous, 1e-300):
            message = "relative decrease below tolerance"
            converged = True
            break

    return RefineResult(Homography(h), objectives, converged, message)


def write_homography_file(h: Homography, path) -> None:
    """Write the 9 entries row-major, whitespace separated."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in h.matrix:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_homography_file(path) -> Homography:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) != 9:
        raise FormatError(
            f"{path}: expected 9 numbers for a homography, got {len(tokens)}"
        )
    try:
        values = np.array([float(t) for t in tokens]).reshape(3, 3)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric homography entry") from exc
    return Homography(values)
