"""Dataset ingestion, augmentation, metrics and the batch evaluation loop.

File formats (all UTF-8 text):

annotation   header ``pair <pair_id> <img1-path> <img2-path>`` followed by
             one ``x1 y1 x2 y2`` line per ground-truth correspondence.
points       one ``x y`` line per keypoint (used as the keypoint source
             when ground truth is given as a homography).
manifest     one pair per line, either ``annotation <path>`` or
             ``homography <img1> <img2> <H-path> <points-path>``; blank
             lines and ``#`` comments ignored.  Relative paths resolve
             against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import (
    CapacityError,
    DegeneracyError,
    DimensionError,
    FormatError,
    InsufficientMatchesError,
    NumericalError,
    PointAtInfinityError,
    TruncationError,
    UsageError,
    ValidationError,
)
from .features import (
    FeatureGrid,
    GrayImage,
    _freeze,
    builtin_dense_descriptor,
    l2_normalize_channels,
    load_feature_grid,
    load_gray_image,
    resample_grid,
)
from .graph import eig_topm, joint_affinity
from .homography import (
    GridGeometry,
    Homography,
    embed_match,
    estimate_homography_dlt,
    project_points,
    read_homography_file,
    refine_homography,
)

AUGMENT_OPS = ("flip_lr", "rot90", "rot180", "rot270")


@dataclass(frozen=True)
class KeypointAnnotation:
    """Ground-truth correspondences for one image pair.

    Image sizes are optional (annotation files do not carry them) but are
    required for augmentation; when known, keypoints must lie within the
    pixel-center domain [-0.5, dim-0.5].
    """

    pair_id: str
    image1_path: str
    image2_path: str
    points1: np.ndarray
    points2: np.ndarray
    image1_size: tuple[int, int] | None = None  # (width, height)
    image2_size: tuple[int, int] | None = None

    def __post_init__(self):
        p1 = np.ascontiguousarray(np.asarray(self.points1, dtype=np.float64).reshape(-1, 2))
        p2 = np.ascontiguousarray(np.asarray(self.points2, dtype=np.float64).reshape(-1, 2))
        if len(p1) != len(p2):
            raise DimensionError("points1 and points2 must have equal length")
        if len(p1) < 1:
            raise ValidationError("annotation must hold at least one correspondence")
        if not (np.all(np.isfinite(p1)) and np.all(np.isfinite(p2))):
            raise ValidationError("annotation contains non-finite keypoints")
        for pts, size, name in ((p1, self.image1_size, "1"), (p2, self.image2_size, "2")):
            if size is not None:
                w, h = size
                if (
                    pts[:, 0].min() < -0.5
                    or pts[:, 0].max() > w - 0.5
                    or pts[:, 1].min() < -0.5
                    or pts[:, 1].max() > h - 0.5
                ):
                    raise ValidationError(
                        f"keypoints of image {name} fall outside {w}x{h} bounds"
                    )
        object.__setattr__(self, "points1", _freeze(p1))
        object.__setattr__(self, "points2", _freeze(p2))

    def __len__(self) -> int:
        return len(self.points1)


def load_annotation(path) -> KeypointAnnotation:
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty annotation file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "pair":
        raise FormatError(
            f"{path}: header must be 'pair <id> <img1> <img2>', got {lines[0]!r}"
        )
    p1, p2 = [], []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 4:
            raise FormatError(f"{path}: correspondence line needs 4 numbers: {ln!r}")
        try:
            x1, y1, x2, y2 = (float(t) for t in parts)
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric correspondence: {ln!r}") from exc
        p1.append((x1, y1))
        p2.append((x2, y2))
    if not p1:
        raise FormatError(f"{path}: annotation holds no correspondences")
    return KeypointAnnotation(
        pair_id=header[1],
        image1_path=header[2],
        image2_path=header[3],
        points1=np.array(p1),
        points2=np.array(p2),
    )


def write_annotation(annotation: KeypointAnnotation, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"pair {annotation.pair_id} {annotation.image1_path} "
            f"{annotation.image2_path}\n"
        )
        for (x1, y1), (x2, y2) in zip(annotation.points1, annotation.points2):
            fh.write(f"{float(x1)!r} {float(y1)!r} {float(x2)!r} {float(y2)!r}\n")


def read_points_file(path) -> np.ndarray:
    pts = []
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        parts = ln.split()
        if len(parts) != 2:
            raise FormatError(f"{path}: keypoint line needs 2 numbers: {ln!r}")
        pts.append((float(parts[0]), float(parts[1])))
    if not pts:
        raise FormatError(f"{path}: no keypoints found")
    return np.array(pts)


def mae(estimated: np.ndarray, ground_truth: np.ndarray) -> float:
    """Mean (un-squared) Euclidean distance between corresponding points."""
    est = np.asarray(estimated, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 2)
    if len(est) != len(gt):
        raise DimensionError(f"point list lengths differ: {len(est)} vs {len(gt)}")
    if len(est) < 1:
        raise DimensionError("at least one point pair is required")
    return float(np.mean(np.linalg.norm(est - gt, axis=1)))


def delta_match_rate(
    estimated: np.ndarray,
    ground_truth: np.ndarray,
    delta: float,
    chebyshev_window: bool = False,
) -> float:
    """Percentage of points within ``delta`` pixels of their target.

    The criterion is the Euclidean ball by default; ``chebyshev_window``
    switches to the max-coordinate (square window) variant.
    """
    if delta <= 0:
        raise ValidationError("delta must be > 0")
    est = np.asarray(estimated, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 2)
    if len(est) != len(gt):
        raise DimensionError(f"point list lengths differ: {len(est)} vs {len(gt)}")
    if len(est) < 1:
        raise DimensionError("at least one point pair is required")
    diff = est - gt
    if chebyshev_window:
        dist = np.max(np.abs(diff), axis=1)
    else:
        dist = np.linalg.norm(diff, axis=1)
    return float(100.0 * np.count_nonzero(dist <= delta) / len(est))


def augment_points(
    points: np.ndarray, op: str, width: int, height: int
) -> tuple[np.ndarray, int, int]:
    """Map keypoints through a flip/rotation; returns (points, new_w, new_h).

    flip_lr: x -> w-1-x.  rot90 is clockwise: (x, y) -> (h-1-y, x) with
    dimensions swapped; rot180/rot270 are its compositions.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    if op == "flip_lr":
        return np.column_stack([width - 1 - x, y]), width, height
    if op == "rot90":
        return np.column_stack([height - 1 - y, x]), height, width
    if op == "rot180":
        return np.column_stack([width - 1 - x, height - 1 - y]), width, height
    if op == "rot270":
        return np.column_stack([y, width - 1 - x]), height, width
    raise ValidationError(f"unknown augmentation op {op!r}, expected one of {AUGMENT_OPS}")


def augment_image(image: GrayImage, op: str) -> GrayImage:
    """Apply the same flip/rotation to image pixels (rot90 = clockwise)."""
    if op == "flip_lr":
        return GrayImage.from_array(np.fliplr(image.pixels))
    if op == "rot90":
        return GrayImage.from_array(np.rot90(image.pixels, k=-1))
    if op == "rot180":
        return GrayImage.from_array(np.rot90(image.pixels, k=2))
    if op == "rot270":
        return GrayImage.from_array(np.rot90(image.pixels, k=1))
    raise ValidationError(f"unknown augmentation op {op!r}, expected one of {AUGMENT_OPS}")


def augment_pair(annotation: KeypointAnnotation, op: str) -> KeypointAnnotation:
    """Transform both keypoint lists of a pair by the same flip/rotation.

    Requires known image sizes.  Paths and pair_id are preserved; callers
    that need transformed pixels apply :func:`augment_image` separately.
    """
    if annotation.image1_size is None or annotation.image2_size is None:
        raise ValidationError("augmentation requires known image dimensions")
    p1, w1, h1 = augment_points(annotation.points1, op, *annotation.image1_size)
    p2, w2, h2 = augment_points(annotation.points2, op, *annotation.image2_size)
    return KeypointAnnotation(
        pair_id=annotation.pair_id,
        image1_path=annotation.image1_path,
        image2_path=annotation.image2_path,
        points1=p1,
        points2=p2,
        image1_size=(w1, h1),
        image2_size=(w2, h2),
    )


def split_dataset(pair_ids, seed: int) -> tuple[list, list, list]:
    """Deterministic seeded shuffle, then a 70/10/20 train/val/test split.

    Validation gets floor(0.1 n), test floor(0.2 n), train the remainder.
    """
    ids = list(pair_ids)
    n = len(ids)
    if n < 10:
        raise ValidationError(f"need at least 10 pairs to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_val = int(np.floor(0.1 * n))
    n_test = int(np.floor(0.2 * n))
    n_train = n - n_val - n_test
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


@dataclass(frozen=True)
class PairTask:
    """One unit of evaluation work: images plus ground truth."""

    pair_id: str
    image1_path: str
    image2_path: str
    points1: np.ndarray
    points2: np.ndarray | None = None  # None => synthesize via gt_homography
    gt_homography: np.ndarray | None = None

    def __post_init__(self):
        if self.points2 is None and self.gt_homography is None:
            raise ValidationError(
                f"pair {self.pair_id}: needs either target keypoints or a "
                "ground-truth homography"
            )


def parse_manifest(path) -> list[PairTask]:
    """Read a manifest file into evaluation tasks (see module docstring)."""
    path = Path(path)
    base = path.parent
    tasks = []
    for lineno, ln in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if parts[0] == "annotation" and len(parts) == 2:
            ann = load_annotation(_resolve(base, parts[1]))
            tasks.append(
                PairTask(
                    pair_id=ann.pair_id,
                    image1_path=_resolve(base, ann.image1_path),
                    image2_path=_resolve(base, ann.image2_path),
                    points1=ann.points1,
                    points2=ann.points2,
                )
            )
        elif parts[0] == "homography" and len(parts) == 5:
            h = read_homography_file(_resolve(base, parts[3]))
            pts = read_points_file(_resolve(base, parts[4]))
            tasks.append(
                PairTask(
                    pair_id=Path(parts[1]).stem + "__" + Path(parts[2]).stem,
                    image1_path=_resolve(base, parts[1]),
                    image2_path=_resolve(base, parts[2]),
                    points1=pts,
                    gt_homography=h.matrix,
                )
            )
        else:
            raise FormatError(f"{path}:{lineno}: unrecognised manifest line {ln!r}")
    return tasks


def _resolve(base: Path, p: str) -> str:
    q = Path(p)
    return str(q if q.is_absolute() else base / q)


@dataclass
class PairResult:
    pair_id: str
    n_points: int
    mae: float | None
    rates: dict[float, float] | None
    failure: str | None = None

    @property
    def succeeded(self) -> bool:
        return self.failure is None


@dataclass
class EvalReport:
    """Per-pair scores plus per-pair-mean and pooled-keypoint aggregates."""

    deltas: tuple[float, ...]
    pairs: list[PairResult]
    aggregate_mae: float | None
    aggregate_rates: dict[float, float] | None
    pooled_mae: float | None
    pooled_rates: dict[float, float] | None
    evaluated: int = 0
    excluded: int = 0

    def to_table(self) -> str:
        """Tab-separated rendering; aggregate rows delta<=d... then MAE."""
        lines = ["# aggregate (mean over pairs)", "metric\tvalue"]
        lines += self._metric_rows(self.aggregate_rates, self.aggregate_mae)
        lines.append("")
        lines.append("# pooled (all keypoints together)")
        lines.append("metric\tvalue")
        lines += self._metric_rows(self.pooled_rates, self.pooled_mae)
        lines.append("")
        lines.append(f"# pairs evaluated={self.evaluated} excluded={self.excluded}")
        header = ["pair_id", "n_points"]
        header += [f"delta<={_fmt_delta(d)}" for d in self.deltas]
        header += ["MAE", "status"]
        lines.append("\t".join(header))
        for p in self.pairs:
            row = [p.pair_id, str(p.n_points)]
            if p.succeeded:
                row += [f"{p.rates[d]:.2f}" for d in self.deltas]
                row += [f"{p.mae:.4f}", "ok"]
            else:
                row += ["-"] * (len(self.deltas) + 1) + [p.failure]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"

    def _metric_rows(self, rates, mae_value) -> list[str]:
        rows = []
        for d in self.deltas:
            val = "-" if rates is None else f"{rates[d]:.2f}"
            rows.append(f"delta<={_fmt_delta(d)}\t{val}")
        rows.append("MAE\t" + ("-" if mae_value is None else f"{mae_value:.4f}"))
        return rows

    def to_json_dict(self) -> dict:
        return {
            "deltas": list(self.deltas),
            "aggregate": {
                "mae": self.aggregate_mae,
                "rates": _rates_list(self.aggregate_rates, self.deltas),
            },
            "pooled": {
                "mae": self.pooled_mae,
                "rates": _rates_list(self.pooled_rates, self.deltas),
            },
            "evaluated": self.evaluated,
            "excluded": self.excluded,
            "pairs": [
                {
                    "pair_id": p.pair_id,
                    "n_points": p.n_points,
                    "mae": p.mae,
                    "rates": _rates_list(p.rates, self.deltas),
                    "failure": p.failure,
                }
                for p in self.pairs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


def _fmt_delta(d: float) -> str:
    return f"{d:g}"


def _rates_list(rates, deltas):
    if rates is None:
        return None
    return [rates[d] for d in deltas]


_FAILURE_CODES = (
    (InsufficientMatchesError, "insufficient_matches"),
    (DegeneracyError, "degenerate"),
    (CapacityError, "capacity"),
    (PointAtInfinityError, "numerical"),
    (NumericalError, "numerical"),
    (DimensionError, "dimension"),
    (TruncationError, "format"),
    (FormatError, "format"),
    (ValidationError, "validation"),
    (OSError, "io"),
)


def _failure_code(exc: Exception) -> str | None:
    for etype, code in _FAILURE_CODES:
        if isinstance(exc, etype):
            return code
    return None


def load_features_for(path: str, config: RunConfig) -> FeatureGrid:
    """Feature grid for an input path: FGRD files load directly, anything
    else is read as an image and run through the built-in descriptor.
    The result is resampled to the working grid and L2-normalized."""
    if str(path).endswith(".fgrd"):
        grid = load_feature_grid(path)
    else:
        image = load_gray_image(path)
        grid = builtin_dense_descriptor(
            image,
            grid_width=config.grid_width,
            grid_height=config.grid_height,
            patch_radius=config.patch_radius,
            orientation_bins=config.orientation_bins,
        )
    if (grid.grid_width, grid.grid_height) != (config.grid_width, config.grid_height):
        grid = resample_grid(grid, config.grid_width, config.grid_height)
    return l2_normalize_channels(grid, config.norm_epsilon)


def match_grids(grid1: FeatureGrid, grid2: FeatureGrid, config: RunConfig, pair_id: str = ""):
    """Shared pipeline core: affinity -> embedding -> matches -> refined H.

    Returns (homography, match_set, refine_result).
    """
    affinity = joint_affinity(
        grid1,
        grid2,
        epsilon=config.norm_epsilon,
        max_distance=config.max_distance,
        variant=config.distance_variant,
    )
    embedding = eig_topm(affinity, config.m, config.triviality_threshold)
    matches = embed_match(
        embedding,
        GridGeometry.from_grid(grid1),
        GridGeometry.from_grid(grid2),
        ratio_threshold=config.ratio_threshold,
        mutual=config.mutual,
        pair_id=pair_id,
    )
    h0 = estimate_homography_dlt(matches)
    result = refine_homography(
        h0,
        matches,
        huber_delta=config.huber_delta,
        max_iters=config.refine_max_iters,
        tol=config.refine_tol,
    )
    return result.homography, matches, result


def evaluate_pair(task: PairTask, config: RunConfig) -> PairResult:
    """Run the full pipeline on one pair and score it against ground truth."""
    try:
        grid1 = load_features_for(task.image1_path, config)
        grid2 = load_features_for(task.image2_path, config)
        h, _, _ = match_grids(grid1, grid2, config, pair_id=task.pair_id)
        p1 = task.points1
        if task.points2 is not None:
            p2 = task.points2
        else:
            p2 = project_points(Homography(task.gt_homography), p1)
        est = project_points(h, p1)
        rates = {
            d: delta_match_rate(est, p2, d, config.chebyshev_window)
            for d in config.deltas
        }
        return PairResult(
            pair_id=task.pair_id,
            n_points=len(p1),
            mae=mae(est, p2),
            rates=rates,
        )
    except Exception as exc:  # noqa: BLE001 - failures become report rows
        code = _failure_code(exc)
        if code is None:
            raise
        return PairResult(
            pair_id=task.pair_id,
            n_points=len(task.points1),
            mae=None,
            rates=None,
            failure=code,
        )


def run_eval(tasks: list[PairTask], config: RunConfig) -> EvalReport:
    """Evaluate every pair and aggregate; failed pairs are excluded from
    aggregates but reported with a failure code.  Results are ordered by
    pair_id regardless of input order."""
    if not tasks:
        raise UsageError("evaluation dataset is empty")
    results = [evaluate_pair(t, config) for t in tasks]
    results.sort(key=lambda r: r.pair_id)

    good = [r for r in results if r.succeeded]
    deltas = config.deltas
    if good:
        aggregate_mae = float(np.mean([r.mae for r in good]))
        aggregate_rates = {
            d: float(np.mean([r.rates[d] for r in good])) for d in deltas
        }
        weights = np.array([r.n_points for r in good], dtype=np.float64)
        pooled_mae = float(np.sum([r.mae * r.n_points for r in good]) / weights.sum())
        pooled_rates = {
            d: float(
                np.sum([r.rates[d] * r.n_points for r in good]) / weights.sum()
            )
            for d in deltas
        }
    else:
        aggregate_mae = aggregate_rates = pooled_mae = pooled_rates = None

    return EvalReport(
        deltas=deltas,
        pairs=results,
        aggregate_mae=aggregate_mae,
        aggregate_rates=aggregate_rates,
        pooled_mae=pooled_mae,
        pooled_rates=pooled_rates,
        evaluated=len(good),
        excluded=len(results) - len(good),
    )
