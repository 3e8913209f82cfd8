"""Pipeline configuration shared by the CLI and the evaluation harness."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ValidationError
from .graph import DISTANCE_VARIANTS


@dataclass(frozen=True)
class RunConfig:
    """All tunables of the matching pipeline; JSON-serializable."""

    grid_width: int = 28
    grid_height: int = 28
    m: int = 30
    triviality_threshold: float = 1e-3
    distance_variant: str = "cosine"
    ratio_threshold: float = 0.9
    mutual: bool = True
    huber_delta: float = 2.0
    refine_max_iters: int = 50
    refine_tol: float = 1e-10
    deltas: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0)
    seed: int = 0
    patch_radius: int = 4
    orientation_bins: int = 8
    norm_epsilon: float = 1e-12
    max_distance: float = 1.0
    chebyshev_window: bool = False
    input_path: str | None = None
    output_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if self.grid_width < 1 or self.grid_height < 1:
            raise ValidationError("grid dimensions must be >= 1")
        if self.m < 1:
            raise ValidationError("m must be >= 1")
        if self.triviality_threshold <= 0:
            raise ValidationError("triviality_threshold must be > 0")
        if self.distance_variant not in DISTANCE_VARIANTS:
            raise ValidationError(
                f"distance_variant must be one of {DISTANCE_VARIANTS}"
            )
        if not (0.0 < self.ratio_threshold <= 1.0):
            raise ValidationError("ratio_threshold must lie in (0, 1]")
        if self.huber_delta <= 0:
            raise ValidationError("huber_delta must be > 0")
        if self.refine_max_iters < 1:
            raise ValidationError("refine_max_iters must be >= 1")
        if self.refine_tol <= 0:
            raise ValidationError("refine_tol must be > 0")
        if not self.deltas or any(d <= 0 for d in self.deltas):
            raise ValidationError("deltas must be positive")
        if self.patch_radius < 0:
            raise ValidationError("patch_radius must be >= 0")
        if self.orientation_bins < 4:
            raise ValidationError("orientation_bins must be >= 4")
        if self.norm_epsilon <= 0:
            raise ValidationError("norm_epsilon must be > 0")
        if self.max_distance <= 0:
            raise ValidationError("max_distance must be > 0")

    def replace(self, **overrides) -> "RunConfig":
        return dataclasses.replace(self, **overrides)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["deltas"] = list(self.deltas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data)
