"""Command line driver: describe / match / eval subcommands.

Exit codes (stable): 0 success, 1 usage, 2 I/O, 3 validation or dimension
errors in inputs, 4 numerical or degeneracy failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import RunConfig
from .errors import (
    CapacityError,
    DegeneracyError,
    DimensionError,
    EigenmatchError,
    FormatError,
    InsufficientMatchesError,
    NumericalError,
    PointAtInfinityError,
    TruncationError,
    UsageError,
    ValidationError,
)
from .evaluation import load_features_for, match_grids, parse_manifest, run_eval
from .features import (
    builtin_dense_descriptor,
    l2_normalize_channels,
    load_gray_image,
    write_feature_grid,
)
from .homography import write_homography_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

_ERROR_EXIT_CODES = (
    (UsageError, EXIT_USAGE),
    (TruncationError, EXIT_VALIDATION),
    (FormatError, EXIT_VALIDATION),
    (ValidationError, EXIT_VALIDATION),
    (DimensionError, EXIT_VALIDATION),
    (CapacityError, EXIT_NUMERICAL),
    (InsufficientMatchesError, EXIT_NUMERICAL),
    (DegeneracyError, EXIT_NUMERICAL),
    (NumericalError, EXIT_NUMERICAL),
    (PointAtInfinityError, EXIT_NUMERICAL),
)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage by default; remap onto our exit table
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file with RunConfig fields")
    parser.add_argument("--grid-width", type=int, dest="grid_width")
    parser.add_argument("--grid-height", type=int, dest="grid_height")
    parser.add_argument("--m", type=int, dest="m", help="embedding dimension")
    parser.add_argument(
        "--triviality-threshold", type=float, dest="triviality_threshold"
    )
    parser.add_argument(
        "--distance-variant", choices=("cosine", "euclidean"), dest="distance_variant"
    )
    parser.add_argument("--ratio-threshold", type=float, dest="ratio_threshold")
    parser.add_argument(
        "--mutual",
        action=argparse.BooleanOptionalAction,
        default=None,
        dest="mutual",
    )
    parser.add_argument("--huber-delta", type=float, dest="huber_delta")
    parser.add_argument("--refine-max-iters", type=int, dest="refine_max_iters")
    parser.add_argument("--refine-tol", type=float, dest="refine_tol")
    parser.add_argument(
        "--deltas", dest="deltas", help="comma-separated pixel thresholds"
    )
    parser.add_argument("--seed", type=int, dest="seed")
    parser.add_argument("--patch-radius", type=int, dest="patch_radius")
    parser.add_argument("--orientation-bins", type=int, dest="orientation_bins")
    parser.add_argument(
        "--chebyshev-window",
        action=argparse.BooleanOptionalAction,
        default=None,
        dest="chebyshev_window",
    )


def _build_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_json_file(args.config) if args.config else RunConfig()
    names = {f.name for f in dataclasses.fields(RunConfig)}
    overrides = {}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if isinstance(overrides.get("deltas"), str):
        try:
            overrides["deltas"] = tuple(
                float(t) for t in overrides["deltas"].split(",") if t
            )
        except ValueError as exc:
            raise UsageError(f"bad --deltas value: {overrides['deltas']!r}") from exc
    return config.replace(**overrides)


def _cmd_describe(args) -> int:
    config = _build_config(args)
    image = load_gray_image(args.image)
    grid = builtin_dense_descriptor(
        image,
        grid_width=config.grid_width,
        grid_height=config.grid_height,
        patch_radius=config.patch_radius,
        orientation_bins=config.orientation_bins,
    )
    grid = l2_normalize_channels(grid, config.norm_epsilon)
    write_feature_grid(grid, args.output)
    print(
        f"wrote {args.output}: grid {grid.grid_width}x{grid.grid_height}"
        f"x{grid.channels} from {image.width}x{image.height} image"
    )
    return EXIT_OK


def _cmd_match(args) -> int:
    config = _build_config(args)
    grid1 = load_features_for(args.grid1, config)
    grid2 = load_features_for(args.grid2, config)
    h, matches, result = match_grids(grid1, grid2, config)
    write_homography_file(h, args.output)
    if args.matches:
        with open(args.matches, "w", encoding="utf-8") as fh:
            for (x1, y1), (x2, y2), s in zip(
                matches.points1, matches.points2, matches.scores
            ):
                fh.write(
                    f"{float(x1)!r} {float(y1)!r} "
                    f"{float(x2)!r} {float(y2)!r} {float(s)!r}\n"
                )
    print(
        f"wrote {args.output}: {len(matches)} matches, "
        f"objective {result.objectives[-1]:.6g} ({result.message})"
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _build_config(args)
    tasks = parse_manifest(args.manifest)
    if not tasks:
        raise UsageError(f"{args.manifest}: manifest lists no pairs")
    report = run_eval(tasks, config)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(report.to_table(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    print(f"evaluated {report.evaluated} pairs, excluded {report.excluded}")
    if report.aggregate_mae is not None:
        for d in report.deltas:
            print(f"delta<={d:g}\t{report.aggregate_rates[d]:.2f}")
        print(f"MAE\t{report.aggregate_mae:.4f}")
        return EXIT_OK
    print("no pair evaluated successfully", file=sys.stderr)
    return EXIT_NUMERICAL


def _make_parser() -> _Parser:
    parser = _Parser(
        prog="eigenmatch",
        description=(
            "Spectral joint-graph matching: dense features, shared "
            "eigenvector embedding, homography estimation and evaluation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_desc = sub.add_parser("describe", help="image -> FGRD feature grid")
    p_desc.add_argument("image")
    p_desc.add_argument("-o", "--output", required=True)
    _add_config_flags(p_desc)
    p_desc.set_defaults(func=_cmd_describe)

    p_match = sub.add_parser(
        "match", help="two feature grids (or images) -> homography + matches"
    )
    p_match.add_argument("grid1")
    p_match.add_argument("grid2")
    p_match.add_argument("-o", "--output", required=True, help="homography file")
    p_match.add_argument("--matches", help="optional match list output")
    _add_config_flags(p_match)
    p_match.set_defaults(func=_cmd_match)

    p_eval = sub.add_parser("eval", help="manifest -> metric report")
    p_eval.add_argument("manifest")
    p_eval.add_argument("-o", "--output", required=True, help="report directory")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=_cmd_eval)
    return parser


def _exit_code_for(exc: Exception) -> int:
    for etype, code in _ERROR_EXIT_CODES:
        if isinstance(exc, etype):
            return code
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EigenmatchError as exc:
        code = _exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    raise SystemExit(main())
