"""Spectral joint-graph matching of disparate image pairs.

Pipeline: dense per-cell features for both images -> joint affinity matrix
over all cells -> top-m non-trivial eigenvector embedding, split per image
-> nearest-neighbour matches in embedding space -> homography via
normalized DLT plus robust refinement -> evaluation metrics.
"""

from . import errors
from .config import RunConfig
from .evaluation import (
    EvalReport,
    KeypointAnnotation,
    PairResult,
    PairTask,
    augment_image,
    augment_pair,
    augment_points,
    delta_match_rate,
    evaluate_pair,
    load_annotation,
    load_features_for,
    mae,
    match_grids,
    parse_manifest,
    read_points_file,
    run_eval,
    split_dataset,
    write_annotation,
)
from .features import (
    FeatureGrid,
    GrayImage,
    builtin_dense_descriptor,
    l2_normalize_channels,
    load_feature_grid,
    load_gray_image,
    resample_grid,
    write_feature_grid,
)
from .graph import (
    JointAffinity,
    SpectralEmbedding,
    cosine_distance,
    cosine_distance_flagged,
    cross_affinity,
    eig_topm,
    intra_affinity,
    joint_affinity,
    read_embedding,
    write_embedding,
)
from .homography import (
    GridGeometry,
    Homography,
    MatchSet,
    RefineResult,
    embed_match,
    estimate_homography_dlt,
    pointwise_loss,
    project_points,
    read_homography_file,
    refine_homography,
    write_homography_file,
)

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "FeatureGrid",
    "GrayImage",
    "GridGeometry",
    "Homography",
    "JointAffinity",
    "KeypointAnnotation",
    "MatchSet",
    "PairResult",
    "PairTask",
    "RefineResult",
    "RunConfig",
    "SpectralEmbedding",
    "augment_image",
    "augment_pair",
    "augment_points",
    "builtin_dense_descriptor",
    "cosine_distance",
    "cosine_distance_flagged",
    "cross_affinity",
    "delta_match_rate",
    "eig_topm",
    "embed_match",
    "errors",
    "estimate_homography_dlt",
    "evaluate_pair",
    "intra_affinity",
    "joint_affinity",
    "l2_normalize_channels",
    "load_annotation",
    "load_feature_grid",
    "load_features_for",
    "load_gray_image",
    "mae",
    "match_grids",
    "parse_manifest",
    "pointwise_loss",
    "project_points",
    "read_embedding",
    "read_homography_file",
    "read_points_file",
    "refine_homography",
    "resample_grid",
    "run_eval",
    "split_dataset",
    "write_annotation",
    "write_embedding",
    "write_feature_grid",
    "write_homography_file",
]
