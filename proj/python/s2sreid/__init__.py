"""Set-to-set metric learning for cross-view re-identification."""

from ._s2s import (
    CenterMode,
    DataError,
    Dataset,
    DirectionWeights,
    GalleryMode,
    MapProtocol,
    MarginConfig,
    MiningConfig,
    MultiQueryAgg,
    NumericalError,
    PartNetwork,
    PhiUpdateMode,
    ScaleConfig,
    SyntheticSpec,
    TrainConfig,
    UsageError,
    LossOptions,
    build_network,
    class_loss,
    cmc,
    conventional_triplet_loss,
    generate_synthetic,
    load_dataset,
    load_model,
    map_score,
    pairwise_loss,
    regularization,
    run_gradient_check,
    sample_triplets,
    save_dataset,
    select_marginal_pairs,
    split_protocol,
    total_loss,
    train,
    triplet_loss,
    update_direction_weights,
)

__all__ = [
    "CenterMode",
    "DataError",
    "Dataset",
    "DirectionWeights",
    "GalleryMode",
    "LossOptions",
    "MapProtocol",
    "MarginConfig",
    "MiningConfig",
    "MultiQueryAgg",
    "NumericalError",
    "PartNetwork",
    "PhiUpdateMode",
    "ScaleConfig",
    "SyntheticSpec",
    "TrainConfig",
    "UsageError",
    "build_network",
    "class_loss",
    "cmc",
    "conventional_triplet_loss",
    "generate_synthetic",
    "load_dataset",
    "load_model",
    "map_score",
    "pairwise_loss",
    "regularization",
    "run_gradient_check",
    "sample_triplets",
    "save_dataset",
    "select_marginal_pairs",
    "split_protocol",
    "total_loss",
    "train",
    "triplet_loss",
    "update_direction_weights",
]
