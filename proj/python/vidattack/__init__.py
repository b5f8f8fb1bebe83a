"""Sparse adversarial perturbations for recurrent video classifiers."""

from ._core import (
    Error,
    ThreatModel,
    attack,
    fooling_rate,
    generate_dataset,
    load_dataset,
    load_vten,
    map_perceptibility,
    per_frame_map,
    run_command,
    save_vten,
    sparsity,
)

__all__ = [
    "Error",
    "ThreatModel",
    "attack",
    "fooling_rate",
    "generate_dataset",
    "load_dataset",
    "load_vten",
    "map_perceptibility",
    "per_frame_map",
    "run_command",
    "save_vten",
    "sparsity",
]
