"""Synthetic-overhead-tile domain adaptation toolkit.

Thin wrapper over the C++ core: tile generation, entropy-driven adversarial
training with discriminator-input augmentation, and the clustering-purity
label-gap metric.
"""

from geoadapt._core import (
    __version__,
    apply_plan,
    augment_maps,
    entropy_map,
    evaluate_checkpoint,
    featurize_mask,
    generate_dataset,
    generate_tile,
    label_gap,
    mean_entropy,
    pair_iou,
    preset_domains,
    preset_names,
    purity_curve,
    run_experiment,
    sample_plan,
    self_information_map,
    softmax_probs,
)

__all__ = [
    "__version__",
    "apply_plan",
    "augment_maps",
    "entropy_map",
    "evaluate_checkpoint",
    "featurize_mask",
    "generate_dataset",
    "generate_tile",
    "label_gap",
    "mean_entropy",
    "pair_iou",
    "preset_domains",
    "preset_names",
    "purity_curve",
    "run_experiment",
    "sample_plan",
    "self_information_map",
    "softmax_probs",
]
