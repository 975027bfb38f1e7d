"""Pseudo multi-source domain generalization: python surface of the C++ core.

The heavy lifting (synthetic data, transforms, penalties, training, the
experiment harness) lives in the `_core` extension; this package re-exports
its functions.
"""

from pmdg._core import (  # noqa: F401
    __version__,
    aggregate,
    apply_transform,
    coral_penalty,
    generate_synthetic,
    groupdro_reweight,
    irm_penalty,
    load_image_folder,
    mmd_penalty,
    pearson_correlation,
    registered_transforms,
    run_experiment,
    sd_penalty,
    soft_cross_entropy,
    spearman_correlation,
    vrex_penalty,
)

__all__ = [
    "__version__",
    "aggregate",
    "apply_transform",
    "coral_penalty",
    "generate_synthetic",
    "groupdro_reweight",
    "irm_penalty",
    "load_image_folder",
    "mmd_penalty",
    "pearson_correlation",
    "registered_transforms",
    "run_experiment",
    "sd_penalty",
    "soft_cross_entropy",
    "spearman_correlation",
    "vrex_penalty",
]
