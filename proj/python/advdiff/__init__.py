"""Diffusion purification against PGD attacks on synthetic lesion images.

Arrays are float64 in NCHW layout with pixel values in [0, 1]; labels are 0/1.
"""

from ._core import (
    Classifier,
    InvalidArgument,
    IoError,
    NoiseSchedule,
    NonFiniteError,
    Predictor,
    ShapeMismatch,
    accuracy,
    boundary_fraction,
    default_sweep_grid,
    forward_diffuse,
    generate_synthetic,
    linf_distance,
    noise_defense,
    pgd_attack,
    purify,
    run_cli,
    train_classifier,
    train_diffusion,
)

__version__ = "0.1.0"
