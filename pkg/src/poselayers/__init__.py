"""poselayers: layered generative synthesis of a person in a new pose.

The pipeline segments a source image into body-part layers, moves each
part with a pose-derived similarity transform and differentiable bilinear
warping, synthesizes a target foreground/mask and a hole-filled
background, and composites the result. Training uses L1, perceptual
feature, and pose-conditioned adversarial losses.
"""

from . import data_io, geometry, losses, metrics, networks, pipeline, pose, training

__all__ = [
    "data_io",
    "geometry",
    "losses",
    "metrics",
    "networks",
    "pipeline",
    "pose",
    "training",
]

__version__ = "0.1.0"
