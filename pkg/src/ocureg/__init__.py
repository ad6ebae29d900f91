"""ocureg: self-supervised registration for ocular-surface mapping.

Recovers 6-DOF camera egomotion between monocular slit-lamp frames by
direct minimization of masked registration losses (semantic, photometric,
structural, smoothness, and a two-sphere shape prior), and applies the
recovered motion to point tracking and pairwise mosaicking.  A synthetic
two-sphere eye renderer supplies ground truth for verification.
"""

from . import camera, config, evalreg, imaging, losses, optim, spherefit, synth, warp
from ._kernels import backend as kernel_backend

__all__ = [
    "camera",
    "config",
    "evalreg",
    "imaging",
    "losses",
    "optim",
    "spherefit",
    "synth",
    "warp",
    "kernel_backend",
]

__version__ = "0.1.0"
