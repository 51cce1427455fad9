"""Biot-Savart kernel on the plane, its bounded/integrable split, and the
bounded stream potential.

The kernel is

    K(x) = (1/2pi) * (-x2, x1) / |x|^2,

the velocity kernel of 2D incompressible flow in vorticity form.  It is odd,
divergence-free, and orthogonal to x.  All functions here are pure and
vectorized over leading axes: an input of shape (..., 2) yields an output of
shape (..., 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]

TWO_PI = 2.0 * np.pi

# Pairs closer than this contribute zero drift; extends the K(0) = 0
# convention to near-collisions produced by discrete time stepping.
COLLISION_RADIUS = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    """Evaluation parameters for the Biot-Savart kernel.

    epsilon > 0 replaces |x|^2 by |x|^2 + epsilon^2 (Krasny-style blob
    regularization); epsilon = 0 is the exact kernel with K(0) = 0.
    split_radius is the radius of the bounded/integrable decomposition;
    the default 1 gives |far part| <= 1/(2pi).
    """

    epsilon: float = 0.0
    split_radius: float = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValueError("epsilon must be finite and >= 0")
        if not np.isfinite(self.split_radius) or self.split_radius <= 0:
            raise ValueError("split_radius must be finite and > 0")


def biot_savart(x, cfg: KernelConfig = KernelConfig()) -> FloatArray:
    """Evaluate K(x), regularized when cfg.epsilon > 0.

    Returns (1/2pi) * (-x2, x1) / (|x|^2 + eps^2).  For eps = 0 the value at
    x = 0 is the zero vector (K(0) = 0 convention).  The result is orthogonal
    to x for every eps >= 0.
    """
    x = np.asarray(x, dtype=np.float64)
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2
    denom = r2 + cfg.epsilon**2
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(denom > 0.0, 1.0 / (TWO_PI * denom), 0.0)
    out = np.empty_like(x)
    out[..., 0] = -x[..., 1] * scale
    out[..., 1] = x[..., 0] * scale
    return out


def kernel_split(x, split_radius: float = 1.0) -> tuple[FloatArray, FloatArray]:
    """Split the exact kernel into (far, near) parts at |x| = split_radius.

    far = K * 1_{|x| >= r} is bounded by 1/(2pi r); near = K * 1_{|x| < r} is
    integrable (its absolute value integrates to r over the disk).  The parts
    sum to the exact kernel.
    """
    x = np.asarray(x, dtype=np.float64)
    k = biot_savart(x)
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2
    is_far = (r2 >= split_radius**2)[..., None]
    far = np.where(is_far, k, 0.0)
    near = np.where(is_far, 0.0, k)
    return far, near


def stream_potential(x) -> FloatArray:
    """Bounded potential g with grad g = K.

    g(x) = -(1/2pi) arctan(x1 / x2) with the principal branch, extended to
    the x2 = 0 line by g = 1/4 on {x1 < 0} and g = -1/4 on {x1 > 0};
    g(0) = 0 (any bounded value is admissible there since g enters only
    through convolution).  The jump across x2 = 0 is genuine; |g| <= 1/4
    everywhere.
    """
    x = np.asarray(x, dtype=np.float64)
    x1 = x[..., 0]
    x2 = x[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        val = -np.arctan(x1 / x2) / TWO_PI
    on_line = x2 == 0.0
    val = np.where(on_line, -0.25 * np.sign(x1), val)
    return val if val.shape else np.float64(val)
