"""vortexlab: a numerical laboratory for the 2D viscous point-vortex system,
its Navier-Stokes mean-field limit, and the quantitative estimates that
connect them."""

from .kernel import KernelConfig, biot_savart, kernel_split, stream_potential
from .meanfield import (
    DensityGrid,
    DensitySeries,
    VelocityGrid,
    heat_semigroup,
    lamb_oseen,
    pde_step,
    solve,
    velocity_from_vorticity,
)
from .particle import (
    GaussianMixtureInit,
    GridInit,
    LambOseenInit,
    ParticleEnsemble,
    SimConfig,
    drift_direct,
    drift_treecode,
    em_step,
    mckean_step,
    simulate,
)
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "KernelConfig",
    "biot_savart",
    "kernel_split",
    "stream_potential",
    "DensityGrid",
    "DensitySeries",
    "VelocityGrid",
    "heat_semigroup",
    "lamb_oseen",
    "pde_step",
    "solve",
    "velocity_from_vorticity",
    "GaussianMixtureInit",
    "GridInit",
    "LambOseenInit",
    "ParticleEnsemble",
    "SimConfig",
    "drift_direct",
    "drift_treecode",
    "em_step",
    "mckean_step",
    "simulate",
    "RngStream",
    "__version__",
]
