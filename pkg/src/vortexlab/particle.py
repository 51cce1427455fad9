"""Euler-Maruyama simulation of the interacting vortex system.

The N-particle dynamics is

    dX_i = (1/N) sum_{j != i} K(X_i - X_j) dt + sqrt(2 sigma) dW_i,

all vortices carrying equal strength 1/N.  Drift evaluation is either the
exact O(N^2) pairwise sum or the quadtree far-field approximation from
`treecode`.  Brownian increments come from counter-based streams, so a
trajectory is a pure function of (seed, step, particle, axis) and identical
under any thread schedule.

The single-particle limit dynamics dX = (K * rho_t)(X) dt + sqrt(2 sigma) dW
is integrated against velocity grids produced by the mean-field solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numba
import numpy as np
from numpy.typing import NDArray

from .errors import NumericalError
from .kernel import COLLISION_RADIUS, KernelConfig
from .meanfield import DensityGrid, VelocityGrid, gaussian_mixture_grid, lamb_oseen
from .rng import RngStream

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class ParticleEnsemble:
    """N particle positions at a common time, with diffusion strength sigma."""

    positions: FloatArray
    time: float = 0.0
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must have shape (N, 2)")
        if self.positions.shape[0] < 1:
            raise ValueError("need at least one particle")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be finite and > 0")

    @property
    def n(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one particle-system run."""

    n_particles: int
    sigma: float = 1.0
    dt: float = 1e-3
    t_end: float = 1.0
    seed: int = 0
    kernel: KernelConfig = field(default_factory=KernelConfig)
    drift_method: str = "direct"
    treecode_theta: float | None = None
    snapshot_every: int = 1

    def __post_init__(self) -> None:
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if self.t_end > 0 and self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.drift_method not in ("direct", "treecode"):
            raise ValueError("drift_method must be 'direct' or 'treecode'")
        if self.drift_method == "treecode":
            if self.treecode_theta is None or not 0.0 < self.treecode_theta < 1.0:
                raise ValueError("treecode requires treecode_theta in (0, 1)")
        elif self.treecode_theta is not None:
            raise ValueError("treecode_theta is only valid with drift_method='treecode'")


# ---------------------------------------------------------------------------
# Initial distributions


class InitialDensity:
    """Normalized initial law: i.i.d. sampling plus a grid representation."""

    def sample(self, gen: np.random.Generator, n: int) -> FloatArray:
        raise NotImplementedError

    def density_grid(self, half_width: float, n: int, sigma: float) -> DensityGrid:
        raise NotImplementedError


@dataclass(frozen=True)
class LambOseenInit(InitialDensity):
    """Centered Gaussian with per-axis variance 2 sigma t0 (vortex age t0)."""

    t0: float = 0.25

    def __post_init__(self) -> None:
        if self.t0 <= 0:
            raise ValueError("t0 must be > 0")

    def sample(self, gen: np.random.Generator, n: int, sigma: float = 1.0) -> FloatArray:
        return gen.standard_normal((n, 2)) * np.sqrt(2.0 * sigma * self.t0)

    def density_grid(self, half_width: float, n: int, sigma: float) -> DensityGrid:
        return lamb_oseen(sigma, self.t0, 0.0, half_width, n)


@dataclass(frozen=True)
class GaussianMixtureInit(InitialDensity):
    """Isotropic mixture; components are (weight, (cx, cy), variance)."""

    components: tuple

    def __post_init__(self) -> None:
        w = sum(c[0] for c in self.components)
        if abs(w - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if any(c[2] <= 0 for c in self.components):
            raise ValueError("mixture variances must be > 0")

    def sample(self, gen: np.random.Generator, n: int, sigma: float = 1.0) -> FloatArray:
        weights = np.array([c[0] for c in self.components])
        which = gen.choice(len(self.components), size=n, p=weights)
        out = gen.standard_normal((n, 2))
        for idx, (_, mean, var) in enumerate(self.components):
            sel = which == idx
            out[sel] = out[sel] * np.sqrt(var) + np.asarray(mean)
        return out

    def density_grid(self, half_width: float, n: int, sigma: float) -> DensityGrid:
        return gaussian_mixture_grid(list(self.components), half_width, n, sigma)


@dataclass(frozen=True)
class GridInit(InitialDensity):
    """Sample from a tabulated density: cell-categorical plus in-cell jitter."""

    grid: DensityGrid

    def __post_init__(self) -> None:
        if np.any(self.grid.values < 0):
            raise ValueError("grid density must be nonnegative")
        if abs(self.grid.mass() - 1.0) > 1e-8:
            raise ValueError("grid density must integrate to 1")

    def sample(self, gen: np.random.Generator, n: int, sigma: float = 1.0) -> FloatArray:
        probs = self.grid.values.ravel()
        probs = probs / probs.sum()
        cells = gen.choice(probs.size, size=n, p=probs)
        gi, gj = np.divmod(cells, self.grid.n)
        ax = self.grid.axis()
        jitter = gen.uniform(-0.5, 0.5, size=(n, 2)) * self.grid.h
        return np.column_stack([ax[gi], ax[gj]]) + jitter

    def density_grid(self, half_width: float, n: int, sigma: float) -> DensityGrid:
        if half_width != self.grid.half_width or n != self.grid.n:
            raise ValueError("grid geometry mismatch")
        return self.grid


# ---------------------------------------------------------------------------
# Drift evaluation


@numba.njit(cache=True, nogil=True, parallel=True)
def _drift_direct_kernel(pos: FloatArray, eps2: float, out: FloatArray) -> None:
    n = pos.shape[0]
    inv_two_pi_n = 1.0 / (2.0 * np.pi * n)
    for i in numba.prange(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        bx = 0.0
        by = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            r2 = dx * dx + dy * dy
            if r2 < COLLISION_RADIUS * COLLISION_RADIUS:
                continue
            s = inv_two_pi_n / (r2 + eps2)
            bx -= dy * s
            by += dx * s
        out[i, 0] = bx
        out[i, 1] = by


def drift_direct(ens: ParticleEnsemble, cfg: KernelConfig = KernelConfig()) -> FloatArray:
    """Exact pairwise drift b_i = (1/N) sum_{j != i} K(x_i - x_j).

    Coincident (and nearly coincident) pairs contribute zero via the
    K(0) = 0 convention.  The drifts sum to zero up to rounding because K
    is odd.
    """
    out = np.empty_like(ens.positions)
    _drift_direct_kernel(ens.positions, cfg.epsilon**2, out)
    return out


def drift_treecode(
    ens: ParticleEnsemble,
    theta: float,
    cfg: KernelConfig = KernelConfig(),
) -> FloatArray:
    """Quadtree far-field approximation of drift_direct.

    Cells with size/distance below theta are replaced by a multipole
    evaluation about their center of circulation; theta <= 0 degenerates to
    the direct sum.  The sup-norm error decreases monotonically with theta.
    """
    from .treecode import tree_drift

    if not theta < 1.0:
        raise ValueError("theta must be < 1")
    if theta <= 0.0:
        return drift_direct(ens, cfg)
    return tree_drift(ens.positions, theta, cfg.epsilon**2)


def _drift(ens: ParticleEnsemble, cfg: SimConfig) -> FloatArray:
    if cfg.drift_method == "treecode":
        return drift_treecode(ens, cfg.treecode_theta, cfg.kernel)
    return drift_direct(ens, cfg.kernel)


# ---------------------------------------------------------------------------
# Time stepping


def em_step(
    ens: ParticleEnsemble,
    dt: float,
    rng: RngStream | None,
    cfg: SimConfig,
    step: int | None = None,
) -> ParticleEnsemble:
    """One Euler-Maruyama step X' = X + dt b(X) + sqrt(2 sigma dt) xi.

    rng=None disables the noise term (drift-only test hook).  `step` is the
    counter-stream index; it defaults to round(time / dt).
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0.0:
        return ens
    if step is None:
        step = int(round(ens.time / dt))
    new = ens.positions + dt * _drift(ens, cfg)
    if rng is not None:
        noise = rng.normals(step, (ens.n, 2))
        new = new + np.sqrt(2.0 * ens.sigma * dt) * noise
    return replace(ens, positions=new, time=ens.time + dt)


def simulate(cfg: SimConfig, init: InitialDensity) -> list[ParticleEnsemble]:
    """Run one trajectory; returns snapshots every snapshot_every steps.

    The initial i.i.d. sample is always the first snapshot.  Runs are
    deterministic given cfg.seed.
    """
    rng = RngStream(cfg.seed)
    pos0 = init.sample(rng.init_generator(), cfg.n_particles, sigma=cfg.sigma)
    ens = ParticleEnsemble(positions=pos0, time=0.0, sigma=cfg.sigma)
    snapshots = [ens]
    if cfg.t_end == 0.0:
        return snapshots
    n_steps = int(round(cfg.t_end / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.t_end) > 1e-9 * max(1.0, cfg.t_end):
        raise ValueError("t_end must be an integer multiple of dt")
    for step in range(n_steps):
        ens = em_step(ens, cfg.dt, rng, cfg, step=step)
        if not np.all(np.isfinite(ens.positions)):
            raise NumericalError(f"non-finite particle positions at step {step}")
        if (step + 1) % cfg.snapshot_every == 0 or step + 1 == n_steps:
            snapshots.append(ens)
    return snapshots


def mckean_step(
    x,
    velocity: VelocityGrid,
    dt: float,
    rng: RngStream | None,
    sigma: float,
    step: int = 0,
) -> FloatArray:
    """Euler-Maruyama step of the limit dynamics with grid-interpolated drift.

    Raises DomainBreachError when x falls outside the velocity grid.
    """
    x = np.asarray(x, dtype=np.float64)
    drift = velocity.interp(x)
    new = x + dt * drift
    if rng is not None:
        noise = rng.normals(step, x.shape if x.ndim > 1 else (2,))
        new = new + np.sqrt(2.0 * sigma * dt) * noise
    return new
