"""Fluctuation field of the particle system and its limiting linear SPDE.

The fluctuation measure is eta^N = sqrt(N) (empirical measure - rho), paired
against a fixed family of weighted Hermite test functions.  Its large-N limit
is the generalized Ornstein-Uhlenbeck dynamics

    dt eta = sigma Lap eta - (K * eta).grad rho - (K * rho).grad eta
             - sqrt(2 sigma) div( sqrt(rho) xi ),

with xi a vector space-time white noise.  The grid discretization uses the
exact spectral heat factor, spectral transport terms, and cell-wise white
noise increments of variance 2 sigma dt / cell_area per component; the
spatial integral of eta is conserved at zero exactly (the noise enters as a
divergence and the transport terms are spectrally flux-free), matching the
particle-side identity eta^N(1) = 0.

Convergence in negative Sobolev topologies is out of numerical reach; the
comparison is variance/covariance agreement over the finite test family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite
from numpy.typing import NDArray

from .errors import CflError
from .meanfield import CFL_FACTOR, DensityGrid, VelocityGrid, _Spectral, _velocity_hat
from .particle import ParticleEnsemble
from .rng import RngStream

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class TestFunction:
    """L2-normalized Hermite function psi_m(x1/s) psi_n(x2/s) / s."""

    id: str
    m: int
    n: int
    scale: float = 2.0

    def __call__(self, points) -> FloatArray:
        pts = np.asarray(points, dtype=np.float64)
        return (
            _hermite_1d(self.m, pts[..., 0] / self.scale)
            * _hermite_1d(self.n, pts[..., 1] / self.scale)
            / self.scale
        )


def _hermite_1d(m: int, xi: FloatArray) -> FloatArray:
    coeffs = np.zeros(m + 1)
    coeffs[m] = 1.0
    norm = np.sqrt(2.0**m * float(math.factorial(m)) * np.sqrt(np.pi))
    return hermite.hermval(xi, coeffs) * np.exp(-0.5 * xi**2) / norm


def hermite_family(max_degree: int = 4, scale: float = 2.0) -> list[TestFunction]:
    """All H_{m,n} with m + n <= max_degree (15 functions at degree 4)."""
    fam = []
    for total in range(max_degree + 1):
        for m in range(total + 1):
            n = total - m
            fam.append(TestFunction(id=f"H{m}{n}", m=m, n=n, scale=scale))
    return fam


def pair_fluctuation(ens: ParticleEnsemble, reference: DensityGrid, h: TestFunction) -> float:
    """sqrt(N) ( (1/N) sum h(X_i) - Int h rho ), the integral by quadrature.

    The quadrature weights are normalized by the reference mass so that the
    mass identity eta^N(constant) = 0 holds exactly in floating point.
    """
    emp = float(h(ens.positions).mean())
    xx, yy = reference.meshgrid()
    hv = h(np.stack([xx, yy], axis=-1))
    ref = float((hv * reference.values).sum()) / float(reference.values.sum())
    return float(np.sqrt(ens.n) * (emp - ref))


def test_function_moments(h: TestFunction, reference: DensityGrid) -> tuple[float, float]:
    """(Int h rho, Int h^2 rho) by grid quadrature."""
    xx, yy = reference.meshgrid()
    hv = h(np.stack([xx, yy], axis=-1))
    m1 = float((hv * reference.values).sum()) * reference.cell_area
    m2 = float((hv**2 * reference.values).sum()) * reference.cell_area
    return m1, m2


def initial_fluctuation_field(rho0: DensityGrid, gen: np.random.Generator) -> FloatArray:
    """Gaussian field matching the i.i.d. initial fluctuations.

    Covariance rho0(x) delta(x-y) - rho0(x) rho0(y) on the grid: a
    sqrt(rho0)-weighted white noise recentered so the spatial integral is
    exactly zero.
    """
    n = rho0.n
    h = rho0.h
    g = gen.standard_normal((n, n))
    a = np.sqrt(np.maximum(rho0.values, 0.0)) * g / h
    return a - rho0.values * (float(a.sum()) * rho0.cell_area)


def spde_step(
    eta: FloatArray,
    rho_ref: DensityGrid,
    velocity: VelocityGrid,
    dt: float,
    rng: RngStream | None,
    sigma: float,
    step: int = 0,
    transport: bool = True,
) -> FloatArray:
    """One semi-implicit step of the fluctuation SPDE.

    Exact spectral heat factor; explicit spectral transport (disabled by the
    transport=False test hook); noise realized as -div(sqrt(rho) W) with W
    i.i.d. N(0, 2 sigma dt / cell_area) per cell and component.  rng=None
    disables the noise.
    """
    n = rho_ref.n
    if eta.shape != (n, n):
        raise ValueError("eta shape mismatch")
    sp = _Spectral.get(n, rho_ref.half_width)
    h = rho_ref.h
    incr = np.zeros_like(eta)
    if transport:
        umax = velocity.max_speed()
        if umax > 0.0 and dt > CFL_FACTOR * h / umax:
            raise CflError(dt, CFL_FACTOR * h / umax)
        eta_hat = np.fft.rfft2(eta)
        rho_hat = np.fft.rfft2(rho_ref.values)
        kx_e, ky_e = _velocity_hat(eta_hat, sp)
        k_eta = np.stack(
            [
                np.fft.irfft2(kx_e, s=(n, n)),
                np.fft.irfft2(ky_e, s=(n, n)),
            ],
            axis=-1,
        )
        grad_rho = np.stack(
            [
                np.fft.irfft2(1j * sp.kx * rho_hat, s=(n, n)),
                np.fft.irfft2(1j * sp.ky * rho_hat, s=(n, n)),
            ],
            axis=-1,
        )
        grad_eta = np.stack(
            [
                np.fft.irfft2(1j * sp.kx * eta_hat, s=(n, n)),
                np.fft.irfft2(1j * sp.ky * eta_hat, s=(n, n)),
            ],
            axis=-1,
        )
        incr = -dt * (
            (k_eta * grad_rho).sum(axis=-1) + (velocity.values * grad_eta).sum(axis=-1)
        )
    state = eta + incr
    if rng is not None:
        w = rng.normals(step, (n, n, 2)) * (np.sqrt(2.0 * sigma * dt) / h)
        srho = np.sqrt(np.maximum(rho_ref.values, 0.0))
        wx_hat = np.fft.rfft2(srho * w[..., 0])
        wy_hat = np.fft.rfft2(srho * w[..., 1])
        noise = -np.fft.irfft2(1j * sp.kx * wx_hat + 1j * sp.ky * wy_hat, s=(n, n))
        state = state + noise
    out_hat = np.fft.rfft2(state) * np.exp(-sigma * sp.k2 * dt)
    return np.fft.irfft2(out_hat, s=(n, n))


def pair_field(eta: FloatArray, grid: DensityGrid, h: TestFunction) -> float:
    """Quadrature pairing of a grid fluctuation field with a test function."""
    xx, yy = grid.meshgrid()
    return float((h(np.stack([xx, yy], axis=-1)) * eta).sum()) * grid.cell_area


@dataclass
class FluctuationSet:
    """Pairings of one fluctuation source: values[run, test_function]."""

    time: float
    h_ids: list[str]
    values: FloatArray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.h_ids):
            raise ValueError("values must have shape (runs, len(h_ids))")


def covariance_compare(particle: FluctuationSet, spde: FluctuationSet) -> dict:
    """Per-test-function variance and cross-covariance comparison.

    Returns per-h variance of both sets with a normalized discrepancy
    |v_p - v_s| / max(v_p, v_s), approximate 95% chi-square bands on each
    variance, the Frobenius-normalized covariance discrepancy, and skewness
    and excess kurtosis of the particle samples.
    """
    if particle.h_ids != spde.h_ids:
        raise ValueError("mismatched test-function sets")
    if abs(particle.time - spde.time) > 1e-9:
        raise ValueError("mismatched times")
    out = {"time": particle.time, "per_h": []}
    for j, hid in enumerate(particle.h_ids):
        a = particle.values[:, j]
        b = spde.values[:, j]
        va = float(a.var(ddof=1))
        vb = float(b.var(ddof=1))
        ra, rb = len(a), len(b)
        ci_a = (va * (ra - 1) / _chi2_ppf(0.975, ra - 1), va * (ra - 1) / _chi2_ppf(0.025, ra - 1))
        ci_b = (vb * (rb - 1) / _chi2_ppf(0.975, rb - 1), vb * (rb - 1) / _chi2_ppf(0.025, rb - 1))
        mu = a.mean()
        sd = a.std(ddof=1)
        z = (a - mu) / sd if sd > 0 else a * 0.0
        out["per_h"].append(
            {
                "h_id": hid,
                "var_particle": va,
                "var_spde": vb,
                "discrepancy": abs(va - vb) / max(va, vb) if max(va, vb) > 0 else 0.0,
                "ci_particle": ci_a,
                "ci_spde": ci_b,
                "skewness": float((z**3).mean()),
                "excess_kurtosis": float((z**4).mean() - 3.0),
            }
        )
    ca = np.cov(particle.values.T)
    cb = np.cov(spde.values.T)
    denom = max(np.linalg.norm(ca), np.linalg.norm(cb))
    out["cov_discrepancy"] = float(np.linalg.norm(ca - cb) / denom) if denom > 0 else 0.0
    out["max_var_discrepancy"] = max(r["discrepancy"] for r in out["per_h"])
    return out


def _chi2_ppf(q: float, df: int) -> float:
    from scipy import stats

    return float(stats.chi2.ppf(q, df))
