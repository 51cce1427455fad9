"""Propagation-of-chaos measurement and the entropy-method functionals.

The measurable side: pooled 1- and 2-particle marginal density estimates
from simulation ensembles, their relative entropy and L1 distance to the
mean-field density, the Csiszar-Kullback-Pinsker slack, and the log-log
convergence-rate fit in N.

The functional side: the symmetric pair functional

    phi(x, y) = 1/2 u(x).grad log rho(x) + 1/2 u(y).grad log rho(y)
              - 1/2 K(x - y).(grad log rho(x) - grad log rho(y)),

its two cancellation integrals against rho, the large-deviation constant

    gamma = C_exp * ( sup_{p >= 1} ||sup_y |phi(., y)|||_{L^p(rho dx)} / p )^2

with C_exp = 1600^2 + 36 e^4, the quadratic envelope constant for
sup_y |phi|, the lambda-route upper bound for the p-supremum, the eta
weight schedule, and the Donsker-Varadhan split of the entropy production
term.

L^p integrals over the unmasked far field are bounded analytically with the
fitted quadratic envelope for phi and the fitted Gaussian upper envelope
for rho (incomplete-gamma closed forms), so mask truncation is certified
rather than ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import special

from .errors import MaskError, SupportBreachError
from .kernel import biot_savart
from .meanfield import DensityGrid, VelocityGrid, _bilinear
from .particle import ParticleEnsemble
from .regularity import LogDensityFields, _dx, _dy, _mask_at

FloatArray = NDArray[np.float64]

# Universal constant of the pair-interaction exponential moment bound.
EXP_MOMENT_CONSTANT = 1600.0**2 + 36.0 * math.exp(4.0)

_MIN_POOLED_SAMPLES = 1000


# ---------------------------------------------------------------------------
# Marginal estimation


@dataclass(frozen=True)
class MarginalEstimate:
    """Normalized k-marginal density estimate on the standard grid."""

    k: int
    estimator: str
    bandwidth: float | None
    half_width: float
    n: int
    density: FloatArray
    sample_count: int

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** (2 * self.k)

    def mass(self) -> float:
        return float(self.density.sum()) * self.cell_volume


@dataclass
class ChaosReport:
    """Per-N chaos measurements and the convergence-rate fit."""

    rows: list[dict] = field(default_factory=list)
    fit: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)


def _pool_positions(runs: list[ParticleEnsemble], k: int) -> FloatArray:
    if not runs:
        raise ValueError("empty run list")
    t0 = runs[0].time
    if any(abs(r.time - t0) > 1e-9 for r in runs):
        raise ValueError("runs must share a common time")
    if k == 1:
        return np.concatenate([r.positions for r in runs], axis=0)
    if k == 2:
        # Disjoint index pairs (0,1), (2,3), ... keep the pooled pairs
        # identically distributed as the 2-marginal under exchangeability.
        pools = []
        for r in runs:
            m = (r.n // 2) * 2
            pools.append(r.positions[:m].reshape(-1, 4))
        return np.concatenate(pools, axis=0)
    raise ValueError("k must be 1 or 2")


def silverman_bandwidth(samples: FloatArray) -> float:
    """Silverman-type rule for 2D data: mean per-axis std times m^(-1/6)."""
    m = samples.shape[0]
    spread = float(samples.std(axis=0).mean())
    return spread * m ** (-1.0 / 6.0)


def _histogram_grid(
    samples: FloatArray, half_width: float, n: int, k: int
) -> FloatArray:
    h = 2.0 * half_width / n
    edges = -half_width + h * (np.arange(n + 1) - 0.5)
    inside = np.all((samples >= edges[0]) & (samples < edges[-1]), axis=1)
    if not inside.all():
        raise SupportBreachError(
            f"{int((~inside).sum())} of {samples.shape[0]} pooled samples fall "
            "outside the estimation box"
        )
    hist, _ = np.histogramdd(samples, bins=[edges] * (2 * k))
    return hist / (samples.shape[0] * h ** (2 * k))


def _gaussian_smooth(density: FloatArray, half_width: float, bandwidth: float) -> FloatArray:
    # Circular convolution with a sampled (hence nonnegative) Gaussian
    # kernel; a k-space-truncated kernel would ring with negative sidelobes
    # when the bandwidth approaches the grid spacing.
    n = density.shape[0]
    h = 2.0 * half_width / n
    off = np.arange(n)
    off = np.where(off > n // 2, off - n, off) * h
    k1 = np.exp(-0.5 * (off / bandwidth) ** 2)
    k1 /= k1.sum()
    k1_hat = np.fft.fft(k1)
    hat = np.fft.fftn(density)
    ndim = density.ndim
    for axis in range(ndim):
        shape = [1] * ndim
        shape[axis] = n
        hat *= k1_hat.reshape(shape)
    return np.fft.ifftn(hat).real


def marginal_density(
    runs: list[ParticleEnsemble],
    k: int,
    estimator: str = "kde",
    half_width: float = 12.0,
    n: int = 256,
    bandwidth: float | None = None,
) -> MarginalEstimate:
    """Pooled marginal density estimate over particles and runs.

    estimator='histogram' bins on the grid cells; 'kde' additionally smooths
    with a periodic Gaussian kernel (Silverman bandwidth by default).  For
    k=2 the grid is n^4 cells; keep n modest.
    """
    samples = _pool_positions(runs, k)
    count = samples.shape[0] if k == 1 else samples.shape[0]
    if samples.shape[0] * (1 if k == 1 else 2) < _MIN_POOLED_SAMPLES:
        raise ValueError(
            f"need at least {_MIN_POOLED_SAMPLES} pooled samples, "
            f"got {samples.shape[0]}"
        )
    if estimator not in ("histogram", "kde"):
        raise ValueError("estimator must be 'histogram' or 'kde'")
    pts = samples.reshape(-1, 2) if k == 2 else samples
    dens = _histogram_grid(samples, half_width, n, k)
    bw = None
    if estimator == "kde":
        h = 2.0 * half_width / n
        # Bandwidths below the grid spacing cannot be represented; the
        # Silverman default is floored at the cell size.
        bw = bandwidth if bandwidth is not None else max(silverman_bandwidth(pts), h)
        if bw <= 0:
            raise ValueError("bandwidth must be > 0")
        dens = _gaussian_smooth(dens, half_width, bw)
        np.maximum(dens, 0.0, out=dens)
    return MarginalEstimate(
        k=k,
        estimator=estimator,
        bandwidth=bw,
        half_width=half_width,
        n=n,
        density=dens,
        sample_count=count,
    )


def smooth_reference(reference: DensityGrid, bandwidth: float) -> DensityGrid:
    """Smooth the reference with the estimator kernel (bias matching)."""
    from dataclasses import replace

    sm = _gaussian_smooth(reference.values, reference.half_width, bandwidth)
    return replace(reference, values=np.maximum(sm, 0.0))


def _reference_values(est: MarginalEstimate, reference: DensityGrid) -> FloatArray:
    if reference.half_width != est.half_width or reference.n != est.n:
        raise ValueError("estimate and reference grids are incompatible")
    if est.k == 1:
        return reference.values
    r = reference.values
    return r[:, :, None, None] * r[None, None, :, :]


def relative_entropy_k(
    est: MarginalEstimate, reference: DensityGrid, support_floor: float = 0.0
) -> float:
    """Scaled plug-in relative entropy (1/k) Int est log(est/ref).

    The integrand is zero where the estimate vanishes.  Estimate mass on
    cells where the reference is at or below support_floor raises
    SupportBreachError (a truncation or support bug upstream).
    """
    ref = _reference_values(est, reference)
    p = est.density
    breach = (p > 0) & (ref <= support_floor)
    breach_mass = float(p[breach].sum()) * est.cell_volume if breach.any() else 0.0
    if breach_mass > 1e-12:
        raise SupportBreachError(
            f"estimate mass {breach_mass:g} on {int(breach.sum())} cells with "
            f"reference <= {support_floor:g}"
        )
    pos = (p > 0) & (ref > 0)
    val = np.zeros_like(p)
    val[pos] = p[pos] * (np.log(p[pos]) - np.log(ref[pos]))
    return float(val.sum()) * est.cell_volume / est.k


def l1_and_ckp(
    est: MarginalEstimate,
    reference: DensityGrid,
    h1: float,
    estimator_tolerance: float = 1e-9,
) -> dict:
    """L1 distance and the Csiszar-Kullback-Pinsker check L1 <= sqrt(2 H1)."""
    ref = _reference_values(est, reference)
    l1 = float(np.abs(est.density - ref).sum()) * est.cell_volume
    bound = math.sqrt(max(2.0 * h1, 0.0))
    return {
        "l1": l1,
        "ckp_holds": bool(l1 <= bound + estimator_tolerance),
        "ckp_slack": bound - l1,
    }


def convergence_fit(rows: list[tuple[float, float]]) -> dict:
    """Least-squares fit of log error against log N."""
    if len(rows) < 3:
        raise ValueError("need at least 3 rows")
    ns = np.array([r[0] for r in rows], dtype=float)
    errs = np.array([r[1] for r in rows], dtype=float)
    if np.any(errs <= 0.0) or np.any(ns <= 0.0):
        raise ValueError("N and errors must be positive")
    x = np.log(ns)
    y = np.log(errs)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float((resid**2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot < 1e-30 else 1.0 - ss_res / ss_tot
    return {"slope": float(slope), "intercept": float(intercept), "r2": float(r2)}


# ---------------------------------------------------------------------------
# The pair functional phi


def phi_eval(x, y, fields: LogDensityFields, velocity: VelocityGrid) -> float:
    """Evaluate phi(x, y) with grid-interpolated u and grad log rho.

    Both points must lie in the valid mask; the kernel term uses the exact
    Biot-Savart kernel with K(0) = 0, so phi(x, x) = u(x).grad log rho(x).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    for p in (x, y):
        if not _mask_at(fields, p):
            raise MaskError(f"phi_eval: point {p} outside the valid mask")
    L, h = fields.half_width, fields.h
    ux = velocity.interp(x)
    uy = velocity.interp(y)
    gx = np.array(
        [_bilinear(fields.grad_f[..., 0], x, L, h), _bilinear(fields.grad_f[..., 1], x, L, h)]
    )
    gy = np.array(
        [_bilinear(fields.grad_f[..., 0], y, L, h), _bilinear(fields.grad_f[..., 1], y, L, h)]
    )
    kxy = biot_savart(x - y)
    return float(
        0.5 * (ux @ gx) + 0.5 * (uy @ gy) - 0.5 * (kxy @ (gx - gy))
    )


def _phi_block(
    xi: FloatArray,
    ai: FloatArray,
    gi: FloatArray,
    xj: FloatArray,
    aj: FloatArray,
    gj: FloatArray,
) -> FloatArray:
    """phi on a block of point pairs; a = 1/2 u.grad f precomputed."""
    dx = xi[:, None, 0] - xj[None, :, 0]
    dy = xi[:, None, 1] - xj[None, :, 1]
    r2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(r2 > 0, 1.0 / (2.0 * np.pi * r2), 0.0)
    kx = -dy * s
    ky = dx * s
    wx = gi[:, None, 0] - gj[None, :, 0]
    wy = gi[:, None, 1] - gj[None, :, 1]
    return ai[:, None] + aj[None, :] - 0.5 * (kx * wx + ky * wy)


def _masked_points(fields: LogDensityFields) -> tuple[FloatArray, FloatArray]:
    idx = np.argwhere(fields.mask)
    ax = fields.axis()
    pts = np.column_stack([ax[idx[:, 0]], ax[idx[:, 1]]])
    return pts, idx


def sup_phi_field(
    fields: LogDensityFields, velocity: VelocityGrid, chunk: int = 256
) -> dict:
    """s(x) = sup over masked grid y of |phi(x, y)| for every masked x."""
    pts, idx = _masked_points(fields)
    if pts.shape[0] == 0:
        raise MaskError("sup_phi_field: empty mask")
    u = velocity.values[idx[:, 0], idx[:, 1]]
    g = fields.grad_f[idx[:, 0], idx[:, 1]]
    a = 0.5 * (u * g).sum(axis=1)
    m = pts.shape[0]
    s = np.empty(m)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        block = _phi_block(pts[lo:hi], a[lo:hi], g[lo:hi], pts, a, g)
        s[lo:hi] = np.abs(block).max(axis=1)
    return {"points": pts, "index": idx, "s": s, "half_u_dot_g": a, "grad_f": g}


def psi_envelope_fit(fields: LogDensityFields, s: FloatArray, pts: FloatArray) -> float:
    """Fit C1' in sup_y |phi(x, y)| <= C1' (1 + sqrt(t) + |x|^2)."""
    r2 = (pts**2).sum(axis=1)
    env = 1.0 + math.sqrt(max(fields.time, 0.0)) + r2
    return float((s / env).max())


def gamma_estimate(
    fields: LogDensityFields,
    velocity: VelocityGrid,
    rho: DensityGrid,
    p_max: int = 64,
    c2_prime: float | None = None,
) -> dict:
    """Estimate the large-deviation constant gamma and its companions.

    Returns gamma = EXP_MOMENT_CONSTANT * sup_ratio^2 with

        sup_ratio = max_{1 <= p <= p_max} ||s||_{L^p(rho dx)} / p,
        s(x) = sup_y |phi(x, y)|,

    the fitted quadratic envelope constant c1_prime, and the lambda-route
    upper bound (1/lambda) Int exp(lambda s) rho dx evaluated at
    lambda = 1/(2 c1' (8t + c2')).  The unmasked far field enters through
    analytic tail integrals of the fitted envelopes.
    """
    if p_max < 8:
        raise ValueError("p_max must be >= 8")
    if c2_prime is None:
        from .meanfield import DensitySeries
        from .regularity import gaussian_upper_check

        c2_prime = gaussian_upper_check(DensitySeries([rho])).fitted_constant
    sup = sup_phi_field(fields, velocity)
    pts, idx, s = sup["points"], sup["index"], sup["s"]
    c1p = psi_envelope_fit(fields, s, pts)
    t = max(fields.time, 0.0)
    weights = rho.values[idx[:, 0], idx[:, 1]] * rho.cell_area
    r_mask = float(np.sqrt((pts**2).sum(axis=1)).max())
    a_env = 1.0 + math.sqrt(t)
    beta = 8.0 * t + c2_prime
    tv1 = max(t, 1.0)

    pos = (s > 0.0) & (weights > 0.0)
    log_s = np.log(s[pos]) if pos.any() else np.empty(0)
    log_w = np.log(weights[pos]) if pos.any() else np.empty(0)

    def log_tail_p(p: int) -> float:
        # Int_{r > r_mask} [c1'(a + r^2)]^p * env(r) 2 pi r dr in log form.
        if c1p <= 0.0:
            return -np.inf
        z = (a_env + r_mask**2) / beta
        with np.errstate(divide="ignore"):
            log_q = np.log(special.gammaincc(p + 1, z))
        if not np.isfinite(log_q):
            return -np.inf
        return (
            math.log(math.pi * c2_prime / tv1)
            + p * math.log(c1p)
            + a_env / beta
            + (p + 1) * math.log(beta)
            + special.gammaln(p + 1)
            + log_q
        )

    sup_ratio = 0.0
    p_at = 1
    for p in range(1, p_max + 1):
        if log_s.size:
            log_main = special.logsumexp(p * log_s + log_w)
        else:
            log_main = -np.inf
        log_norm_p = np.logaddexp(log_main, log_tail_p(p)) / p
        ratio = math.exp(log_norm_p) / p if np.isfinite(log_norm_p) else 0.0
        if ratio > sup_ratio:
            sup_ratio = ratio
            p_at = p
    gamma = EXP_MOMENT_CONSTANT * sup_ratio**2

    if c1p <= 0.0:
        lambda_route = 0.0
        lam = np.inf
    else:
        lam = 1.0 / (2.0 * c1p * beta)
        expo = lam * s
        if np.any(expo > 700.0):
            raise FloatingPointError(
                "divergent exponential quadrature: lambda * s exceeds exp range "
                f"(max exponent {expo.max():g})"
            )
        main = float((np.exp(expo) * weights).sum())
        tail = (
            math.pi
            * (c2_prime / tv1)
            * math.exp(lam * c1p * a_env)
            * 2.0
            * beta
            * math.exp(-(r_mask**2) / (2.0 * beta))
        )
        total = main + tail
        if not np.isfinite(total):
            raise FloatingPointError("divergent exponential quadrature")
        lambda_route = total / lam

    return {
        "gamma": gamma,
        "sup_ratio": sup_ratio,
        "p_at_sup": p_at,
        "lambda_route": lambda_route,
        "lambda": lam,
        "c1_prime": c1p,
        "c2_prime": c2_prime,
        "mask_points": int(pts.shape[0]),
    }


def eta_schedule(t: float, c5: float) -> float:
    """Weight eta(t) = 1 / (c5 (1 + t)) for the Donsker-Varadhan split."""
    if c5 <= 0.0:
        raise ValueError("c5 must be > 0")
    if t < 0.0:
        raise ValueError("t must be >= 0")
    return 1.0 / (c5 * (1.0 + t))


# ---------------------------------------------------------------------------
# Cancellation integrals


def phi_cancellation_check(
    rho: DensityGrid,
    fields: LogDensityFields,
    velocity: VelocityGrid,
    nodes,
    mode: str = "periodic",
    drop_pair_term: bool = False,
) -> dict:
    """Quadrature of Int phi(x, z) rho(x) dx and Int phi(z, y) rho(y) dy.

    mode='periodic' evaluates the convolution-type terms with the box
    kernel that defines the velocity grid (the discrete operator for which
    div K = 0 and K * rho = u hold exactly), so the result measures the
    algebraic cancellation itself.  mode='pointwise' performs the naive
    midpoint quadrature with the free-space kernel, whose O(h^2 log) error
    is reported as-is.  drop_pair_term omits the K(x-y) term (negative
    control; the integrals then equal 1/2 u.grad log rho at the node).
    """
    if mode not in ("periodic", "pointwise"):
        raise ValueError("mode must be 'periodic' or 'pointwise'")
    nodes = np.atleast_2d(np.asarray(nodes, dtype=np.float64))
    h = rho.h
    area = rho.cell_area
    mass = rho.mass()
    L = rho.half_width

    if mode == "periodic":
        # The box kernel is its own velocity operator: using the raw
        # periodic convolution for u keeps the (u, K) pair exactly
        # consistent on the grid.
        sp_gx, sp_gy = _spectral_gradient(rho)
        conv_rho = _box_kernel_convolution(rho, rho.values)  # periodic u
        u = conv_rho
        s0 = 0.5 * float((u[..., 0] * sp_gx + u[..., 1] * sp_gy).sum()) * area
        conv_gx = _box_kernel_convolution(rho, sp_gx)
        conv_gy = _box_kernel_convolution(rho, sp_gy)
    else:
        u = velocity.values
        cd_gx, cd_gy = _dx(rho.values, h), _dy(rho.values, h)
        s0 = 0.5 * float((u[..., 0] * cd_gx + u[..., 1] * cd_gy).sum()) * area

    x_int = np.empty(nodes.shape[0])
    y_int = np.empty(nodes.shape[0])
    ax = rho.axis()
    for m, z in enumerate(nodes):
        if not _mask_at(fields, z):
            raise MaskError(f"cancellation node {z} outside the valid mask")
        gz = np.array(
            [
                _bilinear(fields.grad_f[..., 0], z, L, h),
                _bilinear(fields.grad_f[..., 1], z, L, h),
            ]
        )
        uz = _grid_sample(u, z, L, h) if mode == "periodic" else velocity.interp(z)
        base = 0.5 * float(uz @ gz)
        if mode == "periodic":
            # Int K(x-z) g(x) dx = -(K conv g)(z) for the box kernel.
            q0 = -_grid_sample(conv_rho, z, L, h)  # Int K(x-z) rho(x) dx
            q1 = -(
                _grid_sample(conv_gx, z, L, h)[..., 0]
                + _grid_sample(conv_gy, z, L, h)[..., 1]
            )
            x_val = s0 + base * mass
            y_val = s0 + base * mass
            if not drop_pair_term:
                x_val -= 0.5 * (q1 - float(q0 @ gz))
                # y side: Int K(z-y) rho = +u-type, Int K(z-y).grad rho = +q1
                q0y = -q0
                q1y = -q1
                y_val -= 0.5 * (float(q0y @ gz) - q1y)
        else:
            dxv = ax[:, None] - z[0]
            dyv = ax[None, :] - z[1]
            r2 = dxv**2 + dyv**2
            with np.errstate(divide="ignore", invalid="ignore"):
                sK = np.where(r2 > 0, 1.0 / (2.0 * np.pi * r2), 0.0)
            kx = -dyv * sK
            ky = dxv * sK
            x_val = s0 + base * mass
            y_val = s0 + base * mass
            if not drop_pair_term:
                # x integral: -1/2 Int K(x-z).(grad rho(x) - rho(x) gz) dx
                q1 = float((kx * cd_gx + ky * cd_gy).sum()) * area
                q0 = np.array([float((kx * rho.values).sum()), float((ky * rho.values).sum())]) * area
                x_val -= 0.5 * (q1 - float(q0 @ gz))
                y_val -= 0.5 * (float((-q0) @ gz) - (-q1))
        x_int[m] = x_val
        y_int[m] = y_val
    return {
        "max_abs_x_integral": float(np.abs(x_int).max()),
        "max_abs_y_integral": float(np.abs(y_int).max()),
        "x_integrals": x_int,
        "y_integrals": y_int,
    }


def _spectral_gradient(rho: DensityGrid) -> tuple[FloatArray, FloatArray]:
    from .meanfield import _Spectral

    sp = _Spectral.get(rho.n, rho.half_width)
    rho_hat = np.fft.rfft2(rho.values)
    gx = np.fft.irfft2(1j * sp.kx * rho_hat, s=(rho.n, rho.n))
    gy = np.fft.irfft2(1j * sp.ky * rho_hat, s=(rho.n, rho.n))
    return gx, gy


def _box_kernel_convolution(rho: DensityGrid, values: FloatArray) -> FloatArray:
    """(K conv values) on the grid via the spectral box kernel."""
    from .meanfield import _Spectral, _velocity_hat

    sp = _Spectral.get(rho.n, rho.half_width)
    v_hat = np.fft.rfft2(values)
    cx_hat, cy_hat = _velocity_hat(v_hat, sp)
    out = np.empty((rho.n, rho.n, 2))
    out[..., 0] = np.fft.irfft2(cx_hat, s=(rho.n, rho.n))
    out[..., 1] = np.fft.irfft2(cy_hat, s=(rho.n, rho.n))
    return out


def _grid_sample(field_vals: FloatArray, z: FloatArray, L: float, h: float) -> FloatArray:
    if field_vals.ndim == 3:
        return np.array(
            [
                _bilinear(field_vals[..., 0], z, L, h),
                _bilinear(field_vals[..., 1], z, L, h),
            ]
        )
    return _bilinear(field_vals, z, L, h)


# ---------------------------------------------------------------------------
# Entropy production and the Donsker-Varadhan split


def entropy_budget(
    runs: list[ParticleEnsemble],
    fields: LogDensityFields,
    velocity: VelocityGrid,
    rho: DensityGrid,
    h1: float = 0.0,
    c5: float = 1.0,
) -> dict:
    """Monte Carlo kernel term of the entropy evolution plus its DV bound.

    kernel_term averages (1/N^2) sum_{i != j} (K(x_i-x_j) - u(x_i)).grad log
    rho(x_i) over runs, evaluated at masked particles only; every off-
    diagonal term has exactly zero mean when particles are i.i.d. draws
    from rho, and the sum is empty for N = 1.  dv_bound is the eta-weighted
    Donsker-Varadhan majorant (1/eta)(H1 + N log M2(eta/N)) with M2 the
    pair exponential moment under rho x rho quadrature.
    """
    if not runs:
        raise ValueError("empty run list")
    n_particles = runs[0].n
    if any(r.n != n_particles for r in runs):
        raise ValueError("runs must share N")
    t = runs[0].time
    eta = eta_schedule(t, c5)
    L, h = fields.half_width, fields.h

    per_run = np.empty(len(runs))
    for ridx, run in enumerate(runs):
        pos = run.positions
        ok = np.array([_mask_at(fields, p) for p in pos])
        val = 0.0
        if ok.any():
            pts = pos[ok]
            g = np.column_stack(
                [
                    _bilinear(fields.grad_f[..., 0], pts, L, h),
                    _bilinear(fields.grad_f[..., 1], pts, L, h),
                ]
            )
            u_at = velocity.interp(pts)
            ksum = np.empty_like(pts)
            for lo in range(0, pts.shape[0], 512):
                hi = min(lo + 512, pts.shape[0])
                kv = biot_savart(pts[lo:hi, None, :] - pos[None, :, :])
                ksum[lo:hi] = kv.sum(axis=1)
            # K(0) = 0 drops the diagonal from ksum; the counterterm u is
            # paired with the N-1 off-diagonal partners of each i.
            val = (
                float(((ksum - (n_particles - 1) * u_at) * g).sum()) / n_particles**2
            )
        per_run[ridx] = val
    mean = float(per_run.mean())
    se = float(per_run.std(ddof=1) / math.sqrt(len(runs))) if len(runs) > 1 else 0.0

    sup = sup_phi_field(fields, velocity)
    pts, idx = sup["points"], sup["index"]
    a = sup["half_u_dot_g"]
    g = sup["grad_f"]
    w = rho.values[idx[:, 0], idx[:, 1]] * rho.cell_area
    scale = eta / n_particles
    m2 = 0.0
    chunk = 256
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        block = _phi_block(pts[lo:hi], a[lo:hi], g[lo:hi], pts, a, g)
        m2 += float((np.exp(scale * block) * w[None, :]).sum(axis=1) @ w[lo:hi])
    dv_bound = (h1 + n_particles * math.log(max(m2, 1e-300))) / eta
    return {
        "kernel_term": mean,
        "kernel_se": se,
        "per_run": per_run,
        "dv_bound": dv_bound,
        "eta": eta,
        "pair_moment": m2,
    }
