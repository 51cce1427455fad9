import numpy as np
import pytest

from vortexlab.chaos import (
    EXP_MOMENT_CONSTANT,
    MarginalEstimate,
    convergence_fit,
    entropy_budget,
    eta_schedule,
    gamma_estimate,
    l1_and_ckp,
    marginal_density,
    phi_cancellation_check,
    phi_eval,
    relative_entropy_k,
    smooth_reference,
    sup_phi_field,
)
from vortexlab.errors import MaskError, SupportBreachError
from vortexlab.meanfield import (
    MIXTURE3,
    VelocityGrid,
    gaussian_mixture_grid,
    lamb_oseen,
    lamb_oseen_velocity_at,
    solve,
    velocity_from_vorticity,
)
from vortexlab.particle import ParticleEnsemble
from vortexlab.regularity import log_fields


def _unit_gaussian_estimate(center, var, n=256, L=12.0):
    g = gaussian_mixture_grid([(1.0, center, var)], L, n)
    return MarginalEstimate(
        k=1,
        estimator="histogram",
        bandwidth=None,
        half_width=L,
        n=n,
        density=g.values,
        sample_count=10**6,
    )


@pytest.fixture(scope="module")
def mixture_context():
    series = solve(gaussian_mixture_grid(MIXTURE3, 12.0, 256), 0.1, 2e-3, snapshot_every=25)
    fields = log_fields(series)
    vel = velocity_from_vorticity(series[1])
    return series, fields, vel


@pytest.fixture(scope="module")
def lamb_context(lamb_series_analytic, lamb_fields):
    g = lamb_series_analytic[1]
    xx, yy = g.meshgrid()
    uvals = lamb_oseen_velocity_at(1.0, 0.25, g.time, np.stack([xx, yy], -1).reshape(-1, 2))
    vel = VelocityGrid(half_width=12.0, n=256, values=uvals.reshape(g.n, g.n, 2), time=g.time)
    return g, lamb_fields[1], vel


def test_exp_moment_constant_value():
    assert abs(EXP_MOMENT_CONSTANT - 2561965.53) <= 0.01


def test_relative_entropy_identical_is_zero():
    est = _unit_gaussian_estimate((0.0, 0.0), 1.0)
    ref = gaussian_mixture_grid([(1.0, (0.0, 0.0), 1.0)], 12.0, 256)
    assert abs(relative_entropy_k(est, ref)) < 1e-10


def test_relative_entropy_gaussian_closed_form():
    # KL(N(0, 0.5 I) || N(0, I)) = 2 * (1/2)(0.5 - 1 - ln 0.5)
    est = _unit_gaussian_estimate((0.0, 0.0), 0.5)
    ref = gaussian_mixture_grid([(1.0, (0.0, 0.0), 1.0)], 12.0, 256)
    np.testing.assert_allclose(relative_entropy_k(est, ref), 0.1931472, atol=1e-6)


def test_relative_entropy_support_breach():
    est = _unit_gaussian_estimate((0.0, 0.0), 0.5)
    ref = gaussian_mixture_grid([(1.0, (0.0, 0.0), 1.0)], 12.0, 256)
    masked = ref.values.copy()
    masked[100:140, 100:140] = 0.0
    from dataclasses import replace

    with pytest.raises(SupportBreachError):
        relative_entropy_k(est, replace(ref, values=masked))


def test_l1_closed_form_shifted_gaussians():
    # ||N(mu, I) - N(0, I)||_1 = 2 (2 Phi(|mu|/2) - 1) for |mu| = 1.
    est = _unit_gaussian_estimate((1.0, 0.0), 1.0)
    ref = gaussian_mixture_grid([(1.0, (0.0, 0.0), 1.0)], 12.0, 256)
    h1 = relative_entropy_k(est, ref)
    out = l1_and_ckp(est, ref, h1)
    np.testing.assert_allclose(out["l1"], 0.765850, atol=1e-3)
    assert out["ckp_holds"]


def test_ckp_exact_on_random_mixture_pairs():
    rng = np.random.default_rng(11)
    for _ in range(20):
        comps = []
        w = rng.dirichlet(np.ones(3))
        for i in range(3):
            comps.append((w[i], tuple(rng.uniform(-1, 1, 2)), rng.uniform(0.4, 1.2)))
        comps2 = []
        w2 = rng.dirichlet(np.ones(3))
        for i in range(3):
            comps2.append((w2[i], tuple(rng.uniform(-1, 1, 2)), rng.uniform(0.4, 1.2)))
        p = gaussian_mixture_grid(comps, 12.0, 128)
        q = gaussian_mixture_grid(comps2, 12.0, 128)
        est = MarginalEstimate(
            k=1, estimator="histogram", bandwidth=None, half_width=12.0, n=128,
            density=p.values, sample_count=10**6,
        )
        h1 = relative_entropy_k(est, q)
        out = l1_and_ckp(est, q, h1, estimator_tolerance=0.0)
        assert out["ckp_slack"] >= -1e-8


def test_convergence_fit_examples():
    fit = convergence_fit([(100, 0.1), (400, 0.05), (1600, 0.025)])
    np.testing.assert_allclose(fit["slope"], -0.5, atol=1e-12)
    np.testing.assert_allclose(fit["intercept"], 0.0, atol=1e-12)
    np.testing.assert_allclose(fit["r2"], 1.0, atol=1e-12)
    flat = convergence_fit([(10, 0.5), (100, 0.5), (1000, 0.5)])
    np.testing.assert_allclose(flat["slope"], 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        convergence_fit([(10, 0.1), (100, 0.05)])
    with pytest.raises(ValueError):
        convergence_fit([(10, 0.1), (100, 0.0), (1000, 0.01)])


def test_marginal_density_pooled_accuracy():
    rng = np.random.default_rng(7)
    runs = [
        ParticleEnsemble(positions=rng.standard_normal((10000, 2)) * np.sqrt(0.5))
        for _ in range(100)
    ]
    est = marginal_density(runs, k=1, estimator="kde", half_width=12.0, n=256)
    ref = smooth_reference(lamb_oseen(1.0, 0.25, 0.0, 12.0, 256), est.bandwidth)
    h1 = relative_entropy_k(est, ref)
    out = l1_and_ckp(est, ref, h1)
    assert out["l1"] <= 0.02
    assert abs(est.mass() - 1.0) < 1e-6
    assert est.density.min() >= 0.0


def test_marginal_density_k2_pools_pairs():
    rng = np.random.default_rng(8)
    runs = [
        ParticleEnsemble(positions=rng.standard_normal((512, 2)) * np.sqrt(0.5))
        for _ in range(8)
    ]
    est = marginal_density(runs, k=2, estimator="histogram", half_width=6.0, n=16)
    assert est.density.shape == (16, 16, 16, 16)
    assert est.sample_count == 8 * 256
    assert abs(est.mass() - 1.0) < 1e-6
    ref = gaussian_mixture_grid([(1.0, (0.0, 0.0), 0.5)], 6.0, 16)
    h2 = relative_entropy_k(est, ref)
    assert np.isfinite(h2) and h2 > 0


def test_marginal_density_errors():
    with pytest.raises(ValueError):
        marginal_density([], k=1)
    rng = np.random.default_rng(9)
    small = [ParticleEnsemble(positions=rng.standard_normal((10, 2)))]
    with pytest.raises(ValueError):
        marginal_density(small, k=1)


def test_phi_symmetry(mixture_context):
    _, fields, vel = mixture_context
    fl = fields[1]
    rng = np.random.default_rng(12)
    for _ in range(10):
        x = rng.uniform(-1, 1, 2)
        y = rng.uniform(-1, 1, 2)
        a = phi_eval(x, y, fl, vel)
        b = phi_eval(y, x, fl, vel)
        np.testing.assert_allclose(a, b, atol=1e-13)


def test_phi_diagonal_uses_zero_kernel(mixture_context):
    _, fields, vel = mixture_context
    fl = fields[1]
    x = np.array([0.4, -0.2])
    from vortexlab.meanfield import _bilinear

    g = np.array(
        [_bilinear(fl.grad_f[..., 0], x, 12.0, fl.h), _bilinear(fl.grad_f[..., 1], x, 12.0, fl.h)]
    )
    u = vel.interp(x)
    np.testing.assert_allclose(phi_eval(x, x, fl, vel), float(u @ g), atol=1e-14)


def test_phi_masked_point_errors(mixture_context):
    _, fields, vel = mixture_context
    with pytest.raises(MaskError):
        phi_eval(np.array([11.0, 11.0]), np.zeros(2), fields[1], vel)


def test_phi_vanishes_on_lamb_oseen(lamb_context):
    g, fl, vel = lamb_context
    ax = g.axis()
    nodes = [np.array([ax[i], ax[j]]) for i, j in [(128, 128), (138, 128), (120, 140), (133, 122)]]
    vals = [abs(phi_eval(a, b, fl, vel)) for a in nodes for b in nodes]
    assert max(vals) <= 1e-10


def test_gamma_zero_on_lamb_oseen(lamb_context):
    g, fl, vel = lamb_context
    out = gamma_estimate(fl, vel, g, p_max=16)
    assert out["gamma"] <= 1e-12
    assert out["lambda_route"] >= 0.0


def test_gamma_finite_on_mixture(mixture_context):
    series, fields, vel = mixture_context
    out = gamma_estimate(fields[1], vel, series[1], p_max=16)
    assert np.isfinite(out["gamma"]) and out["gamma"] >= 0
    assert np.isfinite(out["c1_prime"]) and out["c1_prime"] > 0
    assert out["lambda_route"] >= out["sup_ratio"] - 1e-12


def test_cancellation_integrals(mixture_context):
    series, fields, vel = mixture_context
    nodes = np.array([[0.0, 0.0], [0.5, 0.3], [-1.0, 0.8]])
    res = phi_cancellation_check(series[1], fields[1], vel, nodes)
    assert res["max_abs_x_integral"] <= 1e-5
    assert res["max_abs_y_integral"] <= 1e-5


def test_cancellation_pointwise_richardson(mixture_context):
    # The naive free-space midpoint quadrature converges as the grid is
    # refined; verify the two-resolution Richardson behavior.
    nodes = np.array([[0.0, 0.0], [0.5, 0.3]])
    outs = []
    for n in (128, 256):
        series = solve(gaussian_mixture_grid(MIXTURE3, 12.0, n), 0.1, 2e-3, snapshot_every=25)
        fields = log_fields(series)
        vel = velocity_from_vorticity(series[1])
        res = phi_cancellation_check(series[1], fields[1], vel, nodes, mode="pointwise")
        outs.append(res["max_abs_x_integral"])
    assert outs[1] < outs[0]


def test_cancellation_negative_control(mixture_context):
    series, fields, vel = mixture_context
    nodes = np.array([[0.5, 0.3]])
    res = phi_cancellation_check(series[1], fields[1], vel, nodes, drop_pair_term=True)
    assert res["max_abs_y_integral"] > 1e-4


def test_eta_schedule():
    assert eta_schedule(0.0, 1.0) == 1.0
    assert eta_schedule(1.0, 2.0) == 0.25
    ts = np.linspace(0, 5, 20)
    vals = [eta_schedule(t, 3.0) for t in ts]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        eta_schedule(1.0, 0.0)
    with pytest.raises(ValueError):
        eta_schedule(-1.0, 1.0)


def test_entropy_budget_single_particle(lamb_context):
    g, fl, vel = lamb_context
    runs = [ParticleEnsemble(positions=np.array([[0.1, 0.2]]), time=g.time)]
    out = entropy_budget(runs, fl, vel, g)
    assert out["kernel_term"] == 0.0


def test_entropy_budget_iid_zero_mean(lamb_context):
    g, fl, vel = lamb_context
    rng = np.random.default_rng(21)
    sd = np.sqrt(2.0 * (g.time + 0.25))
    runs = [
        ParticleEnsemble(positions=rng.standard_normal((128, 2)) * sd, time=g.time)
        for _ in range(200)
    ]
    out = entropy_budget(runs, fl, vel, g, h1=0.0)
    assert abs(out["kernel_term"]) <= 3.0 * out["kernel_se"]
    assert np.isfinite(out["dv_bound"])


def test_gamma_monotone_toward_radial():
    # Interpolating the mixture toward the radial profile shrinks both the
    # envelope of the pair functional and the resulting gamma.
    sups, gammas = [], []
    for lam in (1.0, 0.5, 0.0):
        comps = [
            (w, (lam * cx, lam * cy), v) for (w, (cx, cy), v) in MIXTURE3
        ]
        series = solve(
            gaussian_mixture_grid(comps, 12.0, 128), 0.04, 2e-3, snapshot_every=10,
            validate=False,
        )
        fields = log_fields(series)
        vel = velocity_from_vorticity(series[1])
        s = sup_phi_field(fields[1], vel)["s"]
        sups.append(float(s.max()))
        gammas.append(gamma_estimate(fields[1], vel, series[1], p_max=16)["gamma"])
    assert sups[0] > sups[1] > sups[2]
    assert gammas[0] > gammas[1] > gammas[2]
