import math
from fractions import Fraction

import numpy as np
import pytest

from spde_weak.integrators import (
    DivergenceError,
    IntegrationError,
    SchemeParams,
    TrajectoryState,
    exponential_euler_step,
    run_coarse,
    run_coupled_pair,
    run_reference,
    semi_implicit_step,
    simulate,
)
from spde_weak.model import ModelSpec
from spde_weak.nonlinear import apply_nemytskii, builtin
from spde_weak.spectral import ConfigurationError, eigenvalue, inverse_sine_transform

PI2 = math.pi**2


def linear(n=8, y0=None):
    return ModelSpec.dirichlet(n, y0=y0)


# --- parameters -------------------------------------------------------------

def test_scheme_params_validation():
    p = SchemeParams("1/2^4", 16)
    assert p.tau == Fraction(1, 16)
    assert p.horizon == 1
    assert p.fine_step == Fraction(1, 256)
    for bad in [dict(tau=0, m=1), dict(tau=2, m=1), dict(tau=0.1, m=-1),
                dict(tau=0.1, m=1, refinement_r=3)]:
        with pytest.raises(ConfigurationError):
            SchemeParams(**bad)
    assert SchemeParams(2, 1, tau_0=4).tau == 2


# --- single step ------------------------------------------------------------

def test_step_resolvent_action():
    tau = 0.1
    y = np.eye(8)[0]
    out = semi_implicit_step(y, linear(), tau, np.zeros(8))
    assert out[0] == pytest.approx(1 / (1 + PI2 * tau), rel=1e-15)
    assert np.all(out[1:] == 0)


def test_step_m_times():
    tau, m = 0.05, 7
    y = np.eye(8)[0]
    for _ in range(m):
        y = semi_implicit_step(y, linear(), tau, np.zeros(8))
    assert y[0] == pytest.approx((1 + PI2 * tau) ** -m, rel=1e-14)


def test_step_constant_drift():
    n, tau = 8, 0.01
    model = ModelSpec.dirichlet(n, builtin("constant", c=1.0), grid_size=4096)
    out = semi_implicit_step(np.zeros(n), model, tau, np.zeros(n))
    mu = eigenvalue(np.arange(n))
    proj = np.array([2 * math.sqrt(2) / ((k + 1) * math.pi) if k % 2 == 0 else 0.0
                     for k in range(n)])
    np.testing.assert_allclose(out, tau * proj / (1 + mu * tau), atol=1e-8)
    # at the model's own grid it equals the discrete projection exactly
    model2 = ModelSpec.dirichlet(n, builtin("constant", c=1.0))
    disc = inverse_sine_transform(np.ones(2 * n), n)
    np.testing.assert_allclose(semi_implicit_step(np.zeros(n), model2, tau, np.zeros(n)),
                               tau * disc / (1 + mu * tau), atol=1e-15)


def test_step_formula_with_drift_and_noise():
    rng = np.random.default_rng(0)
    model = ModelSpec.dirichlet(16, builtin("scaled_arctan", a=1, b=2))
    y, w, tau = rng.standard_normal(16), rng.standard_normal(16) * 0.1, 0.01
    g = apply_nemytskii(model.nonlinearity, y)
    np.testing.assert_allclose(semi_implicit_step(y, model, tau, w),
                               (y + tau * g + w) / (1 + model.mu * tau), rtol=1e-13)


def test_step_rejects_nonfinite():
    y = np.zeros(4)
    y[2] = np.nan
    with pytest.raises(IntegrationError) as exc:
        semi_implicit_step(y, linear(4), 0.1, np.zeros(4), step=12)
    assert exc.value.step == 12


def test_trajectory_state_advances():
    st = TrajectoryState(np.eye(4)[0])
    semi_implicit_step(st, linear(4), 0.1, np.zeros(4))
    semi_implicit_step(st, linear(4), 0.1, np.zeros(4))
    assert st.step_index == 2
    assert st.y[0] == pytest.approx((1 + 0.1 * PI2) ** -2)


def test_exponential_euler_step_deterministic():
    y = np.ones(4)
    out = exponential_euler_step(y, linear(4), 0.01, np.zeros(4))
    np.testing.assert_allclose(out, np.exp(-eigenvalue(np.arange(4)) * 0.01), rtol=1e-15)


# --- trajectories -----------------------------------------------------------

def test_m_zero_returns_initial_condition():
    y0 = np.arange(8.0)
    model = linear(8, y0)
    p = SchemeParams(0.1, 0)
    np.testing.assert_array_equal(run_coarse(model, p), y0)
    np.testing.assert_array_equal(run_reference(model, p), y0)


def test_deterministic_part_closed_form():
    # the difference of two runs with the same noise cancels the stochastic
    # convolution, leaving R^m (y1 - y2)
    tau, m = Fraction(1, 32), 40
    y0 = np.random.default_rng(1).standard_normal(8)
    p = SchemeParams(tau, m, refinement_r=4)
    a = run_coarse(linear(8, y0), p, stream_id=3)
    b = run_coarse(linear(8), p, stream_id=3)
    mu = eigenvalue(np.arange(8))
    np.testing.assert_allclose(a - b, (1 + mu * float(tau)) ** -m * y0, rtol=1e-10, atol=1e-15)
    ra = run_reference(linear(8, y0), p, stream_id=3)
    rb = run_reference(linear(8), p, stream_id=3)
    np.testing.assert_allclose(ra - rb, np.exp(-mu * float(tau) * m) * y0, rtol=1e-10,
                               atol=1e-15)


def _geometric_variance(mu, tau, m):
    return sum(tau * (1 + mu * tau) ** (-2 * j) for j in range(1, m + 1))


def test_coarse_variance_matches_geometric_series():
    n_s, tau, m = 20_000, 1 / 16, 8
    res = simulate(linear(4), tau / 4, m * 4, range(n_s), 5, coarse=(4,))
    var = res.coarse[4].var(axis=0)
    mu = eigenvalue(np.arange(4))
    expected = np.array([_geometric_variance(x, tau, m) for x in mu])
    closed = (1 - (1 + mu * tau) ** (-2 * m)) / (2 * mu + mu**2 * tau)
    np.testing.assert_allclose(expected, closed, rtol=1e-12)
    assert np.all(np.abs(var - expected) < 4 * expected * math.sqrt(2 / n_s))


def test_reference_exact_law_variance():
    n_s, T = 20_000, 0.25
    res = simulate(linear(4), 1 / 64, 16, range(n_s), 6, fine=(1,), reference="exact_law")
    var = res.fine[1].var(axis=0)
    mu = eigenvalue(np.arange(4))
    expected = -np.expm1(-2 * mu * T) / (2 * mu)
    assert np.all(np.abs(var - expected) < 4 * expected * math.sqrt(2 / n_s))


def test_reference_variance_matched_is_exact_for_linear():
    # per-step noise coefficient carries the exact one-step variance
    n_s, T = 20_000, 0.25
    res = simulate(linear(4), 1 / 64, 16, range(n_s), 7, fine=(1,))
    var = res.fine[1].var(axis=0)
    mu = eigenvalue(np.arange(4))
    expected = -np.expm1(-2 * mu * T) / (2 * mu)
    assert np.all(np.abs(var - expected) < 4 * expected * math.sqrt(2 / n_s))


def test_pathwise_convergence_left_endpoint_r1():
    # same path, coarse and fine both at step tau: per-step defect
    # (1 + mu tau)^-1 - exp(-mu tau) = O(tau^2), accumulating to O(tau)
    model = linear(4)
    base = 2.0**-10
    qs = [64, 32, 16, 8, 4]
    res = simulate(model, base, 1024, range(200), 8, coarse=qs, fine=qs,
                   reference="left_endpoint")
    errs = [np.mean(np.abs(res.coarse[q][:, 0] - res.fine[q][:, 0])) for q in qs]
    taus = [q * base for q in qs]
    slope = np.polyfit(np.log(taus), np.log(errs), 1)[0]
    assert np.all(np.diff(errs) < 0)
    assert 0.8 < slope < 1.2


def _pair_difference_variance(mu, tau, m, r, mode):
    # both outputs are linear in the fine increments; assemble their weights
    h = tau / r
    n = m * r
    coarse = np.array([(1 + mu * tau) ** -(m - (l // r)) for l in range(n)])
    if mode == "variance_matched":
        c = math.sqrt(-math.expm1(-2 * mu * h) / (2 * mu * h))
    else:
        c = math.exp(-mu * h)
    fine = np.array([c * math.exp(-mu * h * (n - 1 - l)) for l in range(n)])
    return h * np.sum((coarse - fine) ** 2)


@pytest.mark.parametrize("mode", ["variance_matched", "left_endpoint"])
def test_coupled_pair_difference_covariance(mode):
    n_s, tau, m, r = 20_000, 1 / 8, 4, 4
    res = simulate(linear(3), tau / r, m * r, range(n_s), 9, coarse=(r,), fine=(1,),
                   reference=mode)
    d = res.coarse[r] - res.fine[1]
    for k in range(3):
        v = _pair_difference_variance(eigenvalue(k), tau, m, r, mode)
        assert abs(d[:, k].var() - v) < 4 * v * math.sqrt(2 / n_s)
    # modes are independent
    assert abs(np.corrcoef(d[:, 0], d[:, 1])[0, 1]) < 4 / math.sqrt(n_s)


def test_coupled_pair_deterministic_and_consistent():
    model = ModelSpec.dirichlet(8, builtin("scaled_arctan"))
    p = SchemeParams(Fraction(1, 8), 8, refinement_r=4, master_seed=11)
    a = run_coupled_pair(model, p, stream_id=2)
    b = run_coupled_pair(model, p, stream_id=2)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[0], run_coarse(model, p, stream_id=2))
    np.testing.assert_array_equal(a[1], run_reference(model, p, stream_id=2))


def test_batch_composition_does_not_change_samples():
    model = ModelSpec.dirichlet(8, builtin("scaled_arctan"))
    full = simulate(model, 1 / 64, 64, range(10), 3, coarse=(4,), fine=(1,))
    one = simulate(model, 1 / 64, 64, [7], 3, coarse=(4,), fine=(1,))
    np.testing.assert_array_equal(full.coarse[4][7], one.coarse[4][0])
    np.testing.assert_array_equal(full.fine[1][7], one.fine[1][0])


def test_coarse_factor_must_divide():
    with pytest.raises(ConfigurationError):
        simulate(linear(4), 0.01, 10, [0], 0, coarse=(3,))


def test_divergence_detected():
    model = ModelSpec.dirichlet(8, builtin("linear_unsafe", lam=100.0))
    with pytest.raises(DivergenceError) as exc:
        run_coarse(model, SchemeParams(0.1, 40, refinement_r=1))
    assert exc.value.step is not None


@pytest.mark.slow
def test_unconditional_stability_long_run():
    model = ModelSpec.dirichlet(64, builtin("scaled_arctan"))
    res = simulate(model, 0.01, 100_000, [0], 12, coarse=(1,),
                   record_coarse={1: range(0, 100_001, 1000)})
    snaps = res.coarse_snapshots[1]
    norms = np.array([np.linalg.norm(snaps[k]) for k in sorted(snaps)])
    assert np.all(np.isfinite(norms))
    running = np.maximum.accumulate(norms)
    # the running max stabilizes: the second half adds little
    assert running[-1] < 1.5 * running[len(running) // 2]


def test_per_step_contraction_pathwise():
    model = ModelSpec.dirichlet(32, builtin("scaled_arctan", a=1, b=1))
    tau = 0.05
    rng = np.random.default_rng(4)
    y1, y2 = rng.standard_normal(32), np.zeros(32)
    factor = (1 + 1.0 * tau) / (1 + PI2 * tau)
    # 40 steps keep the gap (>= 0.7^40) far above rounding in the states
    for _ in range(40):
        w = rng.standard_normal(32) * math.sqrt(tau)
        n1 = semi_implicit_step(y1, model, tau, w)
        n2 = semi_implicit_step(y2, model, tau, w)
        slack = 1e-14 * (np.linalg.norm(n1) + np.linalg.norm(n2))
        assert np.linalg.norm(n1 - n2) <= factor * np.linalg.norm(y1 - y2) + slack
        y1, y2 = n1, n2
