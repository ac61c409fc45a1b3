import math

import numpy as np
import pytest
from scipy import integrate

from spde_weak.integrators import simulate
from spde_weak.model import ModelSpec
from spde_weak.oracles import (
    GaussianLaw,
    TestFunctional,
    bounded_poly_probe,
    constant,
    continuous_law,
    cos_mode,
    exp_neg_sq,
    expectation_of,
    invariant_measure_gap,
    scheme_law,
    stationary_continuous_law,
    stationary_scheme_law,
    stationary_trace,
)
from spde_weak.spectral import Spectrum

PI2 = math.pi**2
SPEC = Spectrum.dirichlet(8)


def test_continuous_law_examples():
    y0 = np.arange(1.0, 9.0)
    law = continuous_law(SPEC, y0, 0.0)
    np.testing.assert_array_equal(law.mean, y0)
    np.testing.assert_array_equal(law.variance, 0.0)
    far = continuous_law(SPEC, y0, 50.0)
    np.testing.assert_allclose(far.mean, 0.0, atol=1e-200)
    np.testing.assert_allclose(far.variance, 1 / (2 * SPEC.eigenvalues), rtol=1e-15)
    half = continuous_law(SPEC, y0, 1 / (2 * PI2))
    assert half.variance[0] == pytest.approx((1 - math.exp(-1)) / (2 * PI2), rel=1e-14)
    with pytest.raises(ValueError):
        continuous_law(SPEC, y0, -1.0)


def test_scheme_law_examples():
    y0 = np.ones(8)
    law = scheme_law(SPEC, y0, 0.1, 0)
    np.testing.assert_array_equal(law.mean, y0)
    np.testing.assert_array_equal(law.variance, 0.0)
    tau = 0.05
    mu = SPEC.eigenvalues
    far = scheme_law(SPEC, y0, tau, 10_000)
    np.testing.assert_allclose(far.variance, tau / ((1 + mu * tau) ** 2 - 1), rtol=1e-12)
    np.testing.assert_allclose(far.variance, stationary_scheme_law(SPEC, tau).variance,
                               rtol=1e-14)
    # fixed point of v -> (v + tau) / (1 + mu tau)^2
    v = stationary_scheme_law(SPEC, tau).variance
    np.testing.assert_allclose((v + tau) / (1 + mu * tau) ** 2, v, rtol=1e-14)


@pytest.mark.parametrize("tau", [1e-6, 1e-3, 0.1, 1.0])
def test_scheme_stationary_variance_below_continuous(tau):
    assert np.all(stationary_scheme_law(SPEC, tau).variance
                  < stationary_continuous_law(SPEC).variance)


def test_scheme_law_small_step_has_no_cancellation():
    # m tau fixed, tiny tau: must approach the continuous law
    t = 0.01
    s = scheme_law(SPEC, np.ones(8), t / 2**20, 2**20)
    c = continuous_law(SPEC, np.ones(8), t)
    np.testing.assert_allclose(s.variance, c.variance, rtol=1e-4)
    np.testing.assert_allclose(s.mean, c.mean, rtol=1e-3)


def test_law_rejects_negative_variance():
    with pytest.raises(ValueError):
        GaussianLaw(np.zeros(2), np.array([1.0, -1.0]))


def test_functionals():
    y = np.array([[0.5, 2.0], [0.0, 1.0]])
    np.testing.assert_allclose(cos_mode(1)(y), np.cos([2.0, 1.0]))
    np.testing.assert_allclose(exp_neg_sq(0, 2.0)(y), np.exp(-2 * np.array([0.25, 0.0])))
    np.testing.assert_allclose(bounded_poly_probe(1)(y), [0.8, 0.5])
    np.testing.assert_array_equal(constant(3.0)(y), [3.0, 3.0])
    assert bounded_poly_probe(2).label() == "bounded_poly_probe(2)"
    with pytest.raises(ValueError):
        TestFunctional("sin_mode")


def test_expectation_degenerate():
    law = GaussianLaw(np.array([0.3, 1.2]), np.zeros(2))
    for phi in (cos_mode(1), exp_neg_sq(0, 3.0), bounded_poly_probe(1), constant(2.0)):
        x = np.array([0.3, 1.2])
        assert expectation_of(phi, law) == pytest.approx(float(phi(x)), rel=1e-15)


def test_expectation_closed_forms():
    v = 0.37
    law = GaussianLaw(np.zeros(1), np.array([v]))
    assert expectation_of(cos_mode(0), law) == pytest.approx(math.exp(-v / 2), rel=1e-15)
    assert expectation_of(exp_neg_sq(0, 1.5), law) == pytest.approx(1 / math.sqrt(1 + 3 * v),
                                                                       rel=1e-15)


@pytest.mark.parametrize("phi", [cos_mode(0), exp_neg_sq(0, 0.7), bounded_poly_probe(0)],
                         ids=lambda p: p.kind)
@pytest.mark.parametrize("m, v", [(0.0, 0.5), (1.3, 0.02), (-0.4, 3.0)])
def test_expectation_against_trapezoid(phi, m, v):
    # independent oracle: the trapezoid rule on a truncated line converges
    # geometrically for analytic integrands with Gaussian decay
    z = np.linspace(-40, 40, 400_001)
    f = phi.scalar(m + math.sqrt(v) * z) * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    ref = float(integrate.trapezoid(f, z))
    law = GaussianLaw(np.array([m]), np.array([v]))
    assert expectation_of(phi, law) == pytest.approx(ref, abs=1e-10)


def test_invariant_gap_cos_mode_formula():
    tau = 0.01
    gap = invariant_measure_gap(cos_mode(0), SPEC, tau)
    expected = math.exp(-1 / (4 * PI2)) - math.exp(-1 / (2 * (2 * PI2 + PI2**2 * tau)))
    assert gap == pytest.approx(expected, rel=1e-12)
    assert gap < 0
    with pytest.raises(ValueError):
        invariant_measure_gap(cos_mode(0), SPEC, 0.0)


def test_invariant_gap_first_order():
    gaps = [invariant_measure_gap(cos_mode(0), SPEC, 2.0**-k) for k in range(4, 16)]
    assert abs(gaps[-1]) < 1e-5
    ratios = np.array(gaps[:-1]) / np.array(gaps[1:])
    assert np.all(np.diff(np.abs(ratios - 2)) < 0)
    assert ratios[-1] == pytest.approx(2.0, abs=1e-3)


def test_stationary_trace():
    spec = Spectrum.dirichlet(64)
    ks = np.arange(1, 65)
    assert stationary_trace(spec) == pytest.approx(math.fsum(1 / (2 * PI2 * ks**2)), rel=1e-15)
    # full-series limit sum 1/(2 pi^2 k^2) = 1/12
    assert stationary_trace(Spectrum.dirichlet(100_000)) == pytest.approx(1 / 12, rel=1e-4)
    assert stationary_trace(spec, 0.1) < stationary_trace(spec)


@pytest.mark.parametrize("mode, k0", [(0, 4), (1, 7)])
def test_law_convergence_first_order(mode, k0):
    # start once mu_k tau is small enough for the first-order regime
    T, y0 = 1.0, np.ones(8)
    c = continuous_law(SPEC, y0, T)
    errs = []
    for k in range(k0, k0 + 4):
        tau = 2.0**-k
        s = scheme_law(SPEC, y0, tau, round(T / tau))
        errs.append(abs(s.variance[mode] - c.variance[mode]))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 1.7) & (ratios < 2.3))


COMBOS = [
    (1 / 4, 1, cos_mode(0)), (1 / 4, 4, cos_mode(0)), (1 / 8, 8, exp_neg_sq(0, 2.0)),
    (1 / 16, 16, cos_mode(1)), (1 / 16, 3, bounded_poly_probe(0)), (1 / 32, 32, cos_mode(2)),
    (1 / 32, 64, exp_neg_sq(1, 5.0)), (1 / 64, 64, bounded_poly_probe(1)),
    (1 / 2, 2, exp_neg_sq(0, 10.0)), (1 / 8, 40, cos_mode(7)),
]


def test_monte_carlo_consistency():
    n_s = 20_000
    y0 = np.array([0.5, -0.3, 0.2, 0, 0, 0, 0, 0.1])
    model = ModelSpec.dirichlet(8, y0=y0)
    for i, (tau, m, phi) in enumerate(COMBOS):
        res = simulate(model, tau, m, range(n_s), 100 + i, coarse=(1,))
        vals = phi(res.coarse[1])
        est, se = vals.mean(), vals.std(ddof=1) / math.sqrt(n_s)
        exact = expectation_of(phi, scheme_law(SPEC, y0, tau, m))
        assert abs(est - exact) < 3 * se + 1e-12, (tau, m, phi.label())
