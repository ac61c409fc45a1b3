"""Closed-form Gaussian laws for the linear equation (G = 0) and its scheme.

With ``G = 0`` every mode is an independent Gaussian:

* continuous equation at time t: mean ``exp(-mu t) y0``,
  variance ``(1 - exp(-2 mu t)) / (2 mu)``;
* semi-implicit scheme after m steps: mean ``(1 + mu tau)^-m y0``,
  variance ``(1 - (1 + mu tau)^-2m) / (2 mu + mu^2 tau)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .spectral import Spectrum

__all__ = [
    "GaussianLaw",
    "TestFunctional",
    "cos_mode",
    "exp_neg_sq",
    "bounded_poly_probe",
    "constant",
    "continuous_law",
    "scheme_law",
    "stationary_continuous_law",
    "stationary_scheme_law",
    "expectation_of",
    "invariant_measure_gap",
    "stationary_trace",
]


@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.variance) < 0):
            raise ValueError("variances must be nonnegative")


@dataclass(frozen=True)
class TestFunctional:
    """Bounded smooth test function of one mode coefficient.

    ``kind`` is one of ``cos_mode``, ``exp_neg_sq``, ``bounded_poly_probe`` or
    ``constant``.
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    mode: int = 0
    a: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown test functional {self.kind!r}")

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            return np.full(y.shape[:-1], self.a)
        return _KINDS[self.kind](y[..., self.mode], self.a)

    def scalar(self, x):
        return _KINDS[self.kind](x, self.a)

    def label(self) -> str:
        if self.kind == "constant":
            return f"constant({self.a:g})"
        if self.kind == "exp_neg_sq":
            return f"exp_neg_sq({self.mode},{self.a:g})"
        return f"{self.kind}({self.mode})"


_KINDS = {
    "cos_mode": lambda x, a: np.cos(x),
    "exp_neg_sq": lambda x, a: np.exp(-a * x * x),
    "bounded_poly_probe": lambda x, a: x * x / (1.0 + x * x),
    "constant": lambda x, a: np.full(np.shape(x), a),
}


def cos_mode(j: int) -> TestFunctional:
    return TestFunctional("cos_mode", j)


def exp_neg_sq(j: int, a: float) -> TestFunctional:
    return TestFunctional("exp_neg_sq", j, a)


def bounded_poly_probe(j: int) -> TestFunctional:
    return TestFunctional("bounded_poly_probe", j)


def constant(value: float = 1.0) -> TestFunctional:
    return TestFunctional("constant", 0, value)


def _mu(spectrum) -> np.ndarray:
    return spectrum.eigenvalues if isinstance(spectrum, Spectrum) else np.asarray(spectrum, float)


def continuous_law(spectrum, y0, t: float) -> GaussianLaw:
    if t < 0:
        raise ValueError("t must be >= 0")
    mu = _mu(spectrum)
    y0 = np.asarray(y0, dtype=float)
    return GaussianLaw(np.exp(-mu * t) * y0, -np.expm1(-2.0 * mu * t) / (2.0 * mu))


def scheme_law(spectrum, y0, tau: float, m: int) -> GaussianLaw:
    if tau <= 0 or m < 0:
        raise ValueError("need tau > 0 and m >= 0")
    mu = _mu(spectrum)
    y0 = np.asarray(y0, dtype=float)
    lg = np.log1p(mu * tau)
    # 1 - (1 + mu tau)^(-2m) without cancellation for small mu tau
    var = -np.expm1(-2.0 * m * lg) / (2.0 * mu + mu * mu * tau)
    return GaussianLaw(np.exp(-m * lg) * y0, var)


def stationary_continuous_law(spectrum) -> GaussianLaw:
    mu = _mu(spectrum)
    return GaussianLaw(np.zeros_like(mu), 1.0 / (2.0 * mu))


def stationary_scheme_law(spectrum, tau: float) -> GaussianLaw:
    mu = _mu(spectrum)
    return GaussianLaw(np.zeros_like(mu), 1.0 / (2.0 * mu + mu * mu * tau))


def stationary_trace(spectrum, tau: float | None = None) -> float:
    """``E|Y|^2`` under the stationary law (continuous if ``tau`` is None)."""
    law = stationary_continuous_law(spectrum) if tau is None else stationary_scheme_law(spectrum, tau)
    return math.fsum(law.variance.tolist())


def _gauss_expectation(f, m: float, v: float) -> float:
    if v == 0:
        return float(f(m))
    s = math.sqrt(v)

    def integrand(z):
        return f(m + s * z) * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)

    val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


def expectation_of(phi: TestFunctional, law: GaussianLaw) -> float:
    """``E phi(Y)`` for ``Y`` distributed as ``law``."""
    if phi.kind == "constant":
        return float(phi.a)
    m = float(np.asarray(law.mean)[phi.mode])
    v = float(np.asarray(law.variance)[phi.mode])
    if phi.kind == "cos_mode":
        return math.exp(-v / 2.0) * math.cos(m)
    if phi.kind == "exp_neg_sq":
        d = 1.0 + 2.0 * phi.a * v
        return math.exp(-phi.a * m * m / d) / math.sqrt(d)
    return _gauss_expectation(lambda x: x * x / (1.0 + x * x), m, v)


def invariant_measure_gap(phi: TestFunctional, spectrum, tau: float) -> float:
    """``int phi d(mu_bar) - int phi d(mu^tau)`` in the linear case."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return (expectation_of(phi, stationary_continuous_law(spectrum))
            - expectation_of(phi, stationary_scheme_law(spectrum, tau)))
