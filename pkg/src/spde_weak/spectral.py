"""Spectral representation of the Dirichlet Laplacian on (0, 1).

States are stored as coefficient vectors in the sine basis
``f_k(x) = sqrt(2) sin((k + 1) pi x)``; every linear operator used by the
schemes (semigroup, resolvent, fractional powers) is diagonal in this basis.

Functions accept either a :class:`SpectralVector` or a plain array whose last
axis indexes modes, so batches of samples can be pushed through unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

__all__ = [
    "ConfigurationError",
    "SpectralVector",
    "Spectrum",
    "eigenvalue",
    "eigenfunction_at",
    "apply_semigroup",
    "apply_resolvent",
    "fractional_power_apply",
    "sobolev_norm",
    "sine_matrix",
    "sine_transform",
    "inverse_sine_transform",
    "resolvent_smoothing_norm",
    "log_resolvent_smoothing_norm",
    "OperatorCheck",
    "operator_inequality_suite",
    "semigroup_smoothing_norm",
    "resolvent_defect_norm",
]


class ConfigurationError(ValueError):
    """Invalid sizes or parameters (as opposed to a numerical failure)."""


@dataclass(frozen=True)
class SpectralVector:
    """N sine-mode coefficients of an element of L^2(0, 1)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n_modes(self) -> int:
        return self.coeffs.size

    @classmethod
    def zeros(cls, n_modes: int) -> "SpectralVector":
        return cls(np.zeros(n_modes))

    @classmethod
    def unit(cls, k: int, n_modes: int, scale: float = 1.0) -> "SpectralVector":
        c = np.zeros(n_modes)
        c[k] = scale
        return cls(c)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coeffs, dtype=dtype)

    def __len__(self):
        return self.n_modes


@dataclass(frozen=True)
class Spectrum:
    """Positive non-decreasing eigenvalues ``mu_0 <= mu_1 <= ...`` of -B."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        mu = np.array(self.eigenvalues, dtype=float)
        if mu.ndim != 1 or mu.size == 0:
            raise ValueError("eigenvalues must be a non-empty 1-d sequence")
        if not np.all(mu > 0):
            raise ValueError("eigenvalues must be strictly positive")
        if np.any(np.diff(mu) < 0):
            raise ValueError("eigenvalues must be non-decreasing")
        mu.setflags(write=False)
        object.__setattr__(self, "eigenvalues", mu)

    @classmethod
    def dirichlet(cls, n_modes: int) -> "Spectrum":
        return cls(eigenvalue(np.arange(n_modes)))

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @property
    def mu0(self) -> float:
        return float(self.eigenvalues[0])

    def __len__(self):
        return self.n_modes


def eigenvalue(k):
    """``pi^2 (k + 1)^2``; vectorised over ``k``."""
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("mode index must be >= 0")
    out = np.pi**2 * (k + 1.0) ** 2
    return float(out) if out.ndim == 0 else out


def eigenfunction_at(k: int, xi):
    xi_arr = np.asarray(xi, dtype=float)
    if np.any((xi_arr <= 0.0) | (xi_arr >= 1.0)):
        raise ValueError("xi must lie in the open interval (0, 1)")
    out = math.sqrt(2.0) * np.sin((k + 1) * np.pi * xi_arr)
    return float(out) if out.ndim == 0 else out


def _coeffs(y) -> np.ndarray:
    return np.asarray(y, dtype=float)


def _wrap(like, arr):
    return SpectralVector(arr) if isinstance(like, SpectralVector) else arr


def _eigs(y, spectrum: Spectrum | None) -> np.ndarray:
    n = _coeffs(y).shape[-1]
    if spectrum is None:
        return _dirichlet_cached(n)
    if spectrum.n_modes != n:
        raise ConfigurationError(
            f"spectrum has {spectrum.n_modes} modes, vector has {n}")
    return spectrum.eigenvalues


@lru_cache(maxsize=32)
def _dirichlet_cached(n: int) -> np.ndarray:
    mu = eigenvalue(np.arange(n))
    mu.setflags(write=False)
    return mu


def apply_semigroup(t: float, y, spectrum: Spectrum | None = None):
    """``e^{tB} y``: mode k is damped by ``exp(-mu_k t)``."""
    if t < 0:
        raise ValueError("semigroup time must be >= 0")
    mu = _eigs(y, spectrum)
    return _wrap(y, np.exp(-mu * t) * _coeffs(y))


def apply_resolvent(tau: float, y, power: int = 1, spectrum: Spectrum | None = None):
    """``R_tau^j y`` with ``R_tau = (I - tau B)^{-1}``."""
    if tau <= 0:
        raise ValueError("resolvent step must be > 0")
    if power < 1:
        raise ValueError("resolvent power must be >= 1")
    mu = _eigs(y, spectrum)
    return _wrap(y, _coeffs(y) / (1.0 + mu * tau) ** power)


def fractional_power_apply(b: float, y, spectrum: Spectrum | None = None):
    mu = _eigs(y, spectrum)
    return _wrap(y, mu**b * _coeffs(y))


def sobolev_norm(b: float, y, spectrum: Spectrum | None = None):
    """``|y|_b = sqrt(sum mu_k^{2b} y_k^2)``; reduces over the last axis."""
    mu = _eigs(y, spectrum)
    out = np.sqrt(np.sum(mu ** (2 * b) * _coeffs(y) ** 2, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


# --- sine transform -----------------------------------------------------

@lru_cache(maxsize=16)
def sine_matrix(n_modes: int, grid_size: int) -> np.ndarray:
    """``S[k, j] = sqrt(2) sin((k+1) pi xi_j)`` on ``xi_j = j / (M + 1)``."""
    k = np.arange(1, n_modes + 1)[:, None]
    j = np.arange(1, grid_size + 1)[None, :]
    S = math.sqrt(2.0) * np.sin(np.pi * k * j / (grid_size + 1))
    S.setflags(write=False)
    return S


def grid_points(grid_size: int) -> np.ndarray:
    return np.arange(1, grid_size + 1) / (grid_size + 1)


def sine_transform(y, grid_size: int, method: str = "direct") -> np.ndarray:
    """Evaluate the sine expansion at the interior grid points."""
    c = _coeffs(y)
    n = c.shape[-1]
    if grid_size < n:
        raise ConfigurationError(f"grid size {grid_size} < number of modes {n}")
    if method == "direct":
        return c @ sine_matrix(n, grid_size)
    if method == "fft":
        from scipy.fft import dst

        pad = np.zeros(c.shape[:-1] + (grid_size,))
        pad[..., :n] = c
        return dst(pad, type=1, axis=-1) / math.sqrt(2.0)
    raise ValueError(f"unknown transform method {method!r}")


def inverse_sine_transform(values, n_modes: int, method: str = "direct"):
    """Discrete projection of grid samples onto the first ``n_modes`` modes.

    Uses the exact discrete orthogonality
    ``sum_j sin(p pi xi_j) sin(q pi xi_j) = (M + 1)/2 delta_pq`` (p, q <= M),
    so ``inverse_sine_transform(sine_transform(y, M), N) == y`` for M >= N.
    """
    v = np.asarray(values, dtype=float)
    m = v.shape[-1]
    if m < n_modes:
        raise ConfigurationError(f"grid size {m} < number of modes {n_modes}")
    if method == "direct":
        return v @ sine_matrix(n_modes, m).T / (m + 1)
    if method == "fft":
        from scipy.fft import dst

        return dst(v, type=1, axis=-1)[..., :n_modes] / (math.sqrt(2.0) * (m + 1))
    raise ValueError(f"unknown transform method {method!r}")


# --- exact operator norms of diagonal symbols ---------------------------
#
# Each norm is sup_k s(mu_k) over the stored spectrum, joined with the
# supremum of s(x) over the continuum x >= mu_{N-1} so that truncation cannot
# hide the worst mode.

def _as_spectrum(spectrum: Spectrum | None, n_modes: int) -> Spectrum:
    return Spectrum.dirichlet(n_modes) if spectrum is None else spectrum


def _tail_sup(symbol, x_lo: float, x_star: float | None, limit: float) -> float:
    """sup over [x_lo, inf) of a unimodal symbol peaking at ``x_star``."""
    cands = [symbol(x_lo), limit]
    if x_star is not None and x_star > x_lo and math.isfinite(x_star):
        cands.append(symbol(x_star))
    return max(cands)


def log_resolvent_smoothing_norm(tau: float, j, kappa: float,
                                 spectrum: Spectrum | None = None,
                                 n_modes: int = 64, include_tail: bool = True):
    """``log |(-B)^{1-kappa} R_tau^j|``; ``j`` may be an array of powers.

    Working with logs keeps ``(1 + mu tau)^{-j}`` meaningful where it
    underflows, e.g. ``j = 1000`` at ``tau = 1``.
    """
    js = np.asarray(j, dtype=float)
    if tau <= 0 or np.any(js < 1):
        raise ValueError("need tau > 0 and j >= 1")
    spec = _as_spectrum(spectrum, n_modes)
    a = 1.0 - kappa
    mu = spec.eigenvalues
    jj = js[..., None]
    best = np.max(a * np.log(mu) - jj * np.log1p(mu * tau), axis=-1)
    if not include_tail:
        return best if js.ndim else float(best)

    def log_symbol(x):
        return a * np.log(x) - js * np.log1p(x * tau)

    x_lo = float(mu[-1])
    cands = [best, log_symbol(x_lo)]
    if a > 0:
        # the symbol peaks at x* = a / (tau (j - a)); j = a = 1 tends to 1 / tau
        with np.errstate(divide="ignore"):
            x_star = np.where(js > a, a / (tau * np.maximum(js - a, 1e-300)), np.inf)
        inner = np.isfinite(x_star) & (x_star > x_lo)
        cands.append(np.where(inner, log_symbol(np.where(inner, x_star, x_lo)), -np.inf))
        cands.append(np.where(js == a, -math.log(tau), -np.inf))
    out = np.max(np.stack(np.broadcast_arrays(*cands)), axis=0)
    return out if js.ndim else float(out)


def resolvent_smoothing_norm(tau: float, j: int, kappa: float,
                             spectrum: Spectrum | None = None,
                             n_modes: int = 64, include_tail: bool = True) -> float:
    """``|(-B)^{1-kappa} R_tau^j|`` as ``sup mu^{1-kappa} / (1 + mu tau)^j``."""
    return math.exp(log_resolvent_smoothing_norm(tau, j, kappa, spectrum, n_modes,
                                                 include_tail))


def semigroup_smoothing_norm(t: float, sigma: float,
                             spectrum: Spectrum | None = None,
                             n_modes: int = 64, include_tail: bool = True) -> float:
    """``|(-B)^sigma e^{tB}|`` as ``sup mu^sigma exp(-mu t)``."""
    if t <= 0:
        raise ValueError("need t > 0")
    spec = _as_spectrum(spectrum, n_modes)
    mu = spec.eigenvalues
    best = float(np.max(mu**sigma * np.exp(-mu * t)))
    if not include_tail:
        return best

    def symbol(x):
        return x**sigma * math.exp(-x * t)

    x_star = sigma / t if sigma > 0 else None
    return max(best, _tail_sup(symbol, float(mu[-1]), x_star, 0.0))


def resolvent_defect_norm(tau: float, beta: float,
                          spectrum: Spectrum | None = None,
                          n_modes: int = 64, include_tail: bool = True) -> float:
    """``|(-B)^{-beta} (I - R_tau)|`` as ``sup mu^{-beta} mu tau / (1 + mu tau)``."""
    if tau <= 0:
        raise ValueError("need tau > 0")
    spec = _as_spectrum(spectrum, n_modes)
    mu = spec.eigenvalues
    best = float(np.max(mu ** (-beta) * mu * tau / (1.0 + mu * tau)))
    if not include_tail:
        return best

    def symbol(x):
        return x ** (-beta) * x * tau / (1.0 + x * tau)

    if beta == 0:
        x_star, limit = None, 1.0
    elif beta >= 1:
        x_star, limit = None, 0.0
    else:
        x_star, limit = (1.0 - beta) / (beta * tau), 0.0
    return max(best, _tail_sup(symbol, float(mu[-1]), x_star, limit))


# --- operator-inequality suite ---------------------------------------------

class OperatorCheck(NamedTuple):
    name: str
    n_checks: int
    n_failures: int
    worst_ratio: float


def operator_inequality_suite(spectrum: Spectrum | None = None, n_modes: int = 64,
                              n_random: int = 8, seed: int = 0, rtol: float = 1e-12):
    """Check the smoothing and defect bounds on exact norms over fixed grids.

    * semigroup: ``|(-B)^sigma e^{tB}| <= (2 sigma / e)^sigma t^{-sigma} e^{-mu_0 t / 2}``
      for ``sigma in {1/4, 1/2, 1}``, ``t in logspace(1e-4, 1)``, on the exact
      norm and on ``n_random`` random vectors;
    * resolvent: ``|(-B)^{1-kappa} R_tau^j| <= (j tau)^{kappa-1} (1 + mu_0 tau)^{-j kappa}``
      for ``tau in logspace(1e-3, 1)``, every ``j`` in 1..1000 and
      ``kappa in {0, 1/4, 1/2, 1}`` (compared in logs);
    * defect: ``|(-B)^{-beta} (I - R_tau)| <= tau^beta`` for ``beta in [0, 1]``.

    ``worst_ratio`` is the largest measured / bound.
    """
    spec = _as_spectrum(spectrum, n_modes)
    mu0 = spec.mu0
    rng = np.random.default_rng(seed)
    ys = rng.standard_normal((n_random, spec.n_modes))
    ny = np.linalg.norm(ys, axis=1)
    out = []

    n = fails = 0
    worst = 0.0
    for sigma in (0.25, 0.5, 1.0):
        c = (2.0 * sigma / math.e) ** sigma
        for t in np.logspace(-4, 0, 25):
            bound = c * t ** (-sigma) * math.exp(-mu0 * t / 2.0)
            r = np.append(sobolev_norm(sigma, apply_semigroup(t, ys, spec), spec) / ny,
                          semigroup_smoothing_norm(t, sigma, spec)) / bound
            n += r.size
            fails += int(np.sum(r > 1.0 + rtol))
            worst = max(worst, float(r.max()))
    out.append(OperatorCheck("semigroup_smoothing", n, fails, worst))

    n = fails = 0
    worst = -math.inf
    js = np.arange(1, 1001)
    for tau in np.logspace(-3, 0, 13):
        for kappa in (0.0, 0.25, 0.5, 1.0):
            lhs = log_resolvent_smoothing_norm(tau, js, kappa, spec)
            rhs = (kappa - 1.0) * np.log(js * tau) - js * kappa * math.log1p(mu0 * tau)
            d = lhs - rhs
            n += d.size
            fails += int(np.sum(d > math.log1p(rtol)))
            worst = max(worst, float(d.max()))
    out.append(OperatorCheck("resolvent_smoothing_c1", n, fails, math.exp(worst)))

    n = fails = 0
    worst = 0.0
    for tau in np.logspace(-3, 0, 13):
        for beta in np.linspace(0.0, 1.0, 21):
            r = resolvent_defect_norm(tau, beta, spec) / tau**beta
            n += 1
            fails += r > 1.0 + rtol
            worst = max(worst, float(r))
    out.append(OperatorCheck("resolvent_defect", n, int(fails), worst))
    return out
