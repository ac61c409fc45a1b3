"""Bounded Lipschitz Nemytskii drifts ``G(y)(x) = g(x, y(x))``.

``G`` is applied by collocation: the coefficient vector is evaluated on the
interior grid ``x_j = j / (M + 1)``, ``g`` is applied pointwise and the result
is projected back onto the first N sine modes.  Because the discrete sine
transform is an isometry up to the factor ``M + 1``, the discrete operator
inherits ``sup|g|`` and the Lipschitz constant of ``g`` exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .spectral import (
    ConfigurationError,
    Spectrum,
    _coeffs,
    _wrap,
    grid_points,
    sine_matrix,
)

__all__ = [
    "NemytskiiSpec",
    "builtin",
    "BUILTINS",
    "apply_nemytskii",
    "DissipativityReport",
    "dissipativity_margin",
    "lipschitz_probe",
    "check_pointwise_bounds",
]


@dataclass(frozen=True)
class NemytskiiSpec:
    """Pointwise drift ``g(x, u)`` with its declared bounds.

    ``eta`` and ``constants`` are metadata only: the operator-level smoothing
    conditions they describe are not observable numerically.
    """

    name: str
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g_bound: float
    lipschitz: float
    second_derivative_bound: float
    dg: Callable | None = None
    d2g: Callable | None = None
    eta: float = 0.0
    constants: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.g_bound)

    def __call__(self, xi, u):
        return self.g(xi, u)

    def __reduce__(self):
        # built-ins are rebuilt from (name, params) so specs survive pickling
        # into worker processes; custom callables must be picklable themselves
        if self.name in BUILTINS:
            return (_rebuild, (self.name, self.params, self.eta, self.constants))
        return super().__reduce__()


def _zero():
    return NemytskiiSpec(
        "zero", lambda xi, u: np.zeros(np.broadcast(xi, u).shape), 0.0, 0.0, 0.0,
        dg=lambda xi, u: np.zeros(np.broadcast(xi, u).shape),
        d2g=lambda xi, u: np.zeros(np.broadcast(xi, u).shape))


def _constant(c=1.0):
    c = float(c)
    return NemytskiiSpec(
        "constant", lambda xi, u: np.full(np.broadcast(xi, u).shape, c),
        abs(c), 0.0, 0.0,
        dg=lambda xi, u: np.zeros(np.broadcast(xi, u).shape),
        d2g=lambda xi, u: np.zeros(np.broadcast(xi, u).shape),
        params={"c": c})


def _scaled_arctan(a=1.0, b=1.0):
    a, b = float(a), float(b)
    # |d2/du2 a arctan(bu)| = 2 a b^3 |u| / (1 + b^2 u^2)^2, max at |bu| = 1/sqrt(3)
    d2_max = abs(a) * b * b * 3.0 * math.sqrt(3.0) / 8.0
    return NemytskiiSpec(
        "scaled_arctan", lambda xi, u: a * np.arctan(b * u),
        abs(a) * math.pi / 2.0, abs(a * b), d2_max,
        dg=lambda xi, u: a * b / (1.0 + (b * u) ** 2),
        d2g=lambda xi, u: -2.0 * a * b**3 * u / (1.0 + (b * u) ** 2) ** 2,
        params={"a": a, "b": b})


def _shifted_sine(a=1.0):
    a = float(a)
    return NemytskiiSpec(
        "shifted_sine", lambda xi, u: a * np.sin(u + xi), abs(a), abs(a), abs(a),
        dg=lambda xi, u: a * np.cos(u + xi),
        d2g=lambda xi, u: -a * np.sin(u + xi),
        params={"a": a})


def _linear_unsafe(lam=1.0):
    lam = float(lam)
    return NemytskiiSpec(
        "linear_unsafe", lambda xi, u: lam * u, math.inf, abs(lam), 0.0,
        dg=lambda xi, u: np.full(np.broadcast(xi, u).shape, lam),
        d2g=lambda xi, u: np.zeros(np.broadcast(xi, u).shape),
        params={"lam": lam})


BUILTINS = {
    "zero": _zero,
    "constant": _constant,
    "scaled_arctan": _scaled_arctan,
    "shifted_sine": _shifted_sine,
    "linear_unsafe": _linear_unsafe,
}


def _rebuild(name, params, eta, constants):
    spec = builtin(name, **params)
    return replace(spec, eta=eta, constants=dict(constants))


def builtin(name: str, **params) -> NemytskiiSpec:
    """Look up a built-in nonlinearity by name, e.g. ``builtin("scaled_arctan", a=1, b=1)``."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown nonlinearity {name!r}; choose from {sorted(BUILTINS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {name}: {exc}") from None


def apply_nemytskii(spec: NemytskiiSpec, y, grid_size: int | None = None):
    """``P_N G(y)`` by collocation on ``grid_size`` interior points (default 2N)."""
    c = _coeffs(y)
    n = c.shape[-1]
    m = 2 * n if grid_size is None else grid_size
    if m < 2 * n:
        raise ConfigurationError(f"collocation grid {m} must be >= 2N = {2 * n}")
    S = sine_matrix(n, m)
    values = spec.g(grid_points(m), c @ S)
    return _wrap(y, values @ S.T / (m + 1))


class DissipativityReport(NamedTuple):
    c: float
    C: float
    max_violation: float
    n_samples: int
    tolerance: float = 0.0

    @property
    def holds(self) -> bool:
        return bool(self.max_violation <= self.tolerance)


def _probe_vectors(rng, n_modes, count, radius):
    # smooth random directions (1/(k+1) decay) plus explicit mode-0 probes,
    # which are the extremal directions for <By, y>
    z = rng.standard_normal((count, n_modes)) / np.arange(1, n_modes + 1)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    n_pure = max(1, count // 10)
    z[:n_pure] = 0.0
    z[:n_pure, 0] = rng.choice([-1.0, 1.0], size=n_pure)
    r = radius * rng.uniform(0.0, 1.0, size=(count, 1))
    return r * z


def dissipativity_margin(spec: NemytskiiSpec, n_modes: int, sample_count: int,
                         radius: float, eps: float | None = None,
                         spectrum: Spectrum | None = None, seed: int = 0,
                         grid_size: int | None = None) -> DissipativityReport:
    """Check ``<By + G(y), y> <= -c|y|^2 + C`` on random states.

    The certificate is ``c = mu_0 - eps``, ``C = g_bound^2 / (4 eps)`` with
    ``eps = mu_0 / 2`` by default (Young's inequality on ``g_bound |y|``).
    A zero drift gets ``c = mu_0, C = 0``.  An unbounded drift has no finite
    Young constant and is tested against ``C = 0``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    spec_ = Spectrum.dirichlet(n_modes) if spectrum is None else spectrum
    mu = spec_.eigenvalues
    mu0 = spec_.mu0
    if spec.g_bound == 0.0:
        c, C = mu0, 0.0
    else:
        e = mu0 / 2.0 if eps is None else eps
        c = mu0 - e
        C = spec.g_bound**2 / (4.0 * e) if spec.bounded else 0.0
    rng = np.random.default_rng(seed)
    y = _probe_vectors(rng, n_modes, sample_count, radius)
    gy = apply_nemytskii(spec, y, grid_size)
    sq = np.sum(y * y, axis=1)
    lhs = -np.sum(mu * y * y, axis=1) + np.sum(gy * y, axis=1)
    viol = lhs + c * sq - C
    # rounding in the mu-weighted sum, relative to its largest term
    tol = 64 * np.finfo(float).eps * float(np.max(mu[-1] * sq + C, initial=0.0))
    return DissipativityReport(c, C, float(viol.max()), sample_count, tol)


def lipschitz_probe(spec: NemytskiiSpec, n_modes: int, grid_size: int | None = None,
                    pairs: int = 1000, seed: int = 0, scale: float = 1.0) -> float:
    """Largest observed ``|G(y) - G(z)| / |y - z|`` over random pairs."""
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    rng = np.random.default_rng(seed)
    decay = 1.0 / np.arange(1, n_modes + 1)
    y = scale * rng.standard_normal((pairs, n_modes)) * decay
    # mix of near and far partners
    step = np.where(rng.uniform(size=(pairs, 1)) < 0.5, 1e-3, 1.0)
    z = y + step * scale * rng.standard_normal((pairs, n_modes)) * decay
    gy = apply_nemytskii(spec, y, grid_size)
    gz = apply_nemytskii(spec, z, grid_size)
    num = np.linalg.norm(gy - gz, axis=1)
    den = np.linalg.norm(y - z, axis=1)
    return float(np.max(num / den))


def check_pointwise_bounds(spec: NemytskiiSpec, u_max: float = 50.0,
                           n_u: int = 2001, n_xi: int = 101) -> dict:
    """Dense sampling of ``|g|``, ``|dg/du|``, ``|d2g/du2|`` against the declared bounds.

    Derivatives fall back to central differences when not supplied.
    """
    xi = np.linspace(0.0, 1.0, n_xi)[:, None]
    u = np.linspace(-u_max, u_max, n_u)[None, :]
    g = spec.g(xi, u)
    h = 1e-4
    dg = spec.dg(xi, u) if spec.dg else (spec.g(xi, u + h) - spec.g(xi, u - h)) / (2 * h)
    if spec.d2g:
        d2g = spec.d2g(xi, u)
    else:
        d2g = (spec.g(xi, u + h) - 2 * g + spec.g(xi, u - h)) / h**2
    tol = 1e-12
    return {
        "g": (float(np.max(np.abs(g))), spec.g_bound),
        "dg": (float(np.max(np.abs(dg))), spec.lipschitz),
        "d2g": (float(np.max(np.abs(d2g))), spec.second_derivative_bound),
        "ok": bool(np.max(np.abs(g)) <= spec.g_bound * (1 + tol)
                   and np.max(np.abs(dg)) <= spec.lipschitz * (1 + tol) + tol
                   and np.max(np.abs(d2g)) <= spec.second_derivative_bound * (1 + tol) + tol),
    }
