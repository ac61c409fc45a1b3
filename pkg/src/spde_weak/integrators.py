"""Semi-implicit Euler scheme, exponential-Euler reference, coupled drivers.

The coarse scheme advances every mode by

    y_k <- (y_k + tau [G(y)]_k + dW_k) / (1 + mu_k tau),

with ``dW`` the raw Brownian increment over the step.  The reference solver
uses the exact linear flow over a fine step ``h``:

    y <- exp(-mu h) (y + h G(y)) + c(mu, h) dW_h.

``c`` depends on the reference mode:

* ``variance_matched`` (default): ``c = sqrt((1 - exp(-2 mu h)) / (2 mu h))``,
  so each step's noise has exactly the law of the stochastic convolution while
  still being built from the shared increments.
* ``left_endpoint``: ``c = exp(-mu h)``, the rectangle rule for the
  convolution integral, biased at O(h).
* ``exact_law``: exact OU draws from an independent stream; not coupled.

All solvers in one :func:`simulate` call consume the same base increments; a
solver with step ``q * base_dt`` uses sums of ``q`` consecutive increments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .model import ModelSpec
from .noise import NoiseStream, draw_increments, ou_step_std
from .spectral import ConfigurationError

__all__ = [
    "IntegrationError",
    "DivergenceError",
    "SchemeParams",
    "TrajectoryState",
    "REFERENCE_MODES",
    "semi_implicit_step",
    "exponential_euler_step",
    "simulate",
    "run_coarse",
    "run_reference",
    "run_coupled_pair",
]

REFERENCE_MODES = ("variance_matched", "left_endpoint", "exact_law")
DIVERGENCE_THRESHOLD = 1e6


class IntegrationError(ArithmeticError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class DivergenceError(IntegrationError):
    pass


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        from .config import parse_dyadic

        return parse_dyadic(x)
    return Fraction(x)


@dataclass(frozen=True)
class SchemeParams:
    """Coarse step ``tau``, ``m`` steps, ``refinement_r`` fine steps per coarse step."""

    tau: Fraction
    m: int
    refinement_r: int = 16
    master_seed: int = 0
    tau_0: float = 1.0

    def __post_init__(self):
        tau = as_fraction(self.tau)
        object.__setattr__(self, "tau", tau)
        if tau <= 0:
            raise ConfigurationError("tau must be > 0")
        if tau > self.tau_0:
            raise ConfigurationError(f"tau = {tau} exceeds the ceiling tau_0 = {self.tau_0}")
        if self.m < 0:
            raise ConfigurationError("m must be >= 0")
        r = self.refinement_r
        if r < 1 or r & (r - 1):
            raise ConfigurationError("refinement_r must be a power of two")

    @property
    def horizon(self) -> Fraction:
        return self.m * self.tau

    @property
    def fine_step(self) -> Fraction:
        return self.tau / self.refinement_r


@dataclass
class TrajectoryState:
    y: np.ndarray
    step_index: int = 0
    stream: NoiseStream | None = None


def _check_finite(y, step):
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite state", step)


def semi_implicit_step(y, model: ModelSpec, tau: float, increment, step=None):
    """One step of the semi-implicit Euler scheme; ``increment`` ~ N(0, tau) per mode.

    Accepts a single state or a batch; a :class:`TrajectoryState` is advanced in
    place and returned.
    """
    if isinstance(y, TrajectoryState):
        y.y = semi_implicit_step(y.y, model, tau, increment, y.step_index)
        y.step_index += 1
        return y
    y = np.asarray(y, dtype=float)
    _check_finite(y, step)
    g = model.drift(y)
    num = y + increment if g is None else y + tau * g + increment
    return num / (1.0 + model.mu * tau)


def exponential_euler_step(y, model: ModelSpec, h: float, noise, step=None):
    """``exp(hB) (y + h G(y)) + noise`` where ``noise`` is already scaled."""
    y = np.asarray(y, dtype=float)
    _check_finite(y, step)
    g = model.drift(y)
    decay = np.exp(-model.mu * h)
    return decay * (y if g is None else y + h * g) + noise


# --- multi-level engine ---------------------------------------------------

class _Level:
    def __init__(self, model, factor, base_dt, n_samples, y0, record):
        self.model = model
        self.q = int(factor)
        self.dt = factor * base_dt
        self.y = np.broadcast_to(y0, (n_samples, model.n_modes)).copy()
        self.acc = np.zeros_like(self.y)
        self.count = 0
        self.steps = 0
        self.record = set(record or ())
        self.snapshots = {}
        if 0 in self.record:
            self.snapshots[0] = self.y.copy()

    def consume(self, dw):
        s, b, n = dw.shape
        if self.q <= b:
            inc = dw.reshape(s, b // self.q, self.q, n).sum(axis=2)
            for i in range(b // self.q):
                self._advance(inc[:, i], i, b // self.q)
        else:
            self.acc += dw.sum(axis=1)
            self.count += b
            if self.count == self.q:
                self._advance(self.acc, 0, 1)
                self.acc = np.zeros_like(self.y)
                self.count = 0

    def _advance(self, inc, i, n_in_block):
        self.y = self.step(inc, i, n_in_block)
        self.steps += 1
        if self.steps in self.record:
            self.snapshots[self.steps] = self.y.copy()

    def check(self):
        norms = np.linalg.norm(self.y, axis=1)
        bad = ~np.isfinite(norms) | (norms > DIVERGENCE_THRESHOLD)
        if np.any(bad):
            raise DivergenceError(
                f"{type(self).__name__} with step {self.dt:g} diverged in sample "
                f"{int(np.argmax(bad))}", self.steps)


class _Coarse(_Level):
    def __init__(self, *args):
        super().__init__(*args)
        self.denom = 1.0 + self.model.mu * self.dt

    def step(self, inc, i, n_in_block):
        g = self.model.drift(self.y)
        num = self.y + inc if g is None else self.y + self.dt * g + inc
        return num / self.denom


class _Reference(_Level):
    def __init__(self, model, factor, base_dt, n_samples, y0, record, mode, streams):
        super().__init__(model, factor, base_dt, n_samples, y0, record)
        mu, h = model.mu, self.dt
        self.mode = mode
        self.decay = np.exp(-mu * h)
        if mode == "variance_matched":
            self.coef = np.sqrt(-np.expm1(-2.0 * mu * h) / (2.0 * mu * h))
        elif mode == "left_endpoint":
            self.coef = self.decay
        elif mode == "exact_law":
            self.coef = ou_step_std(mu, h)
            self.streams = streams
            self._z = None
        else:
            raise ConfigurationError(f"unknown reference mode {mode!r}; use one of {REFERENCE_MODES}")

    def step(self, inc, i, n_in_block):
        if self.mode == "exact_law":
            if i == 0:
                self._z = np.stack([s.normals((n_in_block, self.model.n_modes))
                                    for s in self.streams])
            noise = self.coef * self._z[:, i]
        else:
            noise = self.coef * inc
        g = self.model.drift(self.y)
        return self.decay * (self.y if g is None else self.y + self.dt * g) + noise


@dataclass
class EnsembleResult:
    coarse: dict = field(default_factory=dict)
    fine: dict = field(default_factory=dict)
    coarse_snapshots: dict = field(default_factory=dict)
    fine_snapshots: dict = field(default_factory=dict)


def _block_size(n_base: int, factors: Iterable[int], target: int = 64) -> int:
    b = math.gcd(n_base, target) if n_base else target
    for q in factors:
        if not (b % q == 0 or q % b == 0):
            raise ConfigurationError(f"step factor {q} incompatible with block size {b}")
    return b


def simulate(model: ModelSpec, base_dt: float, n_base: int, stream_ids,
             master_seed: int, coarse=(), fine=(), reference: str = "variance_matched",
             y0=None, lane: int = 0, record_coarse=None, record_fine=None) -> EnsembleResult:
    """Run coupled solvers on a batch of samples over ``n_base`` base increments.

    ``coarse`` and ``fine`` list step factors relative to ``base_dt``; each
    must divide ``n_base``.  Sample ``i`` is driven by
    ``NoiseStream(master_seed, stream_ids[i], lane)``; its results do not
    depend on which other samples share the batch.
    """
    stream_ids = list(stream_ids)
    n_s = len(stream_ids)
    y0 = model.y0 if y0 is None else np.asarray(y0, dtype=float)
    for q in (*coarse, *fine):
        if q < 1 or n_base % q:
            raise ConfigurationError(f"step factor {q} does not divide {n_base} base steps")
    record_coarse = record_coarse or {}
    record_fine = record_fine or {}
    streams = [NoiseStream(master_seed, sid, lane) for sid in stream_ids]
    levels_c = {q: _Coarse(model, q, base_dt, n_s, y0, record_coarse.get(q)) for q in coarse}
    levels_f = {}
    for idx, p in enumerate(fine):
        side = None
        if reference == "exact_law":
            side = [NoiseStream(master_seed, sid, lane + 1 + idx) for sid in stream_ids]
        levels_f[p] = _Reference(model, p, base_dt, n_s, y0, record_fine.get(p), reference, side)
    levels = [*levels_c.values(), *levels_f.values()]
    b = _block_size(n_base, (*coarse, *fine))
    n_modes = model.n_modes
    for _ in range(n_base // b if n_base else 0):
        dw = draw_increments(streams, b, n_modes, base_dt)
        for lev in levels:
            lev.consume(dw)
        for lev in levels:
            lev.check()
    return EnsembleResult(
        coarse={q: lev.y for q, lev in levels_c.items()},
        fine={p: lev.y for p, lev in levels_f.items()},
        coarse_snapshots={q: lev.snapshots for q, lev in levels_c.items()},
        fine_snapshots={p: lev.snapshots for p, lev in levels_f.items()},
    )


def run_coarse(model: ModelSpec, params: SchemeParams, stream_id: int = 0) -> np.ndarray:
    """``Y_m`` of the semi-implicit scheme for one sample."""
    r = params.refinement_r
    res = simulate(model, float(params.fine_step), params.m * r, [stream_id],
                   params.master_seed, coarse=(r,))
    return res.coarse[r][0]


def run_reference(model: ModelSpec, params: SchemeParams, stream_id: int = 0,
                  reference: str = "variance_matched") -> np.ndarray:
    """Exponential-Euler approximation of ``Y(m tau)`` at step ``tau / r``."""
    r = params.refinement_r
    res = simulate(model, float(params.fine_step), params.m * r, [stream_id],
                   params.master_seed, fine=(1,), reference=reference)
    return res.fine[1][0]


def run_coupled_pair(model: ModelSpec, params: SchemeParams, stream_id: int = 0,
                     reference: str = "variance_matched"):
    """(coarse, fine) end states driven by the same fine increments."""
    r = params.refinement_r
    res = simulate(model, float(params.fine_step), params.m * r, [stream_id],
                   params.master_seed, coarse=(r,), fine=(1,), reference=reference)
    return res.coarse[r][0], res.fine[1][0]
