"""Truncated cylindrical Wiener increments and the exact OU convolution step.

Every Monte Carlo sample owns a :class:`NoiseStream`, a Philox counter-based
generator keyed by ``(master_seed, stream_id)``.  Gaussians are produced by the
inverse normal CDF applied to one 64-bit word each, so draw ``i`` of a stream
always corresponds to the same counter position no matter how the draws are
blocked.  There is no global RNG state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .spectral import Spectrum, _coeffs, _eigs, _wrap

__all__ = [
    "NoiseStream",
    "IncrementBlock",
    "standard_normals",
    "wiener_increment",
    "coarse_from_fine",
    "ou_step_std",
    "stochastic_convolution_exact_step",
    "draw_increments",
]

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53


def standard_normals(raw: np.ndarray) -> np.ndarray:
    """Map uint64 words to N(0, 1) via the inverse CDF.

    The top 53 bits give ``u = (i + 0.5) 2^-53`` in (0, 1), which is never 0
    or 1, so the result is always finite.
    """
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


@dataclass
class NoiseStream:
    """Replayable Gaussian stream for one trajectory.

    ``lane`` selects a disjoint region of the Philox counter space and is used
    when a sample needs a second, independent stream (uncoupled references).
    """

    master_seed: int
    stream_id: int
    lane: int = 0
    counter: int = field(default=0, init=False)

    def __post_init__(self):
        key = [self.master_seed & _MASK64, self.stream_id & _MASK64]
        self._bitgen = np.random.Philox(key=key, counter=[0, 0, 0, self.lane & _MASK64])

    def normals(self, size) -> np.ndarray:
        n = int(np.prod(size))
        self.counter += n
        return standard_normals(self._bitgen.random_raw(n)).reshape(size)

    def increments(self, n_steps: int, n_modes: int, dt: float) -> np.ndarray:
        """``(n_steps, n_modes)`` independent N(0, dt) draws."""
        if dt <= 0:
            raise ValueError("increment step must be > 0")
        return np.sqrt(dt) * self.normals((n_steps, n_modes))


def wiener_increment(stream: NoiseStream, n_modes: int, dt: float) -> np.ndarray:
    """One truncated increment ``W(t + dt) - W(t)``: N iid N(0, dt) modes."""
    return stream.increments(1, n_modes, dt)[0]


def draw_increments(streams, n_steps: int, n_modes: int, dt: float) -> np.ndarray:
    """Stack one block per stream into ``(n_samples, n_steps, n_modes)``."""
    return np.stack([s.increments(n_steps, n_modes, dt) for s in streams])


@dataclass(frozen=True)
class IncrementBlock:
    """``r`` consecutive fine increments, stored mode-major as ``(N, r)``."""

    increments: np.ndarray
    tau_fine: float

    @property
    def refinement(self) -> int:
        return self.increments.shape[1]

    @classmethod
    def draw(cls, stream: NoiseStream, n_modes: int, tau_fine: float, r: int):
        return cls(stream.increments(r, n_modes, tau_fine).T, tau_fine)


def coarse_from_fine(block) -> np.ndarray:
    """Row sums of a fine block: the increment over the whole coarse step."""
    inc = block.increments if isinstance(block, IncrementBlock) else np.asarray(block)
    return inc.sum(axis=-1)


def ou_step_std(mu: np.ndarray, dt: float) -> np.ndarray:
    """Standard deviation of ``int_0^dt exp(-mu s) dW(s)`` per mode."""
    return np.sqrt(-np.expm1(-2.0 * mu * dt) / (2.0 * mu))


def stochastic_convolution_exact_step(z, tau: float, stream: NoiseStream,
                                      spectrum: Spectrum | None = None):
    """Advance ``W^B`` by ``tau`` with the exact per-mode Gaussian transition."""
    if tau <= 0:
        raise ValueError("step must be > 0")
    mu = _eigs(z, spectrum)
    c = _coeffs(z)
    eta = ou_step_std(mu, tau) * stream.normals(c.shape)
    return _wrap(z, np.exp(-mu * tau) * c + eta)
