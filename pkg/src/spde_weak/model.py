"""Problem instance: spectrum, drift, truncation and initial condition."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nonlinear import NemytskiiSpec
from .spectral import ConfigurationError, Spectrum, grid_points, sine_matrix


@dataclass(frozen=True)
class ModelSpec:
    spectrum: Spectrum
    nonlinearity: NemytskiiSpec | None = None
    grid_size: int | None = None
    y0: np.ndarray | None = field(default=None)

    def __post_init__(self):
        n = self.spectrum.n_modes
        m = 2 * n if self.grid_size is None else int(self.grid_size)
        if self.nonlinearity is not None and m < 2 * n:
            raise ConfigurationError(f"collocation grid {m} must be >= 2N = {2 * n}")
        object.__setattr__(self, "grid_size", m)
        y0 = np.zeros(n) if self.y0 is None else np.array(self.y0, dtype=float)
        if y0.shape != (n,):
            raise ConfigurationError(f"initial condition must have {n} modes")
        y0.setflags(write=False)
        object.__setattr__(self, "y0", y0)

    @classmethod
    def dirichlet(cls, n_modes: int = 64, nonlinearity: NemytskiiSpec | None = None,
                  grid_size: int | None = None, y0=None) -> "ModelSpec":
        return cls(Spectrum.dirichlet(n_modes), nonlinearity, grid_size, y0)

    @property
    def n_modes(self) -> int:
        return self.spectrum.n_modes

    @property
    def mu(self) -> np.ndarray:
        return self.spectrum.eigenvalues

    @property
    def is_linear(self) -> bool:
        return self.nonlinearity is None or self.nonlinearity.name == "zero"

    def with_(self, **changes) -> "ModelSpec":
        kw = dict(spectrum=self.spectrum, nonlinearity=self.nonlinearity,
                  grid_size=self.grid_size, y0=self.y0)
        kw.update(changes)
        return ModelSpec(**kw)

    def drift(self, y: np.ndarray) -> np.ndarray | None:
        """``G_N(y)`` for a batch of coefficient vectors; None when G = 0."""
        if self.is_linear:
            return None
        S = sine_matrix(self.n_modes, self.grid_size)
        vals = self.nonlinearity.g(grid_points(self.grid_size), y @ S)
        return vals @ S.T / (self.grid_size + 1)
