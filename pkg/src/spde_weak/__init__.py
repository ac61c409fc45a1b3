"""Spectral Galerkin / semi-implicit Euler simulation of the stochastic heat
equation with a bounded Nemytskii drift, and Monte Carlo tools for measuring
its weak error and invariant-measure error."""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    ConfigurationError,
    SpectralVector,
    Spectrum,
    apply_resolvent,
    apply_semigroup,
    eigenfunction_at,
    eigenvalue,
    fractional_power_apply,
    inverse_sine_transform,
    sine_transform,
    sobolev_norm,
)
from .model import ModelSpec  # noqa: E402
from .nonlinear import NemytskiiSpec, apply_nemytskii, builtin  # noqa: E402
from .integrators import SchemeParams, run_coarse, run_coupled_pair, run_reference  # noqa: E402

__all__ = [
    "ConfigurationError",
    "SpectralVector",
    "Spectrum",
    "apply_resolvent",
    "apply_semigroup",
    "eigenfunction_at",
    "eigenvalue",
    "fractional_power_apply",
    "inverse_sine_transform",
    "sine_transform",
    "sobolev_norm",
    "ModelSpec",
    "NemytskiiSpec",
    "apply_nemytskii",
    "builtin",
    "SchemeParams",
    "run_coarse",
    "run_coupled_pair",
    "run_reference",
]
