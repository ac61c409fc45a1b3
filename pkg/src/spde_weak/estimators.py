"""Monte Carlo weak errors, ergodic averages, moment and contraction probes.

Samples are split into fixed-size chunks of consecutive stream ids.  Chunks may
run in worker processes; their per-sample outputs are concatenated in stream
order before any reduction, so every report is a pure function of
``(config, seed)`` regardless of the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .integrators import (
    DivergenceError,
    SchemeParams,
    as_fraction,
    semi_implicit_step,
    simulate,
)
from .model import ModelSpec
from .noise import NoiseStream
from .oracles import (
    TestFunctional,
    expectation_of,
    invariant_measure_gap,
    stationary_continuous_law,
    stationary_scheme_law,
    stationary_trace,
)
from .spectral import ConfigurationError

__all__ = [
    "WeakErrorEstimate",
    "WeakErrorReport",
    "ErgodicReport",
    "InvariantGapReport",
    "MomentReport",
    "ContractionReport",
    "fit_order",
    "batch_means",
    "weak_error",
    "order_sweep",
    "ergodic_average",
    "invariant_gap_sweep",
    "moment_bound_probe",
    "contraction_probe",
]

CHUNK_SIZE = 1000
Z95 = 1.959963984540054


def _chunks(n: int, size: int):
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _mean_se(x: np.ndarray):
    n = x.size
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


def label_tau(tau) -> str:
    f = as_fraction(tau)
    q = f.denominator.bit_length() - 1
    if f.denominator == 1 << q:
        return f"{f.numerator}/2^{q}"
    return str(f)


# --- order fitting ----------------------------------------------------------

class OrderFit(NamedTuple):
    slope: float
    slope_stderr: float
    intercept: float
    residual: float
    included: np.ndarray


def fit_order(taus, errors, std_errors=None, exclude_sigma: float = 2.0) -> OrderFit:
    """Weighted least-squares slope of ``log error`` against ``log tau``.

    Each point is weighted by ``(error / std_error)^2``, the inverse variance
    of ``log error`` to first order.  Points with ``error <= exclude_sigma *
    std_error`` cannot be told apart from zero and are left out.  With no
    standard errors (or all zero) the fit is unweighted.  ``residual`` is the
    root-mean-square weighted residual.
    """
    taus = np.asarray(taus, dtype=float)
    errors = np.abs(np.asarray(errors, dtype=float))
    se = np.zeros_like(errors) if std_errors is None else np.asarray(std_errors, dtype=float)
    included = (errors > exclude_sigma * se) & (errors > 0)
    x = np.log(taus[included])
    y = np.log(errors[included])
    if x.size < 2:
        return OrderFit(math.nan, math.nan, math.nan, math.nan, included)
    if np.all(se[included] > 0):
        w = (errors[included] / se[included]) ** 2
    else:
        w = np.ones_like(x)
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    rms = float(np.sqrt(np.sum(w * resid**2) / np.sum(w)))
    if np.all(se[included] > 0):
        slope_se = float(1.0 / math.sqrt(sxx))
    elif x.size > 2:
        slope_se = float(math.sqrt(np.sum(resid**2) / (x.size - 2) / sxx))
    else:
        slope_se = 0.0
    return OrderFit(slope, slope_se, intercept, rms, included)


# --- finite-time weak error ------------------------------------------------

class WeakErrorEstimate(NamedTuple):
    estimate: float
    std_error: float
    n_samples: int


@dataclass
class WeakErrorReport:
    tau_grid: list
    m: list
    estimates: np.ndarray
    errors: np.ndarray
    std_errors: np.ndarray
    n_samples: int
    fitted_order: float
    order_stderr: float
    fit_residual: float
    included: np.ndarray
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def tau_values(self) -> np.ndarray:
        return np.array([float(t) for t in self.tau_grid])

    def rows(self):
        for i, tau in enumerate(self.tau_grid):
            yield dict(tau=float(tau), tau_label=label_tau(tau), m=self.m[i],
                       estimate=float(self.estimates[i]), error=float(self.errors[i]),
                       std_error=float(self.std_errors[i]), n_samples=self.n_samples,
                       included=bool(self.included[i]))


def _coupled_chunk(task):
    (model, phi, base_dt, n_base, coarse, fine, ids, seed, reference, coupling) = task
    if coupling == "common":
        res = simulate(model, base_dt, n_base, ids, seed, coarse=coarse, fine=fine,
                       reference=reference)
        c_states, f_states = res.coarse, res.fine
    elif coupling == "independent":
        c_states = simulate(model, base_dt, n_base, ids, seed, coarse=coarse).coarse
        f_states = simulate(model, base_dt, n_base, ids, seed, fine=fine,
                            reference=reference, lane=1 << 32).fine
    else:
        raise ConfigurationError(f"unknown coupling {coupling!r}")
    return ({q: phi(y) for q, y in c_states.items()},
            {p: phi(y) for p, y in f_states.items()})


def _run_coupled(model, phi, base_dt, n_base, coarse, fine, n_samples, seed,
                 reference, coupling, workers, chunk_size):
    tasks = [(model, phi, base_dt, n_base, tuple(coarse), tuple(fine), list(ids), seed,
              reference, coupling) for ids in _chunks(n_samples, chunk_size)]
    parts = _map(_coupled_chunk, tasks, workers)
    phi_c = {q: np.concatenate([p[0][q] for p in parts]) for q in coarse}
    phi_f = {p_: np.concatenate([p[1][p_] for p in parts]) for p_ in fine}
    return phi_c, phi_f


def weak_error(model: ModelSpec, phi: TestFunctional, tau, m: int, n_samples: int,
               seed: int, refinement_r: int = 16, reference: str = "variance_matched",
               coupling: str = "common", workers: int = 1,
               chunk_size: int = CHUNK_SIZE) -> WeakErrorEstimate:
    """``E phi(reference) - E phi(scheme)`` at ``T = m tau`` with its standard error."""
    if n_samples < 2:
        raise ConfigurationError("n_samples must be >= 2")
    params = SchemeParams(tau, m, refinement_r, seed)
    r = params.refinement_r
    phi_c, phi_f = _run_coupled(model, phi, float(params.fine_step), m * r, (r,), (1,),
                                n_samples, seed, reference, coupling, workers, chunk_size)
    d = phi_f[1] - phi_c[r]
    return WeakErrorEstimate(*_mean_se(d), n_samples)


def _validate_grid(tau_grid, horizon, min_points=4):
    taus = sorted({as_fraction(t) for t in tau_grid}, reverse=True)
    if len(taus) < min_points:
        raise ConfigurationError(f"tau_grid needs at least {min_points} distinct steps")
    T = as_fraction(horizon)
    for t in taus:
        if t <= 0:
            raise ConfigurationError("tau values must be > 0")
        if (T / t).denominator != 1:
            raise ConfigurationError(f"tau = {t} does not divide T = {T}")
    return taus, T


def order_sweep(model: ModelSpec, phi: TestFunctional, tau_grid, T, n_samples: int,
                seed: int, refinement_r: int = 16, reference: str = "variance_matched",
                check_refinement: bool = False, workers: int = 1,
                chunk_size: int = CHUNK_SIZE) -> WeakErrorReport:
    """Weak errors over a grid of steps at fixed horizon, with a fitted order.

    One reference trajectory per sample, at step ``min(tau_grid) / r``, serves
    every coarse step, so each coarse step sees a refinement of at least ``r``.
    With ``check_refinement`` a second reference at ``r -> 2r`` is driven by
    the same increments and the change of every error estimate is reported.
    """
    taus, T = _validate_grid(tau_grid, T)
    if n_samples < 2:
        raise ConfigurationError("n_samples must be >= 2")
    r = int(refinement_r)
    if r < 1 or r & (r - 1):
        raise ConfigurationError("refinement_r must be a power of two")
    split = 2 if check_refinement else 1
    base = taus[-1] / (r * split)
    n_base = int(T / base)
    coarse = [int(t / base) for t in taus]
    fine = [split, 1] if check_refinement else [1]
    phi_c, phi_f = _run_coupled(model, phi, float(base), n_base, coarse, fine, n_samples,
                                seed, reference, "common", workers, chunk_size)
    ref = phi_f[split]
    est, se = np.empty(len(taus)), np.empty(len(taus))
    for i, q in enumerate(coarse):
        est[i], se[i] = _mean_se(ref - phi_c[q])
    errors = np.abs(est)
    fit = fit_order([float(t) for t in taus], errors, se)
    flags = [f"tau={label_tau(t)}: error indistinguishable from 0 at 2 sigma, excluded"
             for t, inc in zip(taus, fit.included) if not inc]
    extra = {"reference_step": float(base * split), "reference": reference}
    if check_refinement:
        est2, se2 = np.empty(len(taus)), np.empty(len(taus))
        for i, q in enumerate(coarse):
            est2[i], se2[i] = _mean_se(phi_f[1] - phi_c[q])
        shift, shift_se = _mean_se(phi_f[1] - ref)
        ok = np.abs(np.abs(est2) - errors) <= Z95 * se
        extra.update(errors_doubled_r=np.abs(est2), std_errors_doubled_r=se2,
                     refinement_shift=shift, refinement_shift_se=shift_se,
                     refinement_ok=ok)
        flags += [f"tau={label_tau(t)}: doubling r moved the error outside its 95% CI"
                  for t, good in zip(taus, ok) if not good]
    return WeakErrorReport(taus, [int(T / t) for t in taus], est, errors, se, n_samples,
                           fit.slope, fit.slope_stderr, fit.residual, fit.included,
                           flags, extra)


# --- ergodic averages -----------------------------------------------------

class BatchMeans(NamedTuple):
    mean: float
    std_error: float
    ci_low: float
    ci_high: float
    n_batches: int
    batch_size: int


def batch_means(values: np.ndarray, n_batches: int = 32, level: float = 0.95) -> BatchMeans:
    """Mean of a correlated series with a batch-means confidence interval."""
    values = np.asarray(values, dtype=float)
    if n_batches < 20:
        raise ConfigurationError("batch means need at least 20 batches")
    size = values.size // n_batches
    if size < 1:
        raise ConfigurationError("series shorter than the number of batches")
    means = values[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    mean = float(means.mean())
    se = float(means.std(ddof=1) / math.sqrt(n_batches))
    half = float(stats.t.ppf(0.5 + level / 2, n_batches - 1)) * se
    return BatchMeans(mean, se, mean - half, mean + half, n_batches, size)


@dataclass
class ErgodicReport:
    tau: float
    burn_in_steps: int
    window_steps: int
    running_average: float
    std_error: float
    ci_low: float
    ci_high: float
    n_batches: int
    oracle_value: float | None = None
    solver: str = "scheme"


def _trajectory_values(model, phi, step_fn, dt, burn_in, window, stream, block=4096):
    """phi along one trajectory after ``burn_in`` steps; ``step_fn(y, w)``."""
    y = model.y0.copy()
    out = np.empty(window)
    n_modes = model.n_modes
    total = burn_in + window
    done = 0
    states = np.empty((block, n_modes))
    while done < total:
        b = min(block, total - done)
        w = stream.increments(b, n_modes, dt)
        for i in range(b):
            y = step_fn(y, w[i])
            states[i] = y
        if not (np.all(np.isfinite(y)) and np.linalg.norm(y) <= 1e6):
            raise DivergenceError("ergodic trajectory diverged", done + b)
        lo = max(burn_in - done, 0)
        if lo < b:
            start = done + lo - burn_in
            out[start:start + b - lo] = phi(states[lo:b])
        done += b
    return out


def _scheme_stepper(model, tau):
    denom = 1.0 + model.mu * tau

    if model.is_linear:
        def step(y, w):
            return (y + w) / denom
    else:
        def step(y, w):
            return (y + tau * model.drift(y) + w) / denom
    return step


def _reference_stepper(model, h):
    mu = model.mu
    decay = np.exp(-mu * h)
    coef = np.sqrt(-np.expm1(-2.0 * mu * h) / (2.0 * mu * h))

    if model.is_linear:
        def step(y, w):
            return decay * y + coef * w
    else:
        def step(y, w):
            return decay * (y + h * model.drift(y)) + coef * w
    return step


def ergodic_average(model: ModelSpec, phi: TestFunctional, tau, burn_in: int, M: int,
                    seed: int, n_batches: int = 32, y0=None, stream_id: int = 0,
                    solver: str = "scheme") -> ErgodicReport:
    """Time average of ``phi(Y_m)`` over ``M`` steps after ``burn_in`` steps.

    ``solver="reference"`` averages the exponential-Euler reference instead
    (used as a proxy for the continuous invariant measure).
    """
    tau = float(tau)
    if tau <= 0:
        raise ConfigurationError("tau must be > 0")
    if burn_in < 0 or M < 20:
        raise ConfigurationError("need burn_in >= 0 and M >= 20")
    if y0 is not None:
        model = model.with_(y0=np.asarray(y0, dtype=float))
    stepper = _scheme_stepper if solver == "scheme" else _reference_stepper
    vals = _trajectory_values(model, phi, stepper(model, tau), tau, burn_in, M,
                              NoiseStream(seed, stream_id))
    bm = batch_means(vals, n_batches)
    oracle = None
    if model.is_linear:
        law = (stationary_scheme_law(model.spectrum, tau) if solver == "scheme"
               else stationary_continuous_law(model.spectrum))
        oracle = expectation_of(phi, law)
    return ErgodicReport(tau, burn_in, M, bm.mean, bm.std_error, bm.ci_low, bm.ci_high,
                         bm.n_batches, oracle, solver)


@dataclass
class InvariantGapReport(WeakErrorReport):
    ergodic: list = field(default_factory=list)
    reference_value: float = math.nan
    reference_label: str = ""
    analytic_gaps: np.ndarray | None = None


def invariant_gap_sweep(model: ModelSpec, phi: TestFunctional, tau_grid, burn_in: int,
                        M: int, seed: int, n_batches: int = 32, proxy_refinement: int = 16,
                        check_proxy: bool = True, min_points: int = 4) -> InvariantGapReport:
    """``int phi d(mu_bar) - (ergodic average of the scheme)`` for each step.

    ``mu_bar`` is exact for ``G = 0``.  Otherwise it is replaced by the ergodic
    average of the reference solver at ``min(tau_grid) / proxy_refinement``,
    run over the same time window as the smallest step; the proxy's own
    uncertainty (and with ``check_proxy`` its shift under halving the step)
    is recorded.
    """
    taus = sorted({as_fraction(t) for t in tau_grid}, reverse=True)
    if len(taus) < min_points:
        raise ConfigurationError(f"tau_grid needs at least {min_points} distinct steps")
    reports = [ergodic_average(model, phi, t, burn_in, M, seed, n_batches, stream_id=i)
               for i, t in enumerate(taus)]
    extra = {}
    if model.is_linear:
        ref = expectation_of(phi, stationary_continuous_law(model.spectrum))
        ref_se = 0.0
        label = "exact stationary law"
        analytic = np.array([invariant_measure_gap(phi, model.spectrum, float(t))
                             for t in taus])
    else:
        h = taus[-1] / proxy_refinement
        k = proxy_refinement
        proxy = ergodic_average(model, phi, h, burn_in * k, M * k, seed, n_batches,
                                stream_id=len(taus), solver="reference")
        ref, ref_se = proxy.running_average, proxy.std_error
        label = f"reference proxy at step {label_tau(h)}"
        analytic = None
        extra["proxy"] = proxy
        if check_proxy:
            proxy2 = ergodic_average(model, phi, h / 2, burn_in * 2 * k, M * 2 * k, seed,
                                     n_batches, stream_id=len(taus) + 1, solver="reference")
            extra["proxy_halved"] = proxy2
            extra["proxy_bias"] = proxy2.running_average - ref
            extra["proxy_bias_se"] = math.hypot(proxy2.std_error, ref_se)
    est = np.array([ref - r.running_average for r in reports])
    se = np.array([math.hypot(r.std_error, ref_se) for r in reports])
    errors = np.abs(est)
    fit = fit_order([float(t) for t in taus], errors, se)
    flags = [f"tau={label_tau(t)}: CI exceeds the measured gap"
             for t, e, s in zip(taus, errors, se) if Z95 * s > e]
    return InvariantGapReport(taus, [M] * len(taus), est, errors, se, 1, fit.slope,
                              fit.slope_stderr, fit.residual, fit.included, flags, extra,
                              ergodic=reports, reference_value=ref, reference_label=label,
                              analytic_gaps=analytic)


# --- moment and contraction probes ------------------------------------------

@dataclass
class MomentReport:
    tau: float
    p: int
    checkpoints: list
    estimates: np.ndarray
    std_errors: np.ndarray
    n_samples: int
    trend_slope: float
    trend_slope_se: float
    trend_ci: tuple
    max_estimate: float
    linear_stationary_trace: float
    scheme_stationary_trace: float

    @property
    def trend_significant(self) -> bool:
        lo, hi = self.trend_ci
        return not (lo <= 0.0 <= hi)


def _moment_chunk(task):
    model, tau, p, checkpoints, ids, seed = task
    res = simulate(model, tau, max(checkpoints), ids, seed, coarse=(1,),
                   record_coarse={1: checkpoints})
    snaps = res.coarse_snapshots[1]
    return {m: np.linalg.norm(snaps[m], axis=1) ** p for m in checkpoints}


def moment_bound_probe(model: ModelSpec, tau, p: int, checkpoints, n_samples: int,
                       seed: int, trend_from: int = 100, workers: int = 1,
                       chunk_size: int = CHUNK_SIZE) -> MomentReport:
    """Monte Carlo ``E|Y_m|^p`` at checkpoint steps, with a trend test.

    The trend is the weighted least-squares slope of the estimates against
    ``log10 m`` over checkpoints ``m >= trend_from``, with a 95% CI from the
    per-checkpoint standard errors.
    """
    if p not in (2, 4):
        raise ConfigurationError("p must be 2 or 4")
    checkpoints = sorted(int(m) for m in checkpoints)
    tau = float(tau)
    tasks = [(model, tau, p, checkpoints, list(ids), seed)
             for ids in _chunks(n_samples, chunk_size)]
    parts = _map(_moment_chunk, tasks, workers)
    est, se = [], []
    for m in checkpoints:
        e, s = _mean_se(np.concatenate([part[m] for part in parts]))
        est.append(e)
        se.append(s)
    est, se = np.array(est), np.array(se)
    sel = np.array([m >= trend_from for m in checkpoints])
    x = np.log10(np.array(checkpoints, dtype=float))[sel]
    if x.size >= 2:
        w = 1.0 / se[sel] ** 2
        xm = np.sum(w * x) / np.sum(w)
        sxx = np.sum(w * (x - xm) ** 2)
        slope = float(np.sum(w * (x - xm) * (est[sel] - np.sum(w * est[sel]) / np.sum(w))) / sxx)
        slope_se = float(1.0 / math.sqrt(sxx))
    else:
        slope, slope_se = math.nan, math.nan
    return MomentReport(tau, p, checkpoints, est, se, n_samples, slope, slope_se,
                        (slope - Z95 * slope_se, slope + Z95 * slope_se), float(est.max()),
                        stationary_trace(model.spectrum), stationary_trace(model.spectrum, tau))


@dataclass
class ContractionReport:
    tau: float
    steps: int
    max_ratio: float
    bound: float
    violations: int
    final_distance: float
    log_contraction: float
    renormalizations: int

    @property
    def ok(self) -> bool:
        return self.violations == 0


def lipschitz_constant(model: ModelSpec) -> float:
    return 0.0 if model.is_linear else float(model.nonlinearity.lipschitz)


def contraction_probe(model: ModelSpec, tau, y1, y2, steps: int, seed: int,
                      stream_id: int = 0, tol: float = 1e-12,
                      renorm_below: float = 1e-3) -> ContractionReport:
    """Per-step distance ratios of two shared-noise trajectories.

    Each step must satisfy ``|dY'| <= (1 + L_G tau) / (1 + mu_0 tau) |dY|``.
    Once the separation falls below ``renorm_below`` times its initial size
    the second trajectory is pushed back out along the current difference, so
    the ratios stay far above round-off; ``log_contraction`` accumulates the
    true decay and ``final_distance`` is the initial distance times its
    exponential.
    """
    L = lipschitz_constant(model)
    mu0 = model.spectrum.mu0
    if not L < mu0:
        raise ConfigurationError(
            f"contraction requires strict dissipativity L_G < mu_0 (got L_G={L}, mu_0={mu0})")
    tau = float(tau)
    bound = (1.0 + L * tau) / (1.0 + mu0 * tau)
    Y = np.stack([np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)])
    d0 = float(np.linalg.norm(Y[1] - Y[0]))
    stream = NoiseStream(seed, stream_id)
    max_ratio, violations, log_c, renorms = 0.0, 0, 0.0, 0
    d = d0
    done = 0
    while done < steps:
        b = min(4096, steps - done)
        w = stream.increments(b, model.n_modes, tau)
        for i in range(b):
            Y = semi_implicit_step(Y, model, tau, w[i], done + i)
            d_new = float(np.linalg.norm(Y[1] - Y[0]))
            if d > 0:
                ratio = d_new / d
                max_ratio = max(max_ratio, ratio)
                violations += ratio > bound + tol
                log_c += math.log(ratio) if ratio > 0 else -math.inf
                if 0 < d_new < renorm_below * d0:
                    Y[1] = Y[0] + (Y[1] - Y[0]) * (d0 / d_new)
                    d_new = float(np.linalg.norm(Y[1] - Y[0]))
                    renorms += 1
            d = d_new
        done += b
    final = d0 * math.exp(log_c) if d0 > 0 else 0.0
    return ContractionReport(tau, steps, max_ratio, bound, int(violations), final, log_c, renorms)
