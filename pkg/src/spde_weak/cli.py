"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 failed check.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import math
import os
import sys

import numpy as np

from . import __version__
from . import config as cfgmod
from .estimators import (
    contraction_probe,
    invariant_gap_sweep,
    lipschitz_constant,
    moment_bound_probe,
    order_sweep,
)
from .integrators import IntegrationError
from .nonlinear import check_pointwise_bounds, dissipativity_margin, lipschitz_probe
from .oracles import expectation_of, stationary_scheme_law
from .spectral import ConfigurationError, operator_inequality_suite

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_CHECK = 0, 2, 3, 4


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


class ResultTable:
    """Fixed-column CSV with ``#``-prefixed metadata lines."""

    def __init__(self, columns, meta):
        self.columns = list(columns)
        self.meta = dict(meta)
        self.rows = []
        self.summary = []

    def add(self, **row):
        self.rows.append([row.get(c) for c in self.columns])

    def render(self) -> str:
        buf = io.StringIO(newline="")
        for k, v in self.meta.items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
        for line in self.summary:
            buf.write(f"# {line}\n")
        return buf.getvalue()


def _meta(cfg, command):
    return {"command": command, "config_sha256": cfgmod.config_hash(cfg),
            "seed": cfg.get("seed", 0), "version": __version__}


def _check_functional(phi, model):
    if phi.kind != "constant" and phi.mode >= model.n_modes:
        raise ConfigurationError("functional.mode exceeds model.n_modes")


def cmd_weak_order(cfg, workers):
    model, phi = cfgmod.build_model(cfg), cfgmod.build_functional(cfg)
    _check_functional(phi, model)
    sch, est = cfg["scheme"], cfg["estimator"]
    check = est.get("check_refinement", False)
    rep = order_sweep(model, phi, [cfgmod.parse_dyadic(t) for t in sch["tau_grid"]],
                      cfgmod.parse_dyadic(sch["T"]), est["n_samples"], cfg.get("seed", 0),
                      refinement_r=sch.get("refinement_r", 16),
                      reference=sch.get("reference", "variance_matched"),
                      check_refinement=check, workers=workers,
                      chunk_size=est.get("chunk_size", 1000))
    cols = ["tau", "m", "error", "std_error", "n_samples"]
    if check:
        cols += ["error_2r", "std_error_2r"]
    table = ResultTable(cols, _meta(cfg, "weak-order"))
    for i, row in enumerate(rep.rows()):
        extra = {}
        if check:
            extra = dict(error_2r=rep.extra["errors_doubled_r"][i],
                         std_error_2r=rep.extra["std_errors_doubled_r"][i])
        table.add(tau=row["tau"], m=row["m"], error=row["error"], std_error=row["std_error"],
                  n_samples=row["n_samples"], **extra)
    table.summary.append(f"fitted_order={fmt(rep.fitted_order)} ± {fmt(rep.order_stderr)}")
    table.summary.append(f"fit_residual={fmt(rep.fit_residual)}")
    table.summary += [f"flag: {f}" for f in rep.flags]
    return table, True


def cmd_invariant(cfg, workers):
    model, phi = cfgmod.build_model(cfg), cfgmod.build_functional(cfg)
    _check_functional(phi, model)
    sch, est = cfg["scheme"], cfg["estimator"]
    rep = invariant_gap_sweep(model, phi, [cfgmod.parse_dyadic(t) for t in sch["tau_grid"]],
                              est["burn_in"], est["M"], cfg.get("seed", 0),
                              n_batches=est.get("n_batches", 32),
                              proxy_refinement=est.get("proxy_refinement", 16),
                              min_points=1)
    table = ResultTable(["tau", "ergodic_avg", "ci_low", "ci_high", "oracle", "gap"],
                        _meta(cfg, "invariant"))
    for tau, erg, gap in zip(rep.tau_grid, rep.ergodic, rep.estimates):
        oracle = None
        if model.is_linear:
            oracle = expectation_of(phi, stationary_scheme_law(model.spectrum, float(tau)))
        table.add(tau=float(tau), ergodic_avg=erg.running_average, ci_low=erg.ci_low,
                  ci_high=erg.ci_high, oracle=oracle, gap=gap)
    table.summary.append(f"reference={rep.reference_label} value={fmt(rep.reference_value)}")
    if len(rep.tau_grid) >= 2:
        table.summary.append(f"fitted_order={fmt(rep.fitted_order)} ± {fmt(rep.order_stderr)}")
    table.summary += [f"flag: {f}" for f in rep.flags]
    return table, True


def cmd_moments(cfg, workers):
    model = cfgmod.build_model(cfg)
    sch, est = cfg["scheme"], cfg["estimator"]
    rep = moment_bound_probe(model, cfgmod.parse_dyadic(sch["tau"]), est.get("p", 2),
                             est["checkpoints"], est["n_samples"], cfg.get("seed", 0),
                             workers=workers, chunk_size=est.get("chunk_size", 1000))
    table = ResultTable(["m", "estimate", "std_error", "n_samples"], _meta(cfg, "moments"))
    for m, e, s in zip(rep.checkpoints, rep.estimates, rep.std_errors):
        table.add(m=m, estimate=e, std_error=s, n_samples=rep.n_samples)
    lo, hi = rep.trend_ci
    table.summary.append(f"trend_slope={fmt(rep.trend_slope)} ci=[{fmt(lo)}, {fmt(hi)}]")
    table.summary.append(f"linear_stationary_trace={fmt(rep.linear_stationary_trace)}")
    return table, not rep.trend_significant


def cmd_contraction(cfg, workers):
    model = cfgmod.build_model(cfg)
    sch = cfg["scheme"]
    y2 = cfgmod.initial_condition(cfg.get("contraction", {}).get("y2", {"mode": 0, "amplitude": 1.0}),
                                  model.n_modes)
    rep = contraction_probe(model, cfgmod.parse_dyadic(sch["tau"]), model.y0, y2,
                            sch["steps"], cfg.get("seed", 0))
    table = ResultTable(["tau", "steps", "max_ratio", "bound", "violations", "final_distance",
                         "log_contraction"], _meta(cfg, "contraction"))
    table.add(tau=rep.tau, steps=rep.steps, max_ratio=rep.max_ratio, bound=rep.bound,
              violations=rep.violations, final_distance=rep.final_distance,
              log_contraction=rep.log_contraction)
    return table, rep.ok


def diagnostics_rows(model, seed=0):
    """(name, measured, bound, passed) for every inequality the model should satisfy."""
    spec = model.spectrum
    rows = []

    for chk in operator_inequality_suite(spec, seed=seed):
        rows.append((chk.name, chk.worst_ratio, 1.0, chk.n_failures == 0))

    nl = model.nonlinearity
    if nl is None:
        from .nonlinear import builtin

        nl = builtin("zero")
    dis = dissipativity_margin(nl, model.n_modes, 10_000, radius=50.0, spectrum=spec,
                               seed=seed, grid_size=model.grid_size)
    rows.append(("dissipativity_certificate", dis.max_violation, 0.0, dis.holds))

    lip = lipschitz_probe(nl, model.n_modes, model.grid_size, pairs=1000, seed=seed)
    rows.append(("lipschitz_probe", lip, nl.lipschitz, lip <= nl.lipschitz * (1 + 1e-8) + 1e-15))

    pw = check_pointwise_bounds(nl)
    rows.append(("pointwise_bounds", pw["dg"][0], pw["dg"][1], pw["ok"]))

    L = lipschitz_constant(model)
    if L < spec.mu0:
        y2 = np.zeros(model.n_modes)
        y2[0] = 1.0
        for tau in (0.01, 0.1):
            rep = contraction_probe(model, tau, model.y0, model.y0 + y2, 2000, seed)
            rows.append((f"contraction_tau={tau:g}", rep.max_ratio, rep.bound, rep.ok))
        try:
            mom = moment_bound_probe(model, 2.0**-6, 2, [10, 100, 1000], 200, seed)
            bound = 2.0 * mom.linear_stationary_trace
            rows.append(("moment_bound", mom.max_estimate, bound, mom.max_estimate <= bound))
        except IntegrationError:
            rows.append(("moment_bound", math.inf, math.nan, False))
    else:
        rows.append(("contraction", math.nan, math.nan, None))
    return rows


def cmd_diagnostics(cfg, workers):
    model = cfgmod.build_model(cfg)
    table = ResultTable(["check", "measured", "bound", "status"], _meta(cfg, "diagnostics"))
    ok = True
    for name, measured, bound, passed in diagnostics_rows(model, cfg.get("seed", 0)):
        passed = None if passed is None else bool(passed)
        status = "SKIPPED" if passed is None else ("PASS" if passed else "FAIL")
        ok &= passed is not False
        table.add(check=name, measured=measured, bound=bound, status=status)
    return table, ok


COMMANDS = {
    "weak-order": cmd_weak_order,
    "invariant": cmd_invariant,
    "diagnostics": cmd_diagnostics,
    "moments": cmd_moments,
    "contraction": cmd_contraction,
}


def build_parser():
    p = argparse.ArgumentParser(prog="spde-weak", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--seed", type=int, help="override the config seed (u64)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", help="CSV output path (default: config 'output', else stdout)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config)
        cfg = copy.deepcopy(cfg)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            cfg["seed"] = args.seed
        cfgmod.validate(cfg, args.command)
        table, ok = COMMANDS[args.command](cfg, max(1, args.workers))
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    text = table.render()
    out = args.out or cfg.get("output")
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        for line in table.summary:
            print(line)
    else:
        sys.stdout.write(text)
    if not ok:
        print("error: one or more checks failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
