"""Command-line front end.

    lagot <subcommand> --config run.yaml [--out DIR] [--threads K] [--seed S]

Writes ``summary.json`` (one JSON record) and, for path-producing
subcommands, ``path.csv`` with columns ``t, theta_1..theta_d,
segment_energy, projection_residual``.  Segment columns on row k describe
the segment from t_k to t_{k+1}; the last row leaves them empty.

Exit codes: 0 success, 2 invalid configuration, 3 solver did not
converge (best path still written), 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, sampler
from .config import SUBCOMMANDS, ConfigError, RunConfig, parse_config
from .energies import (ConstantInteraction, ConstantPotential, DivergenceError, GaussianKernel,
                       PolynomialPotential, QuadraticInteraction, QuadraticPotential,
                       extended_geodesic_solve)
from .geodesic import OptimizerOptions, action, geodesic_solve
from .metric import metric_pair, projection_residual
from .oracle import closed_form_distance, empirical_quantile, family_quantile, wp_quantile

log = logging.getLogger("lagot")

EXIT_OK, EXIT_INVALID, EXIT_UNCONVERGED, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass
class RunResult:
    summary: dict
    exit_code: int
    csv_rows: Optional[list] = None

    def summary_json(self, include_wall_clock: bool = True) -> str:
        rec = dict(self.summary)
        if not include_wall_clock:
            rec.pop("wall_clock_seconds", None)
        return json.dumps(rec, sort_keys=True, indent=2, allow_nan=True)


def build_potential(spec):
    if spec is None:
        return None
    if spec.kind == "constant":
        return ConstantPotential(spec.value or 0.0)
    if spec.kind == "quadratic":
        return QuadraticPotential(tuple(spec.center or (0.0,)), 1.0 if spec.scale is None else spec.scale)
    if spec.coefficients is not None:
        return PolynomialPotential.from_coefficients(spec.coefficients)
    if spec.terms is not None:
        return PolynomialPotential(tuple((float(c), tuple(int(e) for e in ex)) for c, ex in spec.terms))
    raise ConfigError(["energies.V: polynomial potential needs coefficients or terms"])


def build_interaction(spec):
    if spec is None:
        return None
    if spec.kind == "constant":
        return ConstantInteraction(spec.value or 0.0)
    scale = 1.0 if spec.scale is None else spec.scale
    if spec.kind == "quadratic":
        return QuadraticInteraction(scale)
    return GaussianKernel(spec.bandwidth or 1.0, scale)


def _opts(cfg: RunConfig) -> OptimizerOptions:
    o = cfg.optimizer
    return OptimizerOptions(tol=o.tol, max_iters=o.max_iters, gtol_abs=o.gtol_abs, fd_step=o.fd_step)


def _matrix(M):
    return None if M is None else np.asarray(M).tolist()


def _path_rows(path, report):
    rows = []
    K = path.K
    for k in range(K + 1):
        row = [k / K] + path.knots[k].tolist()
        if k < K:
            row += [float(report.segment_energies[k]), float(report.projection_residuals[k])]
        else:
            row += [None, None]
        rows.append(row)
    return rows


def _path_results(path, report) -> dict:
    return {
        "action": report.action,
        "distance": report.distance,
        "action_stderr": report.stderr,
        "distance_stderr": report.distance_stderr,
        "converged": report.converged,
        "solver_status": report.status,
        "iterations": len(report.trace) - 1,
        "knots": path.knots.tolist(),
    }


def run(cfg: RunConfig) -> RunResult:
    """Execute one configured run; numeric output depends only on ``cfg``."""
    t_start = time.perf_counter()
    fam = cfg.family.build()
    measure = cfg.base.build(fam.n1)
    basis = cfg.basis.build(fam.n)
    ridge = cfg.basis.ridge
    batch = sampler.draw(measure, cfg.seed, cfg.N)
    results: dict = {}
    rows = None
    exit_code = EXIT_OK
    trace = []
    sub = cfg.subcommand

    if sub == "metric":
        G_map, G_W = metric_pair(fam, cfg.theta, batch, basis, ridge)
        resid = [projection_residual(fam, cfg.theta, np.eye(fam.d)[k], batch, basis, ridge)
                 for k in range(fam.d)]
        results = {
            "G_map": _matrix(G_map.M), "G_map_stderr": _matrix(G_map.stderr),
            "G_W": _matrix(G_W.M), "G_W_stderr": _matrix(G_W.stderr),
            "G_map_min_eigenvalue": G_map.min_eigenvalue, "G_W_min_eigenvalue": G_W.min_eigenvalue,
            "projection_residual_per_axis": resid,
            "basis_labels": G_W.basis.labels(),
        }
    elif sub in ("geodesic", "distance", "oracle-compare"):
        path, report = geodesic_solve(fam, cfg.theta0, cfg.theta1, cfg.K, batch, basis, _opts(cfg),
                                      cfg.metric, ridge)
        results = _path_results(path, report)
        trace = report.trace
        rows = _path_rows(path, report)
        results["closed_form_distance"] = closed_form_distance(fam, cfg.theta0, cfg.theta1, measure)
        if sub == "oracle-compare":
            q0 = family_quantile(fam, cfg.theta0, measure)
            q1 = family_quantile(fam, cfg.theta1, measure)
            method = "analytic-quantile"
            if q0 is None or q1 is None:
                method = "empirical-quantile"
                q0 = empirical_quantile(fam.forward(cfg.theta0, batch.points))
                q1 = empirical_quantile(fam.forward(cfg.theta1, batch.points))
            oracle = wp_quantile(q0, q1, cfg.oracle.p, cfg.oracle.m)
            results.update({"oracle_distance": oracle, "oracle_method": method, "oracle_p": cfg.oracle.p,
                            "gap": report.distance - oracle})
        if not report.converged:
            exit_code = EXIT_UNCONVERGED
    elif sub == "extended":
        V, w = build_potential(cfg.energies.V), build_interaction(cfg.energies.w)
        try:
            path, report = extended_geodesic_solve(
                fam, cfg.theta0, cfg.theta1, cfg.K, batch, basis, V, w, cfg.energies.sign, _opts(cfg),
                cfg.metric, cfg.energies.pairing, cfg.energies.floor, ridge)
        except DivergenceError as exc:
            log.error("%s", exc)
            path, report = exc.path, exc.report
        kinetic = action(fam, path, batch, basis, cfg.metric, ridge)
        results = _path_results(path, report)
        results["distance"] = None
        results["kinetic_action"] = kinetic.action
        trace = report.trace
        rows = _path_rows(path, report)
        if not report.converged:
            exit_code = EXIT_UNCONVERGED

    summary = {
        "subcommand": sub,
        "config": cfg.model_dump(mode="json"),
        "results": results,
        "trace": [list(t) for t in trace],
        "library_version": __version__,
        "rng_algorithm": batch.rng,
        "status": {EXIT_OK: "ok", EXIT_UNCONVERGED: "unconverged"}[exit_code],
        "wall_clock_seconds": time.perf_counter() - t_start,
        "nondeterministic_fields": ["wall_clock_seconds"],
    }
    return RunResult(summary, exit_code, rows)


def write_outputs(result: RunResult, cfg: RunConfig, out_dir: Path, d: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if result.csv_rows is not None:
        csv_path = out_dir / cfg.output.csv
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"theta_{i + 1}" for i in range(d)] + ["segment_energy", "projection_residual"])
            for row in result.csv_rows:
                writer.writerow(["" if v is None else repr(float(v)) for v in row])
        result.summary["path_csv"] = cfg.output.csv
    (out_dir / cfg.output.summary).write_text(result.summary_json() + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lagot", description=__doc__.split("\n\n")[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        text = args.config.read_text()
        cfg = parse_config(text, args.subcommand, seed=args.seed)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID

    sampler.set_threads(args.threads)
    out_dir = args.out or Path(cfg.output.dir or ".")
    try:
        result = run(cfg)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_outputs(result, cfg, out_dir, cfg.family.build().d)
    res = result.summary["results"]
    if result.exit_code == EXIT_UNCONVERGED:
        print(f"solver did not converge ({res.get('solver_status')}); best path written to {out_dir}",
              file=sys.stderr)
    headline = {k: res[k] for k in ("distance", "action", "oracle_distance") if res.get(k) is not None}
    print(json.dumps(headline or {"written": str(out_dir)}))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
