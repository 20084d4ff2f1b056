"""Command-line entry point: ``agmrf structure|prior|fit|simulate|study``.

Every subcommand writes its outputs plus a ``manifest.json`` into ``--out``.
Exit status: 0 ok, 2 usage, 3 validation error, 4 numerical failure; errors
are reported on stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .graph import GraphError, TemporalConfig, areal_graph, connectivity_report, parse_adjacency, parse_country_table
from .inference import GridConfig, NumericalError, fit_model
from .latent import ModelError, PriorStatements, build_model, read_direct_estimates, format_direct_estimates
from .priors import (
    PriorError,
    d_theta,
    pc_phi_calibrate,
    pc_precision_calibrate,
    pc_theta_calibrate,
    phi_gamma_tilde,
    prior_quantiles,
    theta_eigenvalues,
)
from .simharness import (
    DIFF_COLUMNS,
    RAW_COLUMNS,
    SUMMARY_COLUMNS,
    SimSetting,
    StudyConfig,
    make_trend,
    rows_to_csv,
    run_study,
    simulate_dataset,
)
from .structmat import StructureError, parts_for, rank, scale_parts, upper_triangle_coo

log = logging.getLogger("agmrf")

EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 2, 3, 4
VALIDATION_ERRORS = (GraphError, StructureError, PriorError, ModelError, ValueError, KeyError, OSError)
SUMMARY_HEADER = ["mean", "sd", "q025", "median", "q975"]


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue())


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Collects manifest fields while a subcommand executes."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.inputs: dict[str, str] = {}
        self.config: dict = {}
        self.t0 = time.perf_counter()

    def read(self, path) -> str:
        p = Path(path)
        self.inputs[str(p)] = sha256(p)
        return p.read_text()

    def finish(self) -> None:
        manifest = {
            "subcommand": self.args.command,
            "config": self.config,
            "inputs": self.inputs,
            "seed": getattr(self.args, "seed", None),
            "version": __version__,
            "wall_time_s": time.perf_counter() - self.t0,
        }
        write_json(self.out / "manifest.json", manifest)


# ------------------------------------------------------------------ inputs


def load_graph(run: Run, path: str, countries: Optional[str]):
    """A JSON temporal config or an adjacency file; returns (graph, calendar)."""
    text = run.read(path)
    if text.lstrip().startswith("{"):
        try:
            cfg = TemporalConfig.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise GraphError(f"{path}: invalid JSON ({exc})") from None
        if countries:
            raise GraphError("--countries applies to areal adjacency graphs only")
        return cfg.graph(), cfg
    labels = parse_country_table(run.read(countries)) if countries else None
    return areal_graph(parse_adjacency(text), labels), None


def _load_json(run: Run, path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        return json.loads(run.read(path))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None


# ------------------------------------------------------------- subcommands


def cmd_structure(run: Run) -> None:
    a = run.args
    g, _ = load_graph(run, a.graph, a.countries)
    parts = scale_parts(parts_for(g, a.kind))
    run.config = {"graph": a.graph, "countries": a.countries, "kind": a.kind}
    for l, R in enumerate(parts.parts, 1):
        write_csv(run.out / f"part_{l}.csv", ["i", "j", "value"], upper_triangle_coo(R))
    total = parts.combine([1.0] * parts.n_parts)
    write_csv(run.out / "scaled_structure.csv", ["i", "j", "value"], upper_triangle_coo(total))
    rep = connectivity_report(g)
    write_json(
        run.out / "structure.json",
        {
            "n": g.n,
            "kind": a.kind,
            "n_parts": parts.n_parts,
            "edge_counts": list(parts.edge_counts),
            "degenerate_parts": list(parts.degenerate),
            "rank": rank(total),
            "sigma2": parts.sigma2,
            "reference_components": rep.reference_components,
        },
    )


def cmd_prior(run: Run) -> None:
    a = run.args
    probs = [float(p) for p in a.quantiles.split(",")] if a.quantiles else [0.025, 0.5, 0.975]
    run.config = {"parameter": a.parameter, "graph": a.graph, "countries": a.countries, "U": a.U, "alpha": a.alpha, "grid": a.grid, "quantiles": probs}
    info: dict = {"parameter": a.parameter}
    if a.parameter == "precision":
        U = 1.0 if a.U is None else a.U
        alpha = 0.01 if a.alpha is None else a.alpha
        prior = pc_precision_calibrate(U, alpha)
        xs = np.exp(np.linspace(math.log(1e-2), math.log(1e4), a.grid))
        name = "tau"
    else:
        if not a.graph:
            raise ValueError(f"prior {a.parameter} needs --graph")
        g, _ = load_graph(run, a.graph, a.countries)
        xs = np.linspace(0.0, 1.0, a.grid + 2)[1:-1]
        if a.parameter == "theta":
            U = 0.75 if a.U is None else a.U
            alpha = 0.75 if a.alpha is None else a.alpha
            parts = scale_parts(parts_for(g, "adaptive"))
            eps = theta_eigenvalues(parts)
            prior = pc_theta_calibrate(U, alpha, eps)
            info.update(eigenvalues=eps, d_U=float(d_theta(U, eps)))
            name = "theta"
        else:
            U = 0.5 if a.U is None else a.U
            alpha = 2 / 3 if a.alpha is None else a.alpha
            parts = scale_parts(parts_for(g, "plain"))
            gt = phi_gamma_tilde(parts.combine([1.0]))
            prior = pc_phi_calibrate(U, alpha, gt)
            info.update(gamma_tilde=gt)
            name = "phi"
    info.update(U=U, alpha=alpha, **{"lambda": prior.lam})
    info["quantiles"] = {str(p): float(q) for p, q in zip(probs, prior_quantiles(prior, probs))}
    write_csv(run.out / f"prior_{name}.csv", [name, "density"], zip(xs, prior.pdf(xs)))
    write_json(run.out / f"prior_{name}.json", info)


def cmd_fit(run: Run) -> None:
    a = run.args
    cfg = _load_json(run, a.config)
    model = a.model or cfg.get("model")
    if model is None:
        raise ModelError("choose a model with --model or in the config")
    slope = a.slope if a.slope is not None else bool(cfg.get("slope", False))
    survey_mode = a.survey_mode or cfg.get("survey_mode")
    draws = a.draws if a.draws is not None else int(cfg.get("draws", 4000))
    statements = PriorStatements.from_dict(cfg.get("priors", {}))
    grid = GridConfig.from_dict(cfg.get("grid", {}))
    g, calendar = load_graph(run, a.graph, a.countries)
    obs = read_direct_estimates(run.read(a.data))
    spec = build_model(g, model, obs, statements=statements, include_slope=slope, survey_mode=survey_mode, fixed_hyper=cfg.get("fixed_hyper"))
    run.config = {
        "data": a.data,
        "graph": a.graph,
        "countries": a.countries,
        "model": model,
        "slope": slope,
        "survey_mode": spec.survey_mode,
        "draws": draws,
        "priors": {k: list(v) for k, v in vars(statements).items()},
        "grid": vars(grid),
        "fixed_hyper": dict(spec.fixed_hyper),
    }
    fit = fit_model(spec, grid)

    lat = fit.latent_summary()
    names = spec.layout().names()
    write_csv(run.out / "latent.csv", ["name", *SUMMARY_HEADER], _summary_rows(names, lat))

    u5 = fit.u5mr_summaries(draws, a.seed)
    if calendar is not None:
        ids = [(i, calendar.year_of(i)) for i in range(1, spec.n + 1)]
        write_csv(run.out / "u5mr.csv", ["area_id", "year", *SUMMARY_HEADER], [(*k, *r[1:]) for k, r in zip(ids, _summary_rows(range(spec.n), u5))])
    else:
        write_csv(run.out / "u5mr.csv", ["area_id", *SUMMARY_HEADER], _summary_rows(range(1, spec.n + 1), u5))

    hs = fit.hyper_summaries()
    write_csv(
        run.out / "hyper.csv",
        ["Parameter", "Mean", "SD", "Q025", "Median", "Q975", "Mode"],
        [(k, v["mean"], v["sd"], v["q025"], v["median"], v["q975"], v["mode"]) for k, v in hs.items()],
    )
    write_json(
        run.out / "metrics.json",
        {"dic": fit.dic(), "log_score": fit.log_score(), "grid_points": len(fit.points), "design": fit.exploration.design},
    )
    rows = []
    if "theta" in fit.hyper_names:
        ts = np.linspace(0.005, 0.995, 199)
        rows = zip(ts, spec.priors.theta.pdf(ts), fit.hyper_density("theta", ts))
    write_csv(run.out / "prior_posterior_theta.csv", ["theta", "prior", "posterior"], rows)


def _summary_rows(keys, s):
    return [(k, s.mean[i], s.sd[i], s.q025[i], s.median[i], s.q975[i]) for i, k in enumerate(keys)]


def cmd_simulate(run: Run) -> None:
    a = run.args
    setting = SimSetting(a.trend, a.regime, _variance(a.variance))
    run.config = {"trend": a.trend, "regime": a.regime, "v": setting.v, "replicate": a.replicate}
    data = simulate_dataset(setting, a.replicate, a.seed)
    (run.out / "direct_estimates.csv").write_text(format_direct_estimates(data.observations()))
    mu = make_trend(setting.trend, setting.n, setting.conflict)
    write_csv(run.out / "truth.csv", ["area_id", "mu", "eta"], [(i + 1, mu[i], data.eta[i]) for i in range(setting.n)])
    write_json(run.out / "graph.json", {"n_periods": setting.n, "start_year": 1, "conflict_years": list(setting.conflict)})


def _variance(text: str) -> float:
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


def cmd_study(run: Run) -> None:
    a = run.args
    cfg = _load_json(run, a.config)
    if a.replicates is not None:
        cfg["replicates"] = a.replicates
    if a.threads is not None:
        cfg["threads"] = a.threads
    cfg["seed"] = a.seed if a.seed is not None else cfg.get("seed", 1)
    config = StudyConfig.from_dict(cfg)
    a.seed = config.seed
    run.config = config.to_dict()
    table = run_study(config)
    (run.out / "study_raw.csv").write_text(rows_to_csv(table.raw_rows(), RAW_COLUMNS))
    (run.out / "study_diffs.csv").write_text(rows_to_csv(table.diff_rows(), DIFF_COLUMNS))
    (run.out / "study_summary.csv").write_text(rows_to_csv(table.summary_rows(), SUMMARY_COLUMNS))
    failures = [{"trend": r.setting.trend, "tau_regime": r.setting.tau_regime, "v": r.setting.v, "replicate": r.replicate, "error": r.error} for r in table.failures]
    write_json(run.out / "study_failures.json", failures)


# ----------------------------------------------------------------- parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agmrf", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"agmrf {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("structure", help="assemble and scale structure matrices")
    s.add_argument("--graph", required=True, help="temporal config JSON or adjacency file")
    s.add_argument("--countries", help="area_id,country_id CSV")
    s.add_argument("--kind", default="plain", choices=["plain", "conflict", "multicountry", "general-multicountry", "adaptive"])
    s.add_argument("--out", required=True)

    s = sub.add_parser("prior", help="PC prior density grid, lambda and quantiles")
    s.add_argument("parameter", choices=["theta", "phi", "precision"])
    s.add_argument("--graph")
    s.add_argument("--countries")
    s.add_argument("--U", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--grid", type=int, default=199)
    s.add_argument("--quantiles", help="comma-separated probabilities")
    s.add_argument("--out", required=True)

    s = sub.add_parser("fit", help="fit a smoothed direct model")
    s.add_argument("--data", required=True, help="area_id,survey_id,logit_est,variance CSV")
    s.add_argument("--graph", required=True)
    s.add_argument("--countries")
    s.add_argument("--model", choices=["smoothed-direct", "proposed", "proposed-general"])
    s.add_argument("--config", help="model config JSON")
    slope = s.add_mutually_exclusive_group()
    slope.add_argument("--slope", dest="slope", action="store_true", default=None)
    slope.add_argument("--no-slope", dest="slope", action="store_false")
    s.add_argument("--survey-mode", choices=["none", "random", "fixed"])
    s.add_argument("--draws", type=int)
    s.add_argument("--threads", type=int, default=1, help="accepted for symmetry; fits run in one thread")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="one simulated dataset from the study design")
    s.add_argument("--trend", required=True, choices=["constant", "level-change", "triangle"])
    s.add_argument("--regime", default="unequal", choices=["equal", "unequal"])
    s.add_argument("--variance", default="1/300", help="observation variance, e.g. 1/300")
    s.add_argument("--replicate", type=int, default=0)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", required=True)

    s = sub.add_parser("study", help="run the simulation study")
    s.add_argument("--config", help="study config JSON")
    s.add_argument("--replicates", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    return p


COMMANDS = {
    "structure": cmd_structure,
    "prior": cmd_prior,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "study": cmd_study,
}


def _fail(status: int, kind: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc), "status": status}) + "\n")
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    run = Run(args)
    try:
        run.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](run)
        run.finish()
    except (NumericalError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)
    except VALIDATION_ERRORS as exc:
        return _fail(EXIT_VALIDATION, "validation", exc)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
