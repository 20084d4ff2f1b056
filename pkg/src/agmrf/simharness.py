"""Simulation study: conflict shocks in a 30-period series.

Data follow y_i ~ N(mu_i + b_i, V) with independent b_i ~ N(0, 1/tau_i);
the smoothed direct model (RW1) and the proposed model (conflict ARW1) are
fitted to each replicate and compared by RMSE, DIC and LS.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .graph import temporal_graph
from .inference import GridConfig, NumericalError, fit_model, make_rng
from .latent import Observation, build_model

log = logging.getLogger(__name__)

N_PERIODS = 30
CONFLICT = tuple(range(9, 16))
BASELINE = -3.0
SHOCK = 1.0
PEAK = 12
TRENDS = ("constant", "level-change", "triangle")
REGIMES = ("equal", "unequal")
VARIANCES = (1 / 75, 1 / 150, 1 / 300)
MODELS = ("smoothed-direct", "proposed")
METRICS = ("rmse", "dic", "ls")


@dataclass(frozen=True)
class SimSetting:
    trend: str
    tau_regime: str
    v: float
    n: int = N_PERIODS
    conflict: tuple[int, ...] = CONFLICT

    def __post_init__(self):
        if self.trend not in TRENDS:
            raise ValueError(f"unknown trend {self.trend!r}")
        if self.tau_regime not in REGIMES:
            raise ValueError(f"unknown precision regime {self.tau_regime!r}")
        if not self.v > 0:
            raise ValueError("observation variance must be positive")

    @property
    def key(self) -> str:
        return f"{self.trend}|{self.tau_regime}|{self.v:.17g}"

    def digest(self) -> int:
        """Stable 64-bit integer identifying the setting (seeds its RNG stream)."""
        return int.from_bytes(hashlib.sha256(self.key.encode()).digest()[:8], "big")

    def taus(self) -> np.ndarray:
        tau = np.full(self.n, 20.0)
        if self.tau_regime == "unequal":
            tau[np.array(self.conflict) - 1] = 10.0
        return tau


def make_trend(kind: str, n: int = N_PERIODS, conflict: Sequence[int] = CONFLICT) -> np.ndarray:
    """Mean curve on the logit scale for periods 1..n."""
    mu = np.full(n, BASELINE)
    if kind == "constant":
        return mu
    idx = np.arange(1, n + 1)
    window = np.isin(idx, conflict)
    if kind == "level-change":
        mu[window] += SHOCK
        return mu
    if kind == "triangle":
        lo, hi = min(conflict) - 1, max(conflict) + 1
        peak = (lo + hi) / 2
        ramp = 1.0 - np.abs(idx - peak) / (peak - lo)
        mu += SHOCK * np.clip(ramp, 0.0, None) * ((idx > lo) & (idx < hi))
        return mu
    raise ValueError(f"unknown trend {kind!r}")


@dataclass
class SimData:
    setting: SimSetting
    replicate: int
    eta: np.ndarray
    y: np.ndarray

    def observations(self) -> list[Observation]:
        return [Observation(i + 1, 1, float(yi), self.setting.v) for i, yi in enumerate(self.y)]


def simulate_dataset(setting: SimSetting, replicate: int, seed: int = 0) -> SimData:
    rng = make_rng(seed, setting.digest(), replicate)
    mu = make_trend(setting.trend, setting.n, setting.conflict)
    b = rng.standard_normal(setting.n) / np.sqrt(setting.taus())
    eta = mu + b
    y = eta + math.sqrt(setting.v) * rng.standard_normal(setting.n)
    return SimData(setting, replicate, eta, y)


@dataclass(frozen=True)
class StudyConfig:
    trends: tuple[str, ...] = TRENDS
    regimes: tuple[str, ...] = REGIMES
    variances: tuple[float, ...] = VARIANCES
    replicates: int = 100
    seed: int = 1
    threads: int = 1
    grid: GridConfig = GridConfig()

    def settings(self) -> list[SimSetting]:
        return [SimSetting(t, r, v) for t in self.trends for r in self.regimes for v in self.variances]

    @classmethod
    def from_dict(cls, d) -> "StudyConfig":
        kw = dict(d)
        for k in ("trends", "regimes"):
            if k in kw:
                kw[k] = tuple(kw[k])
        if "variances" in kw:
            kw["variances"] = tuple(_parse_variance(v) for v in kw["variances"])
        if "grid" in kw:
            kw["grid"] = GridConfig.from_dict(kw["grid"])
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown study config keys {sorted(unknown)}")
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trends"], d["regimes"], d["variances"] = list(self.trends), list(self.regimes), list(self.variances)
        return d


def _parse_variance(v) -> float:
    if isinstance(v, str) and "/" in v:
        num, den = v.split("/")
        return float(num) / float(den)
    return float(v)


@dataclass
class ReplicateResult:
    setting: SimSetting
    replicate: int
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)  # model -> metric -> value
    error: Optional[str] = None


def run_replicate(setting: SimSetting, replicate: int, seed: int, grid: GridConfig = GridConfig()) -> ReplicateResult:
    data = simulate_dataset(setting, replicate, seed)
    g = temporal_graph(setting.n, setting.conflict)
    out = ReplicateResult(setting, replicate)
    try:
        for model in MODELS:
            fit = fit_model(build_model(g, model, data.observations()), grid)
            out.metrics[model] = {"rmse": fit.rmse(data.eta), "dic": fit.dic(), "ls": fit.log_score()}
    except (NumericalError, np.linalg.LinAlgError) as exc:
        out.metrics = {}
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def _run_task(args):
    return run_replicate(*args)


def _worker_init():
    # one BLAS thread per worker process; nested pools thrash badly
    threadpool_limits(1)


@dataclass
class StudyTable:
    results: list[ReplicateResult]

    @property
    def ok(self) -> list[ReplicateResult]:
        return [r for r in self.results if r.error is None]

    @property
    def failures(self) -> list[ReplicateResult]:
        return [r for r in self.results if r.error is not None]

    def raw_rows(self) -> list[dict]:
        rows = []
        for r in self.ok:
            for model in MODELS:
                rows.append(_setting_cols(r) | {"model": model} | {m: r.metrics[model][m] for m in METRICS})
        return rows

    def diff_rows(self) -> list[dict]:
        """smoothed-direct minus proposed; positive favours the proposed model."""
        rows = []
        for r in self.ok:
            a, b = r.metrics["smoothed-direct"], r.metrics["proposed"]
            rows.append(_setting_cols(r) | {f"d_{m}": a[m] - b[m] for m in METRICS})
        return rows

    def diffs(self, trend: str, regime: str, v: float, metric: str) -> np.ndarray:
        return np.array(
            [
                row[f"d_{metric}"]
                for row, r in zip(self.diff_rows(), self.ok)
                if r.setting.trend == trend and r.setting.tau_regime == regime and math.isclose(r.setting.v, v)
            ]
        )

    def summary_rows(self) -> list[dict]:
        groups: dict[SimSetting, list[ReplicateResult]] = {}
        for r in self.results:
            groups.setdefault(r.setting, []).append(r)
        rows = []
        for s, rs in groups.items():
            good = [r for r in rs if r.error is None]
            row = {"trend": s.trend, "tau_regime": s.tau_regime, "v": s.v, "n_ok": len(good), "n_failed": len(rs) - len(good)}
            for m in METRICS:
                d = np.array([r.metrics["smoothed-direct"][m] - r.metrics["proposed"][m] for r in good])
                if d.size:
                    q1, med, q3 = np.quantile(d, [0.25, 0.5, 0.75])
                else:
                    q1 = med = q3 = math.nan
                row[f"median_d_{m}"] = med
                row[f"iqr_d_{m}"] = q3 - q1
            rows.append(row)
        return rows


def _setting_cols(r: ReplicateResult) -> dict:
    return {"trend": r.setting.trend, "tau_regime": r.setting.tau_regime, "v": r.setting.v, "replicate": r.replicate}


def run_study(config: StudyConfig, settings: Optional[Iterable[SimSetting]] = None) -> StudyTable:
    """Fit both models to every (setting, replicate); results in task order."""
    settings = list(settings) if settings is not None else config.settings()
    tasks = [(s, r, config.seed, config.grid) for s in settings for r in range(config.replicates)]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads, initializer=_worker_init) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * config.threads))))
    else:
        results = [_run_task(t) for t in tasks]
    failed = sum(r.error is not None for r in results)
    if failed:
        log.warning("%d of %d replicates failed and are excluded", failed, len(results))
    return StudyTable(results)


def rows_to_csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


RAW_COLUMNS = ("trend", "tau_regime", "v", "replicate", "model", "rmse", "dic", "ls")
DIFF_COLUMNS = ("trend", "tau_regime", "v", "replicate", "d_rmse", "d_dic", "d_ls")
SUMMARY_COLUMNS = (
    "trend",
    "tau_regime",
    "v",
    "n_ok",
    "n_failed",
    "median_d_rmse",
    "iqr_d_rmse",
    "median_d_dic",
    "iqr_d_dic",
    "median_d_ls",
    "iqr_d_ls",
)
