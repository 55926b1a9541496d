"""Replicate studies: misclassification tables, convergence-by-iteration,
jump-density accuracy, spot-volatility SSE comparisons, and the TRV
bias/variance check.

Replicates are embarrassingly parallel; each gets its own seed
(scenario_seed + replicate index) and aggregation runs in replicate order,
so reports are bit-identical regardless of worker count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigurationError
from .iterative import (
    METHODS,
    algo_constant_first_order,
    algo_constant_second_order,
    algo_local,
    oracle_threshold,
    sample_loss,
)
from .simulate import PRM_AIT, HestonMertonConfig, NormalJumpLaw, SamplePath, five_minute_h, simulate_path
from .spot_vol import tkw_series
from .thresholds import ThresholdVector, classify, estimate_n_j_iv, threshold_first_order

__all__ = [
    "Scenario",
    "StudySpec",
    "StudyReport",
    "benchmark_scenarios",
    "run_misclassification_study",
    "run_convergence_study",
    "run_f0_study",
    "run_spotvol_sse_study",
    "run_trv_bias_variance_check",
]

SCENARIO_SEED_STRIDE = 1_000_000
SEED_RULE = (
    "scenario_seed = base_seed + {stride} * (scenario_index + 1); "
    "replicate_seed = scenario_seed + replicate_index"
).format(stride=SCENARIO_SEED_STRIDE)


@dataclass(frozen=True)
class Scenario:
    """One cell of the study grid: horizon, leverage, and jump parameters."""

    days: int
    rho: float
    lam: float
    jump_sd: float
    obs_per_hour: int = 12

    @property
    def h(self) -> float:
        return five_minute_h(self.obs_per_hour)

    @property
    def n(self) -> int:
        return int(round(self.days * 6.5 * self.obs_per_hour))

    def config(self, seed: int) -> HestonMertonConfig:
        return HestonMertonConfig(
            lam=self.lam, jump_law=NormalJumpLaw(self.jump_sd), rho=self.rho,
            seed=seed, **PRM_AIT,
        )

    def label(self) -> str:
        return f"{self.days}d_rho{self.rho:g}_lam{self.lam:g}_sd{self.jump_sd:g}"


def benchmark_scenarios() -> tuple[Scenario, ...]:
    """The full 5-minute scenario grid of the benchmark misclassification study."""
    out = []
    for days in (21, 63):
        for rho in (0.0, -0.5):
            for lam, sd in ((50.0, 0.03), (100.0, 0.03), (200.0, 0.03), (1000.0, 0.01)):
                out.append(Scenario(days, rho, lam, sd))
    for lam, sd in ((100.0, 0.03), (200.0, 0.03), (1000.0, 0.01)):
        out.append(Scenario(126, -0.5, lam, sd))
    return tuple(out)


@dataclass(frozen=True)
class StudySpec:
    scenarios: tuple[Scenario, ...]
    replicates: int
    base_seed: int = 20240601
    methods: tuple[str, ...] = METHODS
    out_dir: str | None = None
    workers: int = 1
    max_iter: int = 4
    substeps: int = 16

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigurationError(f"replicates must be >= 1, got {self.replicates}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigurationError(f"unknown methods {sorted(unknown)}; valid: {METHODS}")
        for sc in self.scenarios:
            sc.config(seed=0)  # validates the underlying model parameters

    def scenario_seed(self, index: int) -> int:
        return self.base_seed + SCENARIO_SEED_STRIDE * (index + 1)

    def to_dict(self) -> dict:
        # out_dir and workers do not affect the results, so reruns into a
        # different directory or with another pool size stay byte-identical
        d = asdict(self)
        d["scenarios"] = [asdict(sc) for sc in self.scenarios]
        del d["out_dir"]
        del d["workers"]
        return d


@dataclass
class StudyReport:
    study: str
    columns: list[str]
    rows: list[dict]
    meta: dict = field(default_factory=dict)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                out = []
                for col in self.columns:
                    val = row[col]
                    out.append(f"{val:.17g}" if isinstance(val, float) else str(val))
                writer.writerow(out)


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _write_manifest(spec: StudySpec, study: str, outputs: list[str]) -> None:
    if spec.out_dir is None:
        return
    payload = {
        "study": study,
        "spec": spec.to_dict(),
        "seed_rule": SEED_RULE,
        "scenario_seeds": [spec.scenario_seed(i) for i in range(len(spec.scenarios))],
        "version": __version__,
        "outputs": sorted(outputs),
    }
    payload["config_hash"] = _config_hash({k: payload[k] for k in ("study", "spec", "seed_rule")})
    with open(os.path.join(spec.out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _map_replicates(fn, args_list, workers: int):
    if workers <= 1:
        return [fn(a) for a in args_list]
    chunk = max(1, len(args_list) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, args_list, chunksize=chunk))


def _simulate(scenario: Scenario, seed: int, substeps: int) -> SamplePath:
    return simulate_path(scenario.config(seed), scenario.n, scenario.h, substeps)


# ---------------------------------------------------------------------------
# per-replicate workers (module level so process pools can pickle them)
# ---------------------------------------------------------------------------

def _loss_replicate(args):
    scenario, seed, methods, max_iter, substeps = args
    path = _simulate(scenario, seed, substeps)
    out = {}
    for method in methods:
        if method == "c1":
            tv, _, _ = algo_constant_first_order(path)
        elif method == "c2":
            tv, _, _ = algo_constant_second_order(path)
        elif method == "n1":
            tv, _, _ = algo_local(path, order=1, max_iter=max_iter)
        elif method == "n2":
            tv, _, _ = algo_local(path, order=2, max_iter=max_iter)
        else:
            tv = oracle_threshold(path, 2, NormalJumpLaw(scenario.jump_sd), scenario.lam)
        out[method] = sample_loss(classify(path, tv), path.dn)
    return out


def _convergence_replicate(args):
    scenario, seed, max_iter, substeps = args
    path = _simulate(scenario, seed, substeps)
    _, _, trace = algo_local(path, order=2, max_iter=max_iter)
    return trace.losses_per_iteration(path.dn, max_iter)


def _f0_replicate(args):
    scenario, seed, max_iter, substeps = args
    path = _simulate(scenario, seed, substeps)
    _, report, _ = algo_local(path, order=2, max_iter=max_iter)
    return report.f0_hat if report.f0_hat is not None else 0.0


def _sse_replicate(args):
    scenario, seed, max_iter, substeps, want_series = args
    path = _simulate(scenario, seed, substeps)
    delta = math.sqrt(path.h)
    # spot series as plotted: the plain weighted sum evaluated at the
    # thresholds of the first local iteration (its warm start), the final
    # iteration, and the oracle
    tv_first, _, _ = algo_constant_second_order(path)
    tv_last, _, _ = algo_local(path, order=2, max_iter=max_iter)
    tv_oracle = oracle_threshold(path, 2, NormalJumpLaw(scenario.jump_sd), scenario.lam)
    spot_first = tkw_series(path, delta, None, tv_first, normalized=False)
    spot_last = tkw_series(path, delta, None, tv_last, normalized=False)
    spot_oracle = tkw_series(path, delta, None, tv_oracle, normalized=False)
    v_true = path.v[1:]
    sse = (
        float(np.sum((spot_first - v_true) ** 2)),
        float(np.sum((spot_last - v_true) ** 2)),
        float(np.sum((spot_oracle - v_true) ** 2)),
    )
    if want_series:
        return sse, (path.times()[1:], v_true, spot_first, spot_last, spot_oracle)
    return sse, None


def _trv_replicate(args):
    scenario, seed, gamma, sigma2, substeps = args
    cfg = HestonMertonConfig(
        kappa=1.0, theta=sigma2, xi=0.0, rho=0.0,
        drift_a=gamma, drift_b=0.0,
        lam=scenario.lam, jump_law=NormalJumpLaw(scenario.jump_sd),
        x0=0.0, v0=sigma2, seed=seed,
    )
    path = simulate_path(cfg, scenario.n, scenario.h, substeps)
    b1 = threshold_first_order(sigma2, path.h)
    _, _, iv_hat = estimate_n_j_iv(path, ThresholdVector.constant(b1, path.n))
    return iv_hat - sigma2 * path.n * path.h


# ---------------------------------------------------------------------------
# study runners
# ---------------------------------------------------------------------------

def _mean_se(values: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return m, se


def _scenario_columns() -> list[str]:
    return ["days", "obs_per_hour", "rho", "lam", "jump_sd"]


def _scenario_values(sc: Scenario) -> dict:
    return {
        "days": sc.days, "obs_per_hour": sc.obs_per_hour,
        "rho": sc.rho, "lam": sc.lam, "jump_sd": sc.jump_sd,
    }


def run_misclassification_study(spec: StudySpec) -> StudyReport:
    """Mean jump-misclassification count per scenario and method."""
    t_start = time.monotonic()
    columns = _scenario_columns() + [c for m in spec.methods for c in (m, f"se_{m}")]
    rows = []
    for s_idx, sc in enumerate(spec.scenarios):
        seed0 = spec.scenario_seed(s_idx)
        args = [(sc, seed0 + r, spec.methods, spec.max_iter, spec.substeps)
                for r in range(spec.replicates)]
        results = _map_replicates(_loss_replicate, args, spec.workers)
        row = _scenario_values(sc)
        for method in spec.methods:
            vals = np.array([res[method] for res in results], dtype=float)
            row[method], row[f"se_{method}"] = _mean_se(vals)
        rows.append(row)
    report = StudyReport("table1", columns, rows,
                         meta={"replicates": spec.replicates, "base_seed": spec.base_seed,
                               "runtime_s": time.monotonic() - t_start})
    if spec.out_dir is not None:
        os.makedirs(spec.out_dir, exist_ok=True)
        out = os.path.join(spec.out_dir, "table1.csv")
        report.to_csv(out)
        _write_manifest(spec, "table1", ["table1.csv"])
    return report


def run_convergence_study(spec: StudySpec) -> StudyReport:
    """Mean misclassification after each local second-order iteration."""
    t_start = time.monotonic()
    iters = list(range(1, spec.max_iter + 1))
    columns = _scenario_columns() + [c for k in iters for c in (f"iter{k}", f"se_iter{k}")]
    rows = []
    for s_idx, sc in enumerate(spec.scenarios):
        seed0 = spec.scenario_seed(s_idx)
        args = [(sc, seed0 + r, spec.max_iter, spec.substeps) for r in range(spec.replicates)]
        results = np.array(_map_replicates(_convergence_replicate, args, spec.workers))
        row = _scenario_values(sc)
        for k in iters:
            row[f"iter{k}"], row[f"se_iter{k}"] = _mean_se(results[:, k - 1])
        rows.append(row)
    report = StudyReport("table2", columns, rows,
                         meta={"replicates": spec.replicates, "base_seed": spec.base_seed,
                               "runtime_s": time.monotonic() - t_start})
    if spec.out_dir is not None:
        os.makedirs(spec.out_dir, exist_ok=True)
        report.to_csv(os.path.join(spec.out_dir, "table2.csv"))
        _write_manifest(spec, "table2", ["table2.csv"])
    return report


def run_f0_study(spec: StudySpec) -> StudyReport:
    """Mean, sd, and root-MSE of the final jump-density estimate."""
    t_start = time.monotonic()
    columns = _scenario_columns() + ["f0_true", "mean", "se_mean", "sd", "rmse"]
    rows = []
    for s_idx, sc in enumerate(spec.scenarios):
        seed0 = spec.scenario_seed(s_idx)
        args = [(sc, seed0 + r, spec.max_iter, spec.substeps) for r in range(spec.replicates)]
        vals = np.array(_map_replicates(_f0_replicate, args, spec.workers))
        f0_true = NormalJumpLaw(sc.jump_sd).c0
        row = _scenario_values(sc)
        row["f0_true"] = f0_true
        row["mean"], row["se_mean"] = _mean_se(vals)
        row["sd"] = float(np.std(vals, ddof=1))
        row["rmse"] = float(math.sqrt(np.mean((vals - f0_true) ** 2)))
        rows.append(row)
    report = StudyReport("table3", columns, rows,
                         meta={"replicates": spec.replicates, "base_seed": spec.base_seed,
                               "runtime_s": time.monotonic() - t_start})
    if spec.out_dir is not None:
        os.makedirs(spec.out_dir, exist_ok=True)
        report.to_csv(os.path.join(spec.out_dir, "table3.csv"))
        _write_manifest(spec, "table3", ["table3.csv"])
    return report


def run_spotvol_sse_study(spec: StudySpec) -> StudyReport:
    """Path SSE of the spot-variance series: first iteration, final
    iteration, and oracle thresholds.  Emits a plot-ready series CSV of the
    first replicate per scenario."""
    t_start = time.monotonic()
    if spec.out_dir is not None:
        os.makedirs(spec.out_dir, exist_ok=True)
    columns = _scenario_columns() + [
        "median_iter1", "median_iter4", "median_oracle",
        "mean_iter1", "mean_iter4", "mean_oracle",
    ]
    rows = []
    outputs = []
    for s_idx, sc in enumerate(spec.scenarios):
        seed0 = spec.scenario_seed(s_idx)
        args = [(sc, seed0 + r, spec.max_iter, spec.substeps, r == 0 and spec.out_dir is not None)
                for r in range(spec.replicates)]
        results = _map_replicates(_sse_replicate, args, spec.workers)
        sses = np.array([res[0] for res in results])
        row = _scenario_values(sc)
        for j, tag in enumerate(("iter1", "iter4", "oracle")):
            row[f"median_{tag}"] = float(np.median(sses[:, j]))
            row[f"mean_{tag}"] = float(np.mean(sses[:, j]))
        rows.append(row)
        series = results[0][1]
        if series is not None:
            t, v_true, s1, s4, so = series
            name = f"sse_series_{sc.label()}.csv"
            outputs.append(name)
            with open(os.path.join(spec.out_dir, name), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t", "v_true", "v_iter1", "v_iter4", "v_oracle"])
                for i in range(t.size):
                    writer.writerow([f"{val:.17g}" for val in (t[i], v_true[i], s1[i], s4[i], so[i])])
    report = StudyReport("sse", columns, rows,
                         meta={"replicates": spec.replicates, "base_seed": spec.base_seed,
                               "runtime_s": time.monotonic() - t_start})
    if spec.out_dir is not None:
        report.to_csv(os.path.join(spec.out_dir, "sse_summary.csv"))
        _write_manifest(spec, "sse", ["sse_summary.csv"] + outputs)
    return report


def run_trv_bias_variance_check(spec: StudySpec, gamma: float = 0.05,
                                sigma2: float = 0.04) -> StudyReport:
    """Bias and variance of TRV - integrated variance under deterministic
    volatility, against the leading-order targets."""
    t_start = time.monotonic()
    columns = _scenario_columns() + [
        "gamma", "sigma2", "bias_hat", "se_bias", "bias_target", "var_hat", "var_target",
    ]
    rows = []
    for s_idx, sc in enumerate(spec.scenarios):
        seed0 = spec.scenario_seed(s_idx)
        args = [(sc, seed0 + r, gamma, sigma2, spec.substeps) for r in range(spec.replicates)]
        errs = np.array(_map_replicates(_trv_replicate, args, spec.workers))
        big_t = sc.n * sc.h
        row = _scenario_values(sc)
        row["gamma"] = gamma
        row["sigma2"] = sigma2
        row["bias_hat"], row["se_bias"] = _mean_se(errs)
        row["bias_target"] = sc.h * big_t * (gamma**2 - sc.lam * sigma2)
        row["var_hat"] = float(np.var(errs, ddof=1))
        row["var_target"] = 2.0 * sc.h * big_t * sigma2**2
        rows.append(row)
    report = StudyReport("bias_variance", columns, rows,
                         meta={"replicates": spec.replicates, "base_seed": spec.base_seed,
                               "runtime_s": time.monotonic() - t_start})
    if spec.out_dir is not None:
        os.makedirs(spec.out_dir, exist_ok=True)
        report.to_csv(os.path.join(spec.out_dir, "bias_variance.csv"))
        _write_manifest(spec, "bias_variance", ["bias_variance.csv"])
    return report
