"""Command-line front end.

Commands take a JSON config file plus flag overrides (flags win), and every
output file gets a manifest entry recording the command, config hash, and
seed so runs can be reproduced byte for byte.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

from . import __version__
from .errors import ThreshvolError
from .iterative import (
    algo_constant_first_order,
    algo_constant_second_order,
    algo_local,
    sample_loss,
)
from .jump_density import estimate_f0, write_density_diagnostics
from .mc_harness import (
    Scenario,
    StudySpec,
    run_convergence_study,
    run_f0_study,
    run_misclassification_study,
    run_spotvol_sse_study,
    run_trv_bias_variance_check,
)
from .simulate import PRM_AIT, HestonMertonConfig, NormalJumpLaw, SamplePath, five_minute_h, simulate_path
from .spot_vol import builtin_kernels, write_spot_series
from .thresholds import classify

STUDIES = ("table1", "table2", "table3", "sse", "bias-variance")

_SIMULATE_DEFAULTS = {
    "days": 21, "obs_per_hour": 12, "n": None, "h": None,
    "kappa": PRM_AIT["kappa"], "theta": PRM_AIT["theta"], "xi": PRM_AIT["xi"],
    "rho": 0.0, "drift_a": PRM_AIT["drift_a"], "drift_b": PRM_AIT["drift_b"],
    "lam": 100.0, "jump_sd": 0.03, "x0": PRM_AIT["x0"], "v0": PRM_AIT["v0"],
    "seed": 0, "substeps": 16,
}

_DETECT_DEFAULTS = {
    "method": "n2", "max_iter": 4, "delta": None, "kernel": "double_exponential",
    "use_density_threshold": False,
}

_SPOTVOL_DEFAULTS = dict(_DETECT_DEFAULTS)
_F0_DEFAULTS = {"method": "n2", "max_iter": 4, "bandwidth": None}

_STUDY_DEFAULTS = {
    "scenarios": None, "methods": None, "max_iter": 4, "substeps": 16,
    "gamma": 0.05, "sigma2": 0.04,
}


def _load_config(path: str | None, defaults: dict) -> dict:
    cfg = dict(defaults)
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ThreshvolError(f"config {path} must hold a JSON object")
        unknown = sorted(set(data) - set(defaults))
        if unknown:
            raise ThreshvolError(f"unknown config keys {unknown}; valid: {sorted(defaults)}")
        cfg.update(data)
    return cfg


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _write_sidecar_manifest(out_path: str, command: str, cfg: dict, seed) -> None:
    payload = {
        "command": command,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "seed": seed,
        "version": __version__,
    }
    with open(out_path + ".manifest.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _grid_from_config(cfg: dict) -> tuple[int, float]:
    if cfg["n"] is not None and cfg["h"] is not None:
        return int(cfg["n"]), float(cfg["h"])
    n = int(round(cfg["days"] * 6.5 * cfg["obs_per_hour"]))
    return n, five_minute_h(cfg["obs_per_hour"])


def cmd_simulate(config_path: str | None, out_path: str, seed: int | None) -> int:
    cfg = _load_config(config_path, _SIMULATE_DEFAULTS)
    if seed is not None:
        cfg["seed"] = seed
    n, h = _grid_from_config(cfg)
    model = HestonMertonConfig(
        kappa=cfg["kappa"], theta=cfg["theta"], xi=cfg["xi"], rho=cfg["rho"],
        drift_a=cfg["drift_a"], drift_b=cfg["drift_b"], lam=cfg["lam"],
        jump_law=NormalJumpLaw(cfg["jump_sd"]), x0=cfg["x0"], v0=cfg["v0"],
        seed=cfg["seed"],
    )
    path = simulate_path(model, n, h, cfg["substeps"])
    path.to_csv(out_path)
    _write_sidecar_manifest(out_path, "simulate", cfg, cfg["seed"])
    print(f"wrote {n + 1} observations to {out_path}")
    return 0


def _run_method(path: SamplePath, cfg: dict):
    method = cfg["method"]
    kernels = builtin_kernels()
    if cfg.get("kernel") is not None and cfg["kernel"] not in kernels:
        raise ThreshvolError(f"unknown kernel {cfg['kernel']}; valid: {sorted(kernels)}")
    if method == "c1":
        return algo_constant_first_order(path)
    if method == "c2":
        # the constant second-order loop runs to its classification fixed point
        return algo_constant_second_order(path,
                                          use_density_threshold=cfg["use_density_threshold"])
    if method in ("n1", "n2"):
        return algo_local(
            path, order=int(method[1]), max_iter=cfg["max_iter"],
            kernel=kernels[cfg["kernel"]], delta=cfg["delta"],
            use_density_threshold=cfg["use_density_threshold"],
        )
    raise ThreshvolError(f"unknown method {method}; valid: c1, c2, n1, n2")


def cmd_detect(config_path: str | None, in_path: str, out_path: str) -> int:
    cfg = _load_config(config_path, _DETECT_DEFAULTS)
    path = SamplePath.from_csv(in_path)
    tv, report, trace = _run_method(path, cfg)
    cls = classify(path, tv)
    tv.to_csv(out_path, flags=cls.flags)
    summary = {
        "method": report.method,
        "lambda_hat": report.lambda_hat,
        "sigma2_hat": report.sigma2_hat,
        "f0_hat": report.f0_hat,
        "status": report.status,
        "iterations_used": report.iterations_used,
        "flagged": cls.count(),
    }
    if path.has_latent:
        summary["sample_loss"] = sample_loss(cls, path.dn)
        print(f"sample_loss: {summary['sample_loss']}")
    with open(out_path + ".summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _write_sidecar_manifest(out_path, "detect", cfg, None)
    print(f"method {report.method}: flagged {cls.count()} of {path.n} intervals "
          f"({report.status} after {report.iterations_used} iterations)")
    return 0


def cmd_estimate_spotvol(config_path: str | None, in_path: str, out_path: str) -> int:
    cfg = _load_config(config_path, _SPOTVOL_DEFAULTS)
    path = SamplePath.from_csv(in_path)
    tv, report, trace = _run_method(path, cfg)
    spot = report.spot_vol
    if spot is None:
        raise ThreshvolError(f"method {cfg['method']} does not produce a spot series; use n1 or n2")
    truth = path.v[1:] if path.v is not None else None
    write_spot_series(out_path, path.times()[1:], spot, truth)
    _write_sidecar_manifest(out_path, "estimate-spotvol", cfg, None)
    print(f"wrote spot-variance series ({path.n} points) to {out_path}")
    return 0


def cmd_estimate_f0(config_path: str | None, in_path: str, out_path: str) -> int:
    cfg = _load_config(config_path, _F0_DEFAULTS)
    path = SamplePath.from_csv(in_path)
    tv, report, trace = _run_method(path, {**_DETECT_DEFAULTS, "method": cfg["method"],
                                           "max_iter": cfg["max_iter"]})
    est = estimate_f0(path, tv, bandwidth=cfg["bandwidth"])
    write_density_diagnostics([est], out_path)
    _write_sidecar_manifest(out_path, "estimate-f0", cfg, None)
    print(f"f0_hat = {est.f0_hat:.6g} from {est.exceedance_count} exceedances "
          f"(bandwidth {est.bandwidth:.6g})")
    return 0


def _scenarios_from_config(cfg: dict, default: list[Scenario]) -> tuple[Scenario, ...]:
    if cfg["scenarios"] is None:
        return tuple(default)
    out = []
    for item in cfg["scenarios"]:
        unknown = sorted(set(item) - {"days", "rho", "lam", "jump_sd", "obs_per_hour"})
        if unknown:
            raise ThreshvolError(f"unknown scenario keys {unknown}")
        out.append(Scenario(
            days=int(item["days"]), rho=float(item.get("rho", 0.0)),
            lam=float(item["lam"]), jump_sd=float(item["jump_sd"]),
            obs_per_hour=int(item.get("obs_per_hour", 12)),
        ))
    return tuple(out)


_DEFAULT_STUDY_SCENARIOS = {
    "table1": [
        Scenario(21, 0.0, 100.0, 0.03), Scenario(21, 0.0, 200.0, 0.03),
        Scenario(21, 0.0, 1000.0, 0.01), Scenario(63, 0.0, 200.0, 0.03),
        Scenario(63, 0.0, 1000.0, 0.01),
    ],
    "table2": [Scenario(21, 0.0, 100.0, 0.03), Scenario(21, 0.0, 1000.0, 0.01)],
    "table3": [Scenario(63, 0.0, 200.0, 0.03), Scenario(63, 0.0, 1000.0, 0.01)],
    "sse": [Scenario(126, -0.5, 200.0, 0.03), Scenario(126, -0.5, 1000.0, 0.01)],
    "bias-variance": [Scenario(63, 0.0, 100.0, 0.35), Scenario(63, 0.0, 0.0, 0.35)],
}


def cmd_study(study: str, config_path: str | None, out_dir: str, seed: int,
              replicates: int, workers: int) -> int:
    cfg = _load_config(config_path, _STUDY_DEFAULTS)
    scenarios = _scenarios_from_config(cfg, _DEFAULT_STUDY_SCENARIOS[study])
    methods = tuple(cfg["methods"]) if cfg["methods"] is not None else ("c1", "c2", "n1", "n2", "oracle")
    spec = StudySpec(
        scenarios=scenarios, replicates=replicates, base_seed=seed,
        methods=methods, out_dir=out_dir, workers=workers,
        max_iter=cfg["max_iter"], substeps=cfg["substeps"],
    )
    runner = {
        "table1": run_misclassification_study,
        "table2": run_convergence_study,
        "table3": run_f0_study,
        "sse": run_spotvol_sse_study,
    }
    if study == "bias-variance":
        report = run_trv_bias_variance_check(spec, gamma=cfg["gamma"], sigma2=cfg["sigma2"])
    else:
        report = runner[study](spec)
    print(f"{study}: {len(report.rows)} scenario rows, m={replicates}, "
          f"{report.meta['runtime_s']:.1f}s -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threshvol",
        description="Threshold-kernel jump detection and volatility estimation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate a jump-diffusion path to CSV")
    p_sim.add_argument("--config", default=None)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--seed", type=int, default=None)

    for name, helptext in (
        ("detect", "run a threshold method and write per-interval thresholds/flags"),
        ("estimate-spotvol", "write the spot-variance series of a local method"),
        ("estimate-f0", "estimate the jump density at the origin"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None)
        p.add_argument("input")
        p.add_argument("output")

    p_study = sub.add_parser("study", help="run a replicate study")
    p_study.add_argument("name", choices=STUDIES)
    p_study.add_argument("--config", default=None)
    p_study.add_argument("--out", required=True)
    p_study.add_argument("--seed", type=int, default=20240601)
    p_study.add_argument("--replicates", type=int, default=200)
    p_study.add_argument("--full", action="store_true",
                         help="use 1000 replicates (overrides --replicates)")
    p_study.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, args.seed)
        if args.command == "detect":
            return cmd_detect(args.config, args.input, args.output)
        if args.command == "estimate-spotvol":
            return cmd_estimate_spotvol(args.config, args.input, args.output)
        if args.command == "estimate-f0":
            return cmd_estimate_f0(args.config, args.input, args.output)
        if args.command == "study":
            replicates = 1000 if args.full else args.replicates
            return cmd_study(args.name, args.config, args.out, args.seed,
                             replicates, args.workers)
        parser.error(f"unknown command {args.command}")
    except (ThreshvolError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
