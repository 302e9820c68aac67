"""Command-line front end: `lfmc run` and `lfmc validate`.

A run is described by a JSON config file naming either a built-in
benchmark or external solver processes (never both), the assembly
strategy, the driver sizes, and the cost-bias settings. Outputs are a
deterministic summary.json and two CSVs (per-sample rows and cumulative
call counts) plus a manifest.json carrying the run id and timestamps.
Exit codes: 0 success, 2 invalid config, 3 evaluation/runtime failure,
4 non-convergence (with a partial summary flagged "incomplete").
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import STRATEGIES, ModelEnsemble, ModelHandle
from .benchmarks import BENCHMARKS, make_benchmark_ensemble
from .distributions import StandardNormal
from .errors import ConfigError, ModelEvaluationError, NonConvergenceError
from .external import ExternalModel, ExternalModelSpec
from .gp import CorrectionGP
from .model_probability import CostModel
from .rng import stream_seed
from .subset import FailureEstimate, RunConfig, run

_RUN_FIELDS = {
    "n_pts": 20000,
    "n_chains": 100,
    "n_init": 20,
    "pi_target": 0.1,
    "failure_threshold": 0.0,
    "u_threshold": 2.0,
    "max_subsets": 25,
    "proposal_scale": 1.0,
    "gp_reopt_stride": 1,
    "seed": 0,
}
_TOP_FIELDS = {"strategy", "benchmark", "external_models", "beta",
               "gamma_override", *_RUN_FIELDS}
_EXTERNAL_FIELDS = {"input_dimension", "hf", "lfs"}
_MODEL_FIELDS = {"command", "input_indices", "timeout", "tau", "name"}


# ------------------------------------------------------------- config load


def load_config(path: str | Path) -> dict:
    """Read, validate, and normalize a run config; raises ConfigError."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return normalize_config(raw)


def normalize_config(raw: dict) -> dict:
    for key in raw:
        if key not in _TOP_FIELDS:
            raise ConfigError(f"unknown config field {key!r}")

    cfg = dict(raw)
    strategy = cfg.get("strategy")
    if strategy not in STRATEGIES:
        raise ConfigError(
            f"strategy must be one of {list(STRATEGIES)}, got {strategy!r}"
        )

    has_benchmark = "benchmark" in cfg and cfg["benchmark"] is not None
    has_external = "external_models" in cfg and cfg["external_models"] is not None
    if has_benchmark == has_external:
        raise ConfigError(
            "exactly one of 'benchmark' and 'external_models' must be set"
        )
    if has_benchmark and cfg["benchmark"] not in BENCHMARKS:
        raise ConfigError(
            f"benchmark must be one of {sorted(BENCHMARKS)}, "
            f"got {cfg['benchmark']!r}"
        )
    if has_external:
        cfg["external_models"] = _normalize_external(cfg["external_models"])

    beta = cfg.setdefault("beta", 0.0)
    if not isinstance(beta, (int, float)) or isinstance(beta, bool) \
            or not math.isfinite(beta) or beta < 0:
        raise ConfigError(f"beta must be a nonnegative real, got {beta!r}")
    override = cfg.setdefault("gamma_override", None)
    if override is not None:
        if (not isinstance(override, list)
                or not all(isinstance(g, (int, float)) and not isinstance(g, bool)
                           for g in override)):
            raise ConfigError("gamma_override must be a list of reals")
        if any(g < 1.0 for g in override):
            raise ConfigError("gamma_override values must be >= 1")

    for name, default in _RUN_FIELDS.items():
        cfg.setdefault(name, default)
    try:
        build_run_config(cfg).validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _normalize_external(section) -> dict:
    if not isinstance(section, dict):
        raise ConfigError("external_models must be an object")
    for key in section:
        if key not in _EXTERNAL_FIELDS:
            raise ConfigError(f"unknown external_models field {key!r}")
    dim = section.get("input_dimension")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ConfigError(
            f"external_models.input_dimension must be a positive integer, "
            f"got {dim!r}"
        )
    if "hf" not in section:
        raise ConfigError("external_models.hf is required")
    lfs = section.get("lfs")
    if not isinstance(lfs, list) or len(lfs) == 0:
        raise ConfigError("external_models.lfs must be a non-empty list")
    out = {
        "input_dimension": dim,
        "hf": _normalize_model(section["hf"], "external_models.hf", dim),
        "lfs": [
            _normalize_model(m, f"external_models.lfs[{i}]", dim)
            for i, m in enumerate(lfs)
        ],
    }
    return out


def _normalize_model(model, label: str, dim: int) -> dict:
    if not isinstance(model, dict):
        raise ConfigError(f"{label} must be an object")
    for key in model:
        if key not in _MODEL_FIELDS:
            raise ConfigError(f"unknown {label} field {key!r}")
    command = model.get("command")
    if (not isinstance(command, list) or len(command) == 0
            or not all(isinstance(c, str) for c in command)):
        raise ConfigError(f"{label}.command must be a non-empty list of strings")
    indices = model.get("input_indices")
    if indices is not None:
        if (not isinstance(indices, list)
                or not all(isinstance(i, int) and not isinstance(i, bool)
                           for i in indices)):
            raise ConfigError(f"{label}.input_indices must be a list of integers")
        if any(i < 0 or i >= dim for i in indices):
            raise ConfigError(
                f"{label}.input_indices must lie in [0, {dim - 1}]"
            )
    timeout = model.get("timeout", 30.0)
    if not isinstance(timeout, (int, float)) or isinstance(timeout, bool) \
            or not timeout > 0:
        raise ConfigError(f"{label}.timeout must be a positive real")
    tau = model.get("tau", 1.0)
    if not isinstance(tau, (int, float)) or isinstance(tau, bool) or not tau > 0:
        raise ConfigError(f"{label}.tau must be a positive real")
    return {
        "command": command,
        "input_indices": indices,
        "timeout": float(timeout),
        "tau": float(tau),
        "name": model.get("name", ""),
    }


_INT_RUN_FIELDS = ("n_pts", "n_chains", "n_init", "max_subsets",
                   "gp_reopt_stride", "seed")


def build_run_config(cfg: dict) -> RunConfig:
    kwargs = {}
    for name in _RUN_FIELDS:
        value = cfg[name]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        if name in _INT_RUN_FIELDS:
            if float(value).is_integer():
                value = int(value)
            else:
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        kwargs[name] = value
    return RunConfig(**kwargs)


# -------------------------------------------------------- ensemble building


def build_ensemble(cfg: dict):
    """Return (ensemble, distribution, closers) for a normalized config."""
    if cfg.get("benchmark"):
        override = cfg["gamma_override"]
        ensemble, dist = make_benchmark_ensemble(
            cfg["benchmark"], cfg["strategy"], cfg["seed"], beta=cfg["beta"],
            gamma_override=np.asarray(override, dtype=float)
            if override is not None else None,
        )
        return ensemble, dist, []

    section = cfg["external_models"]
    closers = []

    def make_bridge(spec_dict, model_id, fallback_name):
        spec = ExternalModelSpec(
            command=spec_dict["command"],
            input_indices=spec_dict["input_indices"],
            timeout=spec_dict["timeout"],
            tau=spec_dict["tau"],
            name=spec_dict["name"] or fallback_name,
        )
        bridge = ExternalModel(spec)
        closers.append(bridge)
        return ModelHandle(model_id, bridge.evaluate,
                           input_indices=spec.input_indices, tau=spec.tau,
                           name=spec.name)

    hf = make_bridge(section["hf"], 0, "hf")
    lfs = [
        make_bridge(m, i + 1, f"lf_{i + 1}")
        for i, m in enumerate(section["lfs"])
    ]
    override = cfg["gamma_override"]
    cost = CostModel(
        np.array([lf.tau for lf in lfs]), beta=cfg["beta"],
        gamma_override=np.asarray(override, dtype=float)
        if override is not None else None,
    )
    corrections = [
        CorrectionGP(random_state=stream_seed(cfg["seed"], f"gp-multistart-{lf.id}"))
        for lf in lfs
    ]
    ensemble = ModelEnsemble(hf=hf, lfs=lfs, strategy=cfg["strategy"],
                             cost=cost, corrections=corrections)
    return ensemble, StandardNormal(section["input_dimension"]), closers


# ------------------------------------------------------------------ reports


@dataclass
class RunManifest:
    """Provenance of one run; everything needed to reproduce it bit-exactly."""

    run_id: str
    config: dict
    started_at: str
    finished_at: str
    outputs: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config": self.config,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "outputs": self.outputs,
        }


def config_run_id(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canonical.encode("utf-8")).hexdigest()


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def summary_dict(estimate: FailureEstimate, cfg: dict) -> dict:
    per_subset = [
        {
            "subset": rec.index,
            "threshold": _json_safe(rec.threshold),
            "cond_prob": rec.cond_prob,
            "delta": _json_safe(rec.delta),
            "hf_calls": rec.hf_calls,
            "surrogate_evals": rec.surrogate_evals,
            "lf_calls": {str(k): v for k, v in sorted(rec.lf_calls.items())},
        }
        for rec in estimate.records
    ]
    return {
        "p_f": estimate.p_f,
        "cov": _json_safe(estimate.cov),
        "n_subsets": estimate.n_subsets,
        "hf_calls": estimate.hf_calls,
        "hf_fraction": estimate.hf_fraction,
        "lf_calls": {str(k): v for k, v in sorted(estimate.lf_calls.items())},
        "total_samples": estimate.total_samples,
        "surrogate_evals": estimate.surrogate_evals,
        "per_subset": per_subset,
        "incomplete": estimate.incomplete,
        "config": cfg,
    }


def _fmt(value: float) -> str:
    return repr(float(value))


def write_samples_csv(estimate: FailureEstimate, path: Path) -> None:
    dim = estimate.records[0].samples.shape[2]
    header = (["subset", "chain", "index"]
              + [f"x{j}" for j in range(dim)]
              + ["response", "u_value", "hf_flag", "selected_model"])
    lines = [",".join(header)]
    for rec in estimate.records:
        n_chains, n_spc = rec.responses.shape
        for l in range(n_chains):
            for m in range(n_spc):
                row = [str(rec.index), str(l), str(m)]
                row += [_fmt(v) for v in rec.samples[l, m]]
                row += [
                    _fmt(rec.responses[l, m]),
                    _fmt(rec.u_values[l, m]),
                    str(int(rec.hf_flags[l, m])),
                    str(int(rec.selected_models[l, m])),
                ]
                lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def write_lf_calls_csv(estimate: FailureEstimate, cfg: dict, path: Path) -> None:
    """Cumulative fresh model calls after each generated sample."""
    lf_ids = sorted(int(k) for k in estimate.lf_calls)
    id_bit = {lf_id: bit for bit, lf_id in enumerate(lf_ids)}
    header = (["sample", "subset", "chain", "index", "cum_hf"]
              + [f"cum_lf_{lf_id}" for lf_id in lf_ids])
    lines = [",".join(header)]
    cum_hf = cfg["n_init"]
    cum_lf = {lf_id: cfg["n_init"] for lf_id in lf_ids}
    sample = 0
    for rec in estimate.records:
        n_chains, n_spc = rec.responses.shape
        for l in range(n_chains):
            for m in range(n_spc):
                sample += 1
                cum_hf += int(rec.hf_call_flags[l, m])
                mask = int(rec.lf_masks[l, m])
                for lf_id in lf_ids:
                    if mask >> id_bit[lf_id] & 1:
                        cum_lf[lf_id] += 1
                row = [str(sample), str(rec.index), str(l), str(m), str(cum_hf)]
                row += [str(cum_lf[lf_id]) for lf_id in lf_ids]
                lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def emit_reports(estimate: FailureEstimate, cfg: dict, out_dir: Path,
                 started_at: str) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / "summary.json"
    samples_path = out_dir / "samples.csv"
    calls_path = out_dir / "lf_calls.csv"
    manifest_path = out_dir / "manifest.json"

    summary_path.write_text(
        json.dumps(summary_dict(estimate, cfg), sort_keys=True, indent=2) + "\n"
    )
    write_samples_csv(estimate, samples_path)
    write_lf_calls_csv(estimate, cfg, calls_path)

    outputs = {
        "summary": str(summary_path),
        "samples": str(samples_path),
        "lf_calls": str(calls_path),
    }
    manifest = RunManifest(
        run_id=config_run_id(cfg),
        config=cfg,
        started_at=started_at,
        finished_at=_utc_now(),
        outputs=outputs,
    )
    manifest_path.write_text(
        json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    outputs["manifest"] = str(manifest_path)
    return outputs


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_aborted_summary(cfg: dict, out_dir: Path, started_at: str,
                           error: str, estimate: FailureEstimate | None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if estimate is not None:
        payload = summary_dict(estimate, cfg)
    else:
        payload = {"incomplete": True, "config": cfg}
    payload["incomplete"] = True
    payload["error"] = error
    (out_dir / "summary.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n"
    )
    if estimate is not None and estimate.records:
        write_samples_csv(estimate, out_dir / "samples.csv")
        write_lf_calls_csv(estimate, cfg, out_dir / "lf_calls.csv")
    manifest = RunManifest(
        run_id=config_run_id(cfg), config=cfg, started_at=started_at,
        finished_at=_utc_now(), outputs={},
    )
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n"
    )


# --------------------------------------------------------------------- main


def _apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.strategy is not None:
        cfg["strategy"] = args.strategy
    if args.beta is not None:
        cfg["beta"] = args.beta
    return normalize_config(cfg)


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out) if args.out else Path(f"lfmc-{config_run_id(cfg)[:12]}")
    started_at = _utc_now()
    closers = []
    try:
        ensemble, distribution, closers = build_ensemble(cfg)
        estimate = run(ensemble, distribution, build_run_config(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        _write_aborted_summary(cfg, out_dir, started_at, str(exc), exc.partial)
        return 4
    except (ModelEvaluationError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        _write_aborted_summary(cfg, out_dir, started_at, str(exc), None)
        return 3
    finally:
        for bridge in closers:
            bridge.close()

    outputs = emit_reports(estimate, cfg, out_dir, started_at)
    print(
        f"p_f={estimate.p_f:.6e} cov={estimate.cov:.4f} "
        f"subsets={estimate.n_subsets} hf_calls={estimate.hf_calls} "
        f"({100.0 * estimate.hf_fraction:.2f}% of samples) -> {outputs['summary']}"
    )
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(cfg, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfmc",
        description="Actively learned low-fidelity model combination "
                    "inside subset simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a reliability run")
    run_p.add_argument("--config", required=True, help="JSON config file")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--strategy", choices=list(STRATEGIES), default=None,
                       help="override the assembly strategy")
    run_p.add_argument("--beta", type=float, default=None,
                       help="override the cost-bias exponent")
    run_p.set_defaults(func=_cmd_run)

    val_p = sub.add_parser("validate", help="check a config file and print "
                                            "its normalized form")
    val_p.add_argument("--config", required=True, help="JSON config file")
    val_p.set_defaults(func=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
