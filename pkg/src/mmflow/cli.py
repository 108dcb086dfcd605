"""Experiment orchestration: ``mmf train|eval|sample|diagnose|ablation``.

Configs are strict JSON: unknown keys are rejected with their path, every
default is materialized during canonicalization, and the canonical document
is hashed into the run manifest. Every file a command writes is listed in
that manifest.

Exit codes are a stable contract: 0 success, 1 check failure, 2 config or
compatibility error, 3 numerical halt.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .field_model import FieldConfig, VelocityField, init_params, load_checkpoint
from .meanflow_math import (
    ConstantFlow,
    HarmonicFlow,
    average_velocity_field,
    consistency_residual,
    identity_residual,
    limit_slope,
)
from .objectives import TimePairConfig, WarmupSchedule, schedule_from_dict
from .sampler_eval import (
    energy_distance,
    few_step_sample,
    one_step_mse,
    one_step_sample,
    path_deviation,
    smoothness,
)
from .tasks import NoReferencePathError, SamplePair, task_from_dict
from .trainer import TrainConfig, loss_variance, train

__all__ = [
    "ConfigError",
    "load_config",
    "config_hash",
    "cmd_train",
    "cmd_eval",
    "cmd_sample",
    "cmd_diagnose",
    "cmd_ablation",
    "main",
]

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# ---------------------------------------------------------------------------
# config schema


def _require_keys(d: dict, allowed, path: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")


def _pick(d: dict, key: str, path: str, kind, default=None, required=False,
          positive=False, non_negative=False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required key")
        return default
    value = d[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}", f"expected {kind.__name__}, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(f"{path}.{key}", f"must be positive, got {value!r}")
    if non_negative and value < 0:
        raise ConfigError(f"{path}.{key}", f"must be >= 0, got {value!r}")
    return value


def _canon_task(d: dict) -> dict:
    if not isinstance(d, dict):
        raise ConfigError("task", "expected an object")
    kind = d.get("kind")
    if kind == "ode_harmonic":
        _require_keys(d, {"kind", "dim", "endpoint_noise_std", "seed"}, "task")
        return {
            "kind": kind,
            "dim": _pick(d, "dim", "task", int, default=2, positive=True),
            "endpoint_noise_std": _pick(d, "endpoint_noise_std", "task", float,
                                        default=0.01, non_negative=True),
            "seed": _pick(d, "seed", "task", int, default=0),
        }
    if kind == "gmm2d":
        _require_keys(d, {"kind", "components", "ring_radius", "component_std", "seed"}, "task")
        return {
            "kind": kind,
            "components": _pick(d, "components", "task", int, default=8, positive=True),
            "ring_radius": _pick(d, "ring_radius", "task", float, default=4.0,
                                 non_negative=True),
            "component_std": _pick(d, "component_std", "task", float, default=0.3,
                                   non_negative=True),
            "seed": _pick(d, "seed", "task", int, default=0),
        }
    if kind == "point_mass":
        _require_keys(d, {"kind", "target_mean", "target_std", "seed"}, "task")
        mean = d.get("target_mean", [3.0, 0.0])
        if not (isinstance(mean, list) and len(mean) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in mean)):
            raise ConfigError("task.target_mean", f"expected a 2-vector, got {mean!r}")
        return {
            "kind": kind,
            "target_mean": [float(v) for v in mean],
            "target_std": _pick(d, "target_std", "task", float, default=0.25,
                                non_negative=True),
            "seed": _pick(d, "seed", "task", int, default=0),
        }
    raise ConfigError("task.kind", f"expected one of ode_harmonic|gmm2d|point_mass, got {kind!r}")


def _canon_field(d: dict, input_dim: int) -> dict:
    _require_keys(d, {"input_dim", "hidden_widths", "time_embed_dim",
                      "base_frequency", "seed", "zero_init_output"}, "field")
    widths = d.get("hidden_widths", [128, 128, 128])
    if not (isinstance(widths, list) and widths
            and all(isinstance(w, int) and not isinstance(w, bool) and w > 0 for w in widths)):
        raise ConfigError("field.hidden_widths", f"expected positive integers, got {widths!r}")
    declared = _pick(d, "input_dim", "field", int, default=input_dim, positive=True)
    if declared != input_dim:
        raise ConfigError("field.input_dim",
                          f"{declared} does not match the task dimension {input_dim}")
    embed = _pick(d, "time_embed_dim", "field", int, default=32, positive=True)
    if embed % 2:
        raise ConfigError("field.time_embed_dim", f"must be even, got {embed}")
    zero_out = d.get("zero_init_output", False)
    if not isinstance(zero_out, bool):
        raise ConfigError("field.zero_init_output", f"expected a boolean, got {zero_out!r}")
    return {
        "input_dim": declared,
        "hidden_widths": widths,
        "time_embed_dim": embed,
        "base_frequency": _pick(d, "base_frequency", "field", float, default=1.0e4,
                                positive=True),
        "seed": _pick(d, "seed", "field", int, default=0),
        "zero_init_output": zero_out,
    }


def _canon_train(d: dict) -> dict:
    _require_keys(d, {"total_steps", "batch_size", "lr0", "seed", "checkpoint_every",
                      "log_every", "grad_clip", "interpolation", "target_norm"}, "train")
    out = {
        "total_steps": _pick(d, "total_steps", "train", int, default=20_000, positive=True),
        "batch_size": _pick(d, "batch_size", "train", int, default=128, positive=True),
        "lr0": _pick(d, "lr0", "train", float, default=1e-4, positive=True),
        "seed": _pick(d, "seed", "train", int, default=0),
        "checkpoint_every": _pick(d, "checkpoint_every", "train", int, default=0,
                                  non_negative=True),
        "log_every": _pick(d, "log_every", "train", int, default=50, positive=True),
        "grad_clip": None,
        "interpolation": d.get("interpolation", "interval_ratio"),
        "target_norm": d.get("target_norm", "sampled_gap"),
    }
    clip = d.get("grad_clip")
    if clip is not None:
        if isinstance(clip, bool) or not isinstance(clip, (int, float)) or clip <= 0:
            raise ConfigError("train.grad_clip", f"must be positive or null, got {clip!r}")
        out["grad_clip"] = float(clip)
    if out["interpolation"] not in ("interval_ratio", "absolute_time"):
        raise ConfigError("train.interpolation",
                          f"expected interval_ratio|absolute_time, got {out['interpolation']!r}")
    if out["target_norm"] not in ("sampled_gap", "pair_span"):
        raise ConfigError("train.target_norm",
                          f"expected sampled_gap|pair_span, got {out['target_norm']!r}")
    if out["log_every"] > out["total_steps"]:
        raise ConfigError("train.log_every", "must not exceed train.total_steps")
    return out


def _canon_schedule(d: dict, total_steps: int) -> dict:
    if d is None:
        # the warmup horizon keeps the full-run ratio of 8:1
        return {"kind": "warmup", "t_warmup": max(1, total_steps // 8)}
    kind = d.get("kind")
    if kind == "constant":
        _require_keys(d, {"kind", "value"}, "schedule")
        value = _pick(d, "value", "schedule", float, required=True)
        if not 0.0 <= value <= 1.0:
            raise ConfigError("schedule.value", f"must lie in [0, 1], got {value}")
        return {"kind": "constant", "value": value}
    if kind == "warmup":
        _require_keys(d, {"kind", "t_warmup"}, "schedule")
        return {"kind": "warmup",
                "t_warmup": _pick(d, "t_warmup", "schedule", int, required=True, positive=True)}
    raise ConfigError("schedule.kind", f"expected constant|warmup, got {kind!r}")


def _canon_time_pairs(d: dict) -> dict:
    _require_keys(d, {"min_gap", "r_zero_prob"}, "time_pairs")
    gap = _pick(d, "min_gap", "time_pairs", float, default=1e-3, positive=True)
    prob = _pick(d, "r_zero_prob", "time_pairs", float, default=0.25, non_negative=True)
    if gap < 1e-3:
        raise ConfigError("time_pairs.min_gap", f"must be >= 0.001, got {gap}")
    if prob > 1.0:
        raise ConfigError("time_pairs.r_zero_prob", f"must lie in [0, 1], got {prob}")
    return {"min_gap": gap, "r_zero_prob": prob}


def _canon_eval(d: dict) -> dict:
    _require_keys(d, {"n_samples", "few_step_ns"}, "eval")
    ns = d.get("few_step_ns", [1, 2, 4, 8])
    if not (isinstance(ns, list) and ns
            and all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in ns)):
        raise ConfigError("eval.few_step_ns", f"expected integers >= 1, got {ns!r}")
    return {
        "n_samples": _pick(d, "n_samples", "eval", int, default=1024, positive=True),
        "few_step_ns": sorted(set(ns)),
    }


def _canon_diagnose(d: dict) -> dict:
    _require_keys(d, {"samples", "seed", "identity_tol", "consistency_tol", "slope_tol"},
                  "diagnose")
    return {
        "samples": _pick(d, "samples", "diagnose", int, default=1000, positive=True),
        "seed": _pick(d, "seed", "diagnose", int, default=0),
        "identity_tol": _pick(d, "identity_tol", "diagnose", float, default=1e-5,
                              positive=True),
        "consistency_tol": _pick(d, "consistency_tol", "diagnose", float, default=1e-5,
                                 positive=True),
        "slope_tol": _pick(d, "slope_tol", "diagnose", float, default=0.1, positive=True),
    }


def canonicalize(doc: dict) -> dict:
    """Materialize every default and validate; returns the canonical config."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _require_keys(doc, {"task", "field", "train", "schedule", "time_pairs",
                        "eval", "diagnose", "output_dir"}, "<root>")
    if "task" not in doc:
        raise ConfigError("task", "missing required section")
    task = _canon_task(doc["task"])
    field = _canon_field(doc.get("field", {}), input_dim=_task_dim(task))
    trn = _canon_train(doc.get("train", {}))
    schedule = _canon_schedule(doc.get("schedule"), trn["total_steps"])
    out = {
        "task": task,
        "field": field,
        "train": trn,
        "schedule": schedule,
        "time_pairs": _canon_time_pairs(doc.get("time_pairs", {})),
        "eval": _canon_eval(doc.get("eval", {})),
        "diagnose": _canon_diagnose(doc.get("diagnose", {})),
        "output_dir": doc.get("output_dir"),
    }
    if out["output_dir"] is not None and not isinstance(out["output_dir"], str):
        raise ConfigError("output_dir", "expected a string path")
    return out


def _task_dim(task_doc: dict) -> int:
    if task_doc["kind"] == "ode_harmonic":
        return task_doc["dim"]
    return 2


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("<config>", f"no such file: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError("<config>", f"invalid JSON: {err}")
    return canonicalize(doc)


def config_hash(canonical: dict) -> str:
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# run assembly


def _build(config: dict):
    task = task_from_dict(config["task"])
    field = init_params(FieldConfig(
        input_dim=config["field"]["input_dim"],
        hidden_widths=tuple(config["field"]["hidden_widths"]),
        time_embed_dim=config["field"]["time_embed_dim"],
        base_frequency=config["field"]["base_frequency"],
        seed=config["field"]["seed"],
        zero_init_output=config["field"]["zero_init_output"],
    ))
    schedule = schedule_from_dict(config["schedule"])
    train_cfg = TrainConfig(
        total_steps=config["train"]["total_steps"],
        batch_size=config["train"]["batch_size"],
        lr0=config["train"]["lr0"],
        schedule=schedule,
        seed=config["train"]["seed"],
        task=task,
        checkpoint_every=config["train"]["checkpoint_every"],
        log_every=config["train"]["log_every"],
        time_pairs=TimePairConfig(**config["time_pairs"]),
        grad_clip=config["train"]["grad_clip"],
        interpolation=config["train"]["interpolation"],
        target_norm=config["train"]["target_norm"],
    )
    return task, field, train_cfg


class _Run:
    """Tracks artifacts written to an output directory and seals a manifest."""

    def __init__(self, out_dir, config: dict):
        self.out_dir = out_dir
        self.config = config
        self.artifacts = []
        self.started_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
        os.makedirs(out_dir, exist_ok=True)

    def path(self, *rel) -> str:
        full = os.path.join(self.out_dir, *rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.artifacts.append(os.path.join(*rel))
        return full

    def adopt(self, full_path: str):
        self.artifacts.append(os.path.relpath(full_path, self.out_dir))

    def seal(self):
        manifest = {
            "config_hash": config_hash(self.config),
            "seed": self.config["train"]["seed"],
            "started_at": self.started_at,
            "finished_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "artifacts": sorted(set(self.artifacts) | {"run_manifest.json"}),
            "tool_version": __version__,
        }
        with open(os.path.join(self.out_dir, "run_manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)
        return manifest


def _resolve_out(config: dict, out) -> str:
    out = out or config.get("output_dir")
    if not out:
        raise ConfigError("output_dir", "no output directory given (config or --out)")
    return out


# ---------------------------------------------------------------------------
# evaluation helpers shared by eval and ablation


def _eval_rng(seed: int):
    return np.random.default_rng(np.random.SeedSequence((seed, 0x6576616C)))


def _checkpoint_compatible(field, task) -> bool:
    if isinstance(field, VelocityField):
        return field.config.input_dim == task.dim
    flow = getattr(field, "flow", None)
    return flow is None or flow.dim == task.dim


def _path_metrics(field, task, pairs, n_steps: int):
    """Per-sample few-step paths against each pair's ground-truth path."""
    x0, x1 = pairs
    paths = few_step_sample(field, x1, n_steps)
    d_vals, s_vals = [], []
    for i in range(paths.n_samples):
        path = paths.path(i)
        if n_steps >= 2:
            s_vals.append(smoothness(path))
        try:
            ref = task.reference_path(SamplePair(x0=x0[i], x1=x1[i]), grid_len=257)
            d_vals.append(path_deviation(path, ref))
        except NoReferencePathError:
            pass
    d_path = float(np.mean(d_vals)) if d_vals else None
    smooth = float(np.mean(s_vals)) if s_vals else None
    return d_path, smooth, paths


def _evaluate_field(field, task, eval_cfg: dict, seed: int):
    rng = _eval_rng(seed)
    mse = one_step_mse(field, task, eval_cfg["n_samples"], rng)
    x0, x1 = task.sample_pairs(rng, eval_cfg["n_samples"])
    generated = one_step_sample(field, x1)
    energy = energy_distance(generated, x0)
    path_n = max(eval_cfg["few_step_ns"])
    subset = min(32, eval_cfg["n_samples"])
    d_path, smooth, _ = _path_metrics(field, task, (x0[:subset], x1[:subset]), path_n)
    return {
        "d_path": d_path,
        "smoothness": smooth,
        "one_step_mse": mse,
        "energy_distance": energy,
        "nfe": 1,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_train(config_path, out=None, seed=None) -> int:
    config = load_config(config_path)
    if seed is not None:
        config["train"]["seed"] = int(seed)
    out_dir = _resolve_out(config, out)
    task, field, train_cfg = _build(config)
    run = _Run(out_dir, config)
    result = train(field, train_cfg, out_dir=out_dir)
    for ckpt in result.checkpoints:
        run.adopt(ckpt)
    result.log.write_csv(run.path("trainlog.csv"))
    if result.halted:
        with open(run.path("halt.json"), "w") as fh:
            json.dump({"halt_step": result.halt_step, "reason": result.halt_reason}, fh)
        run.seal()
        print(f"training halted at step {result.halt_step}: {result.halt_reason}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    run.seal()
    print(f"trained {train_cfg.total_steps} steps; final loss "
          f"{result.log.losses[-1]:.6g}" if len(result.log) else "trained 0 steps")
    return EXIT_OK


def cmd_eval(config_path, checkpoint, out=None) -> int:
    config = load_config(config_path)
    task = task_from_dict(config["task"])
    try:
        field = load_checkpoint(checkpoint)
    except (ValueError, KeyError) as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if not _checkpoint_compatible(field, task):
        print("checkpoint is not shape-compatible with the configured task",
              file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _resolve_out(config, out)
    run = _Run(out_dir, config)
    metrics = _evaluate_field(field, task, config["eval"], config["train"]["seed"])
    with open(run.path("metrics.json"), "w") as fh:
        json.dump(metrics, fh, indent=2)
    rng = _eval_rng(config["train"]["seed"])
    _, x1 = task.sample_pairs(rng, 1)
    for n in config["eval"]["few_step_ns"]:
        paths = few_step_sample(field, x1, n)
        paths.path(0).write_csv(run.path(f"sample_path_n{n}.csv"))
    run.seal()
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_sample(config_path, checkpoint, out=None, seed=None, n_samples=None) -> int:
    config = load_config(config_path)
    if seed is not None:
        config["train"]["seed"] = int(seed)
    task = task_from_dict(config["task"])
    try:
        field = load_checkpoint(checkpoint)
    except (ValueError, KeyError) as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if not _checkpoint_compatible(field, task):
        print("checkpoint is not shape-compatible with the configured task",
              file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _resolve_out(config, out)
    run = _Run(out_dir, config)
    n = n_samples or config["eval"]["n_samples"]
    rng = _eval_rng(config["train"]["seed"])
    _, x1 = task.sample_pairs(rng, n)
    samples = one_step_sample(field, x1)
    with open(run.path("samples.csv"), "w") as fh:
        fh.write(",".join(f"x{j}" for j in range(samples.shape[1])) + "\n")
        for row in samples:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    for k in config["eval"]["few_step_ns"]:
        paths = few_step_sample(field, x1[:1], k)
        paths.path(0).write_csv(run.path(f"sample_path_n{k}.csv"))
    run.seal()
    print(f"wrote {n} one-step samples to {out_dir}")
    return EXIT_OK


def cmd_diagnose(config_path=None, _bracket_sign: float = 1.0) -> int:
    """Run the oracle residual suite against its tolerances."""
    if config_path is not None:
        diag = load_config(config_path)["diagnose"]
    else:
        diag = _canon_diagnose({})
    rng = np.random.default_rng(diag["seed"])
    n = diag["samples"]

    def sample_rt(b, min_gap=1e-3):
        r = rng.uniform(0.0, 1.0 - 2 * min_gap, b)
        t = r + min_gap + rng.uniform(0.0, 1.0, b) * (1.0 - r - min_gap)
        return r, t

    def sample_rst(b, min_gap=0.01):
        r = rng.uniform(0.0, 1.0 - 2 * min_gap, b)
        s = r + min_gap + rng.uniform(0.0, 1.0, b) * (1.0 - r - 2 * min_gap)
        t = s + min_gap + rng.uniform(0.0, 1.0, b) * (1.0 - s - min_gap)
        return r, s, t

    harmonic = HarmonicFlow(2)
    constant = ConstantFlow([0.8, -0.5])
    checks = []

    x = rng.standard_normal((n, 2))
    r, t = sample_rt(n)
    res = identity_residual(average_velocity_field(harmonic), harmonic, x, r, t,
                            bracket_sign=_bracket_sign)
    checks.append(("identity_harmonic", float(np.max(np.abs(res))), diag["identity_tol"]))

    res = identity_residual(average_velocity_field(constant), constant, x, r, t,
                            bracket_sign=_bracket_sign)
    checks.append(("identity_constant", float(np.max(np.abs(res))), diag["identity_tol"]))

    x = rng.standard_normal((n, 2))
    r, s, t = sample_rst(n)
    res = consistency_residual(average_velocity_field(harmonic), x, r, s, t)
    checks.append(("consistency_harmonic", float(np.max(np.abs(res))),
                   diag["consistency_tol"]))

    x = rng.standard_normal((64, 2))
    r = rng.uniform(0.0, 0.9, 64)
    _, slope = limit_slope(average_velocity_field(harmonic), harmonic, x, r)
    checks.append(("limit_slope_deviation", abs(slope - 1.0), diag["slope_tol"]))

    x = rng.standard_normal((64, 2))
    r, t = sample_rt(64)
    quad = average_velocity_field(harmonic, method="quadrature")
    closed = average_velocity_field(harmonic, method="closed_form")
    from .autodiff import as_tensor

    gapd = np.max(np.abs(
        quad.forward(as_tensor(x), as_tensor(r), as_tensor(t)).data
        - closed.forward(as_tensor(x), as_tensor(r), as_tensor(t)).data
    ))
    checks.append(("quadrature_vs_closed_form", float(gapd), 1e-6))

    failures = []
    print(f"{'check':<28}{'value':>14}{'tolerance':>12}  status")
    for name, value, tol in checks:
        ok = value <= tol
        if not ok:
            failures.append(name)
        print(f"{name:<28}{value:>14.3e}{tol:>12.1e}  {'PASS' if ok else 'FAIL'}")
    if failures:
        print("failed checks: " + ", ".join(failures), file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


ABLATION_VARIANTS = ("lambda0", "lambda05", "lambda1", "curriculum")


def _variant_schedule(name: str, config: dict) -> dict:
    if name == "lambda0":
        return {"kind": "constant", "value": 0.0}
    if name == "lambda05":
        return {"kind": "constant", "value": 0.5}
    if name == "lambda1":
        return {"kind": "constant", "value": 1.0}
    if name == "curriculum":
        if config["schedule"]["kind"] == "warmup":
            return dict(config["schedule"])
        return {"kind": "warmup", "t_warmup": max(1, config["train"]["total_steps"] // 8)}
    raise ValueError(name)


def _run_ablation_variant(config: dict, name: str, out_dir: str) -> dict:
    """Train one ablation variant and collect its metric row."""
    sub = dict(config)
    sub["schedule"] = _variant_schedule(name, config)
    task, field, train_cfg = _build(sub)
    os.makedirs(out_dir, exist_ok=True)
    result = train(field, train_cfg, out_dir=out_dir)
    result.log.write_csv(os.path.join(out_dir, "trainlog.csv"))
    artifacts = [os.path.join(name, "trainlog.csv")] + [
        os.path.join(name, os.path.basename(p)) for p in result.checkpoints
    ]
    row = {
        "variant": name,
        "final_loss": result.log.losses[-1] if len(result.log) else float("nan"),
        "halted": result.halted,
    }
    window_steps = min(2000, train_cfg.total_steps)
    rows_in_window = [s for s in result.log.steps
                      if s >= train_cfg.total_steps - window_steps]
    if len(rows_in_window) >= 2 and not result.halted:
        row["loss_variance"] = loss_variance(result.log, len(rows_in_window))
    else:
        row["loss_variance"] = float("nan")
    metrics = _evaluate_field(result.field, task, config["eval"], config["train"]["seed"])
    row["one_step_mse"] = metrics["one_step_mse"]
    row["d_path"] = metrics["d_path"]
    row["energy_distance"] = metrics["energy_distance"]
    row["artifacts"] = artifacts
    return row


def cmd_ablation(config_path, out=None, seed=None) -> int:
    """Train the four modulation variants from one seed family and compare."""
    config = load_config(config_path)
    if seed is not None:
        config["train"]["seed"] = int(seed)
    out_dir = _resolve_out(config, out)
    run = _Run(out_dir, config)

    threads = int(os.environ.get("MMF_THREADS", "1") or "1")
    jobs = [(name, os.path.join(out_dir, name)) for name in ABLATION_VARIANTS]
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_ablation_variant, [config] * len(jobs),
                                 [j[0] for j in jobs], [j[1] for j in jobs]))
    else:
        rows = [_run_ablation_variant(config, name, sub) for name, sub in jobs]

    for row in rows:
        for rel in row.pop("artifacts"):
            run.artifacts.append(rel)
    csv_path = run.path("ablation.csv")
    with open(csv_path, "w") as fh:
        fh.write("variant,final_loss,loss_variance,one_step_mse,d_path,energy_distance\n")
        for row in rows:
            d_path = "" if row["d_path"] is None else f"{row['d_path']:.17g}"
            fh.write(
                f"{row['variant']},{row['final_loss']:.17g},{row['loss_variance']:.17g},"
                f"{row['one_step_mse']:.17g},{d_path},{row['energy_distance']:.17g}\n"
            )
    run.seal()
    halted = [r["variant"] for r in rows if r["halted"]]
    if halted:
        print("halted variants: " + ", ".join(halted), file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mmf",
        description="train, evaluate, and diagnose one-step average-velocity models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, needs_checkpoint=False, config_optional=False):
        p = sub.add_parser(name)
        p.add_argument("--config", required=not config_optional, default=None)
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        return p

    add("train")
    add("eval", needs_checkpoint=True)
    p_sample = add("sample", needs_checkpoint=True)
    p_sample.add_argument("--n-samples", type=int, default=None)
    add("diagnose", config_optional=True)
    add("ablation")

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config, out=args.out, seed=args.seed)
        if args.command == "eval":
            return cmd_eval(args.config, args.checkpoint, out=args.out)
        if args.command == "sample":
            return cmd_sample(args.config, args.checkpoint, out=args.out,
                              seed=args.seed, n_samples=args.n_samples)
        if args.command == "diagnose":
            return cmd_diagnose(args.config)
        if args.command == "ablation":
            return cmd_ablation(args.config, out=args.out, seed=args.seed)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
