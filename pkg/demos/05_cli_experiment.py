"""Drive a full experiment through the command-line interface: train,
diagnose, evaluate, and sample, all from one JSON config.

Run:  python demos/05_cli_experiment.py
"""

import json
import pathlib
import tempfile

from mmflow.cli import cmd_diagnose, cmd_eval, cmd_sample, cmd_train

workdir = pathlib.Path(tempfile.mkdtemp(prefix="mmf-demo-"))
config = {
    "task": {"kind": "ode_harmonic", "dim": 2, "endpoint_noise_std": 0.01, "seed": 100},
    "field": {"hidden_widths": [64, 64], "time_embed_dim": 16,
              "base_frequency": 20.0, "seed": 1, "zero_init_output": True},
    "train": {"total_steps": 1500, "batch_size": 128, "lr0": 3e-4, "seed": 7,
              "log_every": 50, "checkpoint_every": 0,
              "interpolation": "absolute_time", "target_norm": "pair_span"},
    "schedule": {"kind": "warmup", "t_warmup": 200},
    "eval": {"n_samples": 512, "few_step_ns": [1, 2, 4, 8]},
    "output_dir": str(workdir / "run"),
}
config_path = workdir / "config.json"
config_path.write_text(json.dumps(config, indent=2))
print(f"working in {workdir}\n")

print("--- mmf diagnose (oracle residual suite) ---")
cmd_diagnose()

print("\n--- mmf train ---")
cmd_train(str(config_path))

ckpt = workdir / "run" / "ckpt_final.json"
print("\n--- mmf eval ---")
cmd_eval(str(config_path), str(ckpt), out=str(workdir / "eval"))

print("\n--- mmf sample ---")
cmd_sample(str(config_path), str(ckpt), out=str(workdir / "samples"), n_samples=256)

print("\nartifacts:")
for p in sorted(workdir.rglob("*")):
    if p.is_file():
        print("  ", p.relative_to(workdir))
