#!/usr/bin/env python3
"""Train a conditional toy model and sweep classifier-free guidance scales.

Builds a two-mode conditional mixture on R^3 x S^3, trains a small velocity
field through the CLI, writes a reference sample set for mode A, then runs
the sweep command over a list of guidance scales and prints the resulting
CSV (one metric row per scale).
"""

import argparse
import json
from pathlib import Path

import numpy as np

from rmgflow import cli
from rmgflow import manifold as mf

MODE_A = [1.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
MODE_B = [-1.5, 0.0, 0.0, float(np.sqrt(0.5)), 0.0, 0.0, float(np.sqrt(0.5))]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="sweep_run")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--scales", type=float, nargs="+",
                    default=[1.0, 2.5, 4.5, 6.5, 9.5])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train_doc = {
        "schema": 1,
        "representation": {"joints": 1, "translation": True, "rotations": True},
        "prior_scale": 0.5,
        "task": {
            "kind": "sphere_mixture", "sample_count": 2048,
            "components": [
                {"mean": MODE_A, "scale": 0.1, "weight": 0.5, "condition": 1},
                {"mean": MODE_B, "scale": 0.1, "weight": 0.5, "condition": 2},
            ],
        },
        "network": {"hidden_dim": 64, "num_layers": 3, "time_embed_dim": 16,
                    "cond_embed_dim": 8, "num_condition_classes": 3},
        "train": {"total_steps": args.steps, "batch_size": 256,
                  "max_lr": 1e-3, "seed": args.seed},
    }
    (out / "train.json").write_text(json.dumps(train_doc, indent=1))
    code = cli.main(["train", "--config", str(out / "train.json"),
                     "--out", str(out)])
    if code != 0:
        raise SystemExit(code)

    m = mf.ManifoldSpec([mf.euclidean(3), mf.sphere(3)])
    g = mf.WrappedGaussianSpec(m, np.array(MODE_A), 0.1)
    ref = mf.sample_wrapped_gaussian(m, g, np.random.default_rng(args.seed + 1),
                                     size=500)
    cli._write_jsonl(ref, out / "reference.jsonl")

    sweep_doc = {
        "schema": 1,
        "guidance_scales": args.scales,
        "seed": args.seed,
        "sample": {"num_samples": 500, "num_steps": 100, "condition": 1},
        "eval": {"reference": str(out / "reference.jsonl"),
                 "modes": [MODE_A, MODE_B], "assign_radius": 1.5},
    }
    (out / "sweep.json").write_text(json.dumps(sweep_doc, indent=1))
    code = cli.main(["sweep", "--config", str(out / "sweep.json"),
                     "--out", str(out), "--checkpoint",
                     str(out / "checkpoint.rmg")])
    if code != 0:
        raise SystemExit(code)
    print((out / "sweep.csv").read_text())


if __name__ == "__main__":
    main()
