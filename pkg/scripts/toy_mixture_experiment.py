#!/usr/bin/env python3
"""Train the toy mixture model on R^3 x S^3 and report generative metrics.

Two wrapped-Gaussian modes (opposite translations, rotations 90 degrees
apart) are fit with a ~50k-parameter velocity field, then 1000 EMA samples
are scored against 1000 held-out points: geodesic-kernel MMD^2, per-mode
mass, outlier fraction, and the worst manifold-constraint violation.
"""

import argparse
import json
import time

import numpy as np

from rmgflow import flow as fl
from rmgflow import manifold as mf
from rmgflow import metrics as me
from rmgflow import net as nn

MODE_A = np.array([1.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
MODE_B = np.array([-1.5, 0.0, 0.0,
                   np.sqrt(0.5), 0.0, 0.0, np.sqrt(0.5)])


def build_problem(seed: int, sample_count: int = 3000):
    m = mf.ManifoldSpec([mf.euclidean(3), mf.sphere(3)])
    task = me.ToyTaskSpec(
        kind="sphere_mixture",
        sample_count=sample_count,
        components=(
            me.MixtureComponent(mean=MODE_A, scale=0.1, weight=0.5),
            me.MixtureComponent(mean=MODE_B, scale=0.1, weight=0.5),
        ),
    )
    data, _ = me.generate_toy_dataset(task, m, np.random.default_rng([seed, 1]))
    ref = np.zeros(7)
    ref[3] = 1.0
    prior = mf.WrappedGaussianSpec(m, ref, (1.0, 0.5))
    return m, data, prior


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--hidden", type=int, default=144)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional JSON results path")
    args = ap.parse_args()

    m, data, prior = build_problem(args.seed)
    train_data, held_out = data[:2000], data[2000:]

    spec = nn.NetworkSpec(input_dim=7, hidden_dim=args.hidden, num_layers=3)
    cfg = nn.TrainConfig(total_steps=args.steps, batch_size=256, seed=args.seed)
    print(f"parameters: {nn.VectorFieldParams(spec).count}")

    t0 = time.time()
    result = nn.train(cfg, spec, m, train_data, prior)
    train_time = time.time() - t0
    print(f"trained {args.steps} steps in {train_time:.1f}s; "
          f"final loss {result.history[-1]['loss']:.4f}")

    ema_params = nn.VectorFieldParams(spec, result.ema.shadow.copy())
    field = nn.field_from_params(ema_params)
    t0 = time.time()
    samples = fl.sample_ode(m, field, prior, fl.IntegratorConfig(100),
                            fl.GuidanceConfig(), None,
                            np.random.default_rng([args.seed, 2]),
                            num_samples=1000)
    print(f"sampled 1000 points in {time.time() - t0:.1f}s")

    ref1, ref2 = held_out[:500], held_out[500:]
    bw = me.median_bandwidth(m, samples, held_out)
    null = me.geodesic_mmd(m, ref1, ref2, bw)
    report = me.evaluate_samples(m, samples, held_out, bandwidth=bw,
                                 modes=[MODE_A, MODE_B], assign_radius=1.5)
    results = {
        "train_seconds": train_time,
        "final_loss": result.history[-1]["loss"],
        "bandwidth": bw,
        "null_mmd": null,
        "mmd": report.mmd,
        "mode_mass": list(report.per_mode_mass),
        "outliers": report.outlier_fraction,
        "max_violation": report.max_constraint_violation,
    }
    print(json.dumps(results, indent=1))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
