"""Command-line entry point: train / sample / convert / eval / sweep / validate.

Every command reads a JSON config (``{"schema": 1, ...}``, unknown keys
rejected) and writes its artifacts into ``--out``.  Outputs are bitwise
deterministic given config + seed.  Exit codes: 0 success, 2 configuration
or validation error, 3 non-finite training loss.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import flow as fl
from . import manifold as mf
from . import metrics as me
from . import motion as mo
from . import net as nn
from .errors import ConfigError, NonFiniteLoss, RmgError


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema") != 1:
        raise ConfigError("config must declare \"schema\": 1")
    return doc


def _check_keys(d: dict, allowed: set[str], ctx: str) -> None:
    for key in d:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {ctx}")


def _representation(d: dict) -> mo.RepresentationConfig:
    allowed = {"joints", "translation", "rotations", "preshape",
               "d_translation", "d_rotations", "d_preshape"}
    _check_keys(d, allowed, "representation")
    if "joints" not in d:
        raise ConfigError("representation requires 'joints'")
    return mo.RepresentationConfig(**d)


def _skeleton(doc: dict, cfg: mo.RepresentationConfig | None = None) -> mo.Skeleton:
    path = doc.get("skeleton")
    if path:
        with open(path) as fh:
            return mo.Skeleton.from_json_dict(json.load(fh))
    return mo.default_skeleton()


def _toy_task(d: dict, m: mf.ManifoldSpec, cfg: mo.RepresentationConfig,
              skeleton: mo.Skeleton) -> me.ToyTaskSpec:
    allowed = {"kind", "sample_count", "components", "joint", "axis", "amplitude",
               "cycles", "fps"}
    _check_keys(d, allowed, "task")
    kind = d.get("kind")
    if kind in ("sphere_mixture", "fixed_point"):
        comps = []
        for i, c in enumerate(d.get("components", [])):
            _check_keys(c, {"mean", "scale", "weight", "condition"}, f"task.components[{i}]")
            mean = c.get("mean", "reference")
            if mean == "reference":
                mean = fl.reference_point(cfg, skeleton)
            comps.append(me.MixtureComponent(
                mean=mean,
                scale=c.get("scale", 1.0),
                weight=c.get("weight", 1.0),
                condition=c.get("condition"),
            ))
        return me.ToyTaskSpec(kind=kind, sample_count=d["sample_count"],
                              components=tuple(comps))
    if kind == "rotating_joint":
        return me.ToyTaskSpec(
            kind=kind,
            sample_count=d["sample_count"],
            joint=d.get("joint", 1),
            axis=tuple(d.get("axis", (0.0, 0.0, 1.0))),
            amplitude=d.get("amplitude", 1.0),
            cycles=d.get("cycles", 2.0),
            fps=d.get("fps", 30.0),
            representation=cfg,
            skeleton=skeleton,
        )
    raise ConfigError(f"unknown task kind {kind!r}")


def _prior(doc: dict, m: mf.ManifoldSpec, cfg: mo.RepresentationConfig,
           skeleton: mo.Skeleton) -> mf.WrappedGaussianSpec:
    scale = doc.get("prior_scale", 1.0)
    mean = fl.reference_point(cfg, skeleton)
    return mf.WrappedGaussianSpec(m, mean, scale)


def _write_jsonl(points: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for row in np.atleast_2d(points):
            fh.write(json.dumps(list(row)) + "\n")


def _read_jsonl(path) -> np.ndarray:
    rows = []
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    except OSError as exc:
        raise ConfigError(f"cannot read samples file {path}: {exc}") from exc
    if not rows:
        return np.empty((0, 0))
    return np.asarray(rows, dtype=float)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

TRAIN_KEYS = {"schema", "seed", "representation", "task", "network", "train",
              "prior_scale", "skeleton"}


def cmd_train(config_path, out_dir, seed_override=None) -> int:
    doc = _load_config(config_path)
    _check_keys(doc, TRAIN_KEYS, "train config")
    for key in ("representation", "task", "train"):
        if key not in doc:
            raise ConfigError(f"train config requires '{key}'")
    cfg = _representation(doc["representation"])
    skeleton = _skeleton(doc, cfg)
    m = mo.config_to_manifold(cfg)

    net_doc = dict(doc.get("network", {}))
    _check_keys(net_doc, {"hidden_dim", "num_layers", "time_embed_dim",
                          "cond_embed_dim", "num_condition_classes"}, "network")
    net_spec = nn.NetworkSpec(input_dim=m.total_ambient_dim, **net_doc)

    train_doc = dict(doc["train"])
    _check_keys(train_doc, {"total_steps", "batch_size", "max_lr", "warmup_ratio",
                            "grad_clip_norm", "ema_decay", "weight_decay",
                            "cond_dropout_prob", "seed"}, "train")
    if seed_override is not None:
        train_doc["seed"] = seed_override
    elif "seed" not in train_doc:
        train_doc["seed"] = doc.get("seed", 0)
    train_cfg = nn.TrainConfig(**train_doc)

    prior = _prior(doc, m, cfg, skeleton)
    task = _toy_task(doc["task"], m, cfg, skeleton)
    data_rng = np.random.default_rng([train_cfg.seed, 1])
    data, conditions = me.generate_toy_dataset(task, m, data_rng)

    result = nn.train(train_cfg, net_spec, m, data, prior, conditions)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(
        out / "checkpoint.rmg", net_spec, train_cfg, m, result.params, result.ema,
        step=train_cfg.total_steps, rng_state=result.rng_state,
        extra={"representation": cfg.to_json_dict(), "prior_scale": doc.get("prior_scale", 1.0)},
    )
    nn.history_to_csv(result.history, out / "losses.csv")
    print(f"trained {train_cfg.total_steps} steps; wrote {out / 'checkpoint.rmg'}")
    return 0


SAMPLE_KEYS = {"schema", "num_steps", "guidance_scale", "seed", "num_samples",
               "condition", "use_ema", "output_format", "skeleton", "fps",
               "representation"}


def _sample_points(ckpt: nn.Checkpoint, num_steps: int, guidance_scale: float,
                   seed, num_samples: int, condition, use_ema: bool) -> np.ndarray:
    m = ckpt.manifold
    cfg = mo.RepresentationConfig.from_json_dict(ckpt.header["representation"])
    skeleton = mo.default_skeleton() if cfg.preshape else None
    prior = mf.WrappedGaussianSpec(
        m, fl.reference_point(cfg, skeleton), ckpt.header.get("prior_scale", 1.0)
    )
    params = ckpt.params
    if use_ema:
        params = nn.VectorFieldParams(ckpt.net_spec, ckpt.ema.shadow.copy())
    field = nn.field_from_params(params)
    rng = np.random.default_rng(seed)
    cond_arr = None
    if condition is not None:
        cond_arr = np.full(num_samples, int(condition))
    guid = fl.GuidanceConfig(scale=guidance_scale, enabled=condition is not None)
    return fl.sample_ode(m, field, prior, fl.IntegratorConfig(num_steps), guid,
                         cond_arr, rng, num_samples=num_samples)


def cmd_sample(checkpoint_path, config_path, out_dir, seed_override=None) -> int:
    if not checkpoint_path:
        raise ConfigError("sample requires --checkpoint")
    doc = _load_config(config_path)
    _check_keys(doc, SAMPLE_KEYS, "sample config")
    try:
        ckpt = nn.load_checkpoint(checkpoint_path)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}") from exc
    if "representation" in doc:
        cfg = _representation(doc["representation"])
        if mo.ambient_dimension(cfg) != ckpt.manifold.total_ambient_dim:
            raise ConfigError(
                "representation ambient dimension does not match the checkpoint"
            )
    num_steps = int(doc.get("num_steps", 100))
    guidance_scale = float(doc.get("guidance_scale", 1.0))
    seed = doc.get("seed", 42) if seed_override is None else seed_override
    num_samples = int(doc.get("num_samples", 1))
    condition = doc.get("condition")
    use_ema = bool(doc.get("use_ema", True))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if num_samples == 0:
        points = np.empty((0, ckpt.manifold.total_ambient_dim))
    else:
        points = _sample_points(ckpt, num_steps, guidance_scale, seed,
                                num_samples, condition, use_ema)
    _write_jsonl(points, out / "samples.jsonl")
    if doc.get("output_format") == "motion" and num_samples > 0:
        cfg = mo.RepresentationConfig.from_json_dict(ckpt.header["representation"])
        skeleton = _skeleton(doc)
        seq = mo.points_to_sequence(points, cfg, skeleton, fps=doc.get("fps", 30.0))
        mo.save_motion(seq, out / "samples_motion.json")
    meta = {
        "num_steps": num_steps,
        "guidance_scale": guidance_scale,
        "seed": seed,
        "num_samples": num_samples,
        "condition": condition,
        "use_ema": use_ema,
    }
    with open(out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    print(f"wrote {num_samples} samples to {out / 'samples.jsonl'}")
    return 0


CONVERT_KEYS = {"schema", "input", "target", "representation", "skeleton", "fps"}


def cmd_convert(config_path, out_dir, seed_override=None) -> int:
    doc = _load_config(config_path)
    _check_keys(doc, CONVERT_KEYS, "convert config")
    for key in ("input", "target"):
        if key not in doc:
            raise ConfigError(f"convert config requires '{key}'")
    target = doc["target"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if target == "rmg-point":
        cfg = _representation(doc["representation"])
        seq = mo.load_motion(doc["input"])
        points = mo.sequence_to_points(seq, cfg)
        _write_jsonl(points, out / "points.jsonl")
        print(f"wrote {points.shape[0]} points to {out / 'points.jsonl'}")
    elif target == "positions":
        seq = mo.load_motion(doc["input"])
        positions, velocities = mo.convert_to_position_format(seq)
        with open(out / "positions.json", "w") as fh:
            json.dump({"fps": seq.fps,
                       "positions": positions.tolist(),
                       "position_velocities": velocities.tolist()}, fh)
        print(f"wrote positions for {len(seq)} frames to {out / 'positions.json'}")
    elif target == "motion":
        cfg = _representation(doc["representation"])
        skeleton = _skeleton(doc)
        points = _read_jsonl(doc["input"])
        seq = mo.points_to_sequence(points, cfg, skeleton, fps=doc.get("fps", 30.0))
        mo.save_motion(seq, out / "motion.json")
        print(f"wrote motion with {len(seq)} frames to {out / 'motion.json'}")
    else:
        raise ConfigError(f"unknown convert target {target!r}")
    return 0


EVAL_KEYS = {"schema", "samples", "reference", "manifold", "representation",
             "bandwidth", "modes", "assign_radius", "seed", "guidance_scale"}


def _eval_manifold(doc: dict) -> mf.ManifoldSpec:
    if "manifold" in doc:
        return mf.ManifoldSpec.from_json_dict(doc["manifold"])
    if "representation" in doc:
        return mo.config_to_manifold(_representation(doc["representation"]))
    raise ConfigError("eval config requires 'manifold' or 'representation'")


def cmd_eval(config_path, out_dir, seed_override=None) -> int:
    doc = _load_config(config_path)
    _check_keys(doc, EVAL_KEYS, "eval config")
    for key in ("samples", "reference"):
        if key not in doc:
            raise ConfigError(f"eval config requires '{key}'")
    m = _eval_manifold(doc)
    samples = _read_jsonl(doc["samples"])
    reference = _read_jsonl(doc["reference"])
    for name, arr in (("samples", samples), ("reference", reference)):
        if arr.size and arr.shape[1] != m.total_ambient_dim:
            raise ConfigError(f"{name} dimension {arr.shape[1]} does not match "
                              f"the manifold ({m.total_ambient_dim})")
    modes = doc.get("modes")
    report = me.evaluate_samples(
        m, samples, reference,
        bandwidth=doc.get("bandwidth"),
        modes=None if modes is None else [np.asarray(x, dtype=float) for x in modes],
        assign_radius=doc.get("assign_radius", 1.0),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)
    seed = doc.get("seed", 0) if seed_override is None else seed_override
    with open(out / "report.csv", "w") as fh:
        fh.write(me.CSV_HEADER + "\n")
        fh.write(report.csv_row(seed, doc.get("guidance_scale", 0.0)) + "\n")
    print(f"mmd={report.mmd:.6g} -> {out / 'report.json'}")
    return 0


SWEEP_KEYS = {"schema", "checkpoint", "guidance_scales", "sample", "eval", "seed"}


def cmd_sweep(config_path, out_dir, checkpoint_path=None, seed_override=None) -> int:
    doc = _load_config(config_path)
    _check_keys(doc, SWEEP_KEYS, "sweep config")
    scales = doc.get("guidance_scales")
    if not scales:
        raise ConfigError("sweep config requires a nonempty 'guidance_scales' list")
    ckpt_path = checkpoint_path or doc.get("checkpoint")
    if not ckpt_path:
        raise ConfigError("sweep requires a checkpoint")
    try:
        ckpt = nn.load_checkpoint(ckpt_path)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}") from exc
    sample_doc = dict(doc.get("sample", {}))
    _check_keys(sample_doc, SAMPLE_KEYS - {"guidance_scale", "seed"}, "sweep.sample")
    eval_doc = dict(doc.get("eval", {}))
    _check_keys(eval_doc, EVAL_KEYS - {"samples", "seed", "guidance_scale"}, "sweep.eval")
    if "reference" not in eval_doc:
        raise ConfigError("sweep.eval requires 'reference'")
    base_seed = doc.get("seed", 0) if seed_override is None else seed_override
    m = ckpt.manifold
    reference = _read_jsonl(eval_doc["reference"])
    modes = eval_doc.get("modes")
    mode_arrays = None if modes is None else [np.asarray(x, dtype=float) for x in modes]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def run_row(index_scale):
        index, scale = index_scale
        seed = base_seed + index
        try:
            points = _sample_points(
                ckpt,
                num_steps=int(sample_doc.get("num_steps", 100)),
                guidance_scale=float(scale),
                seed=seed,
                num_samples=int(sample_doc.get("num_samples", 100)),
                condition=sample_doc.get("condition"),
                use_ema=bool(sample_doc.get("use_ema", True)),
            )
            row_dir = out / f"row_{index}"
            row_dir.mkdir(exist_ok=True)
            _write_jsonl(points, row_dir / "samples.jsonl")
            report = me.evaluate_samples(
                m, points, reference,
                bandwidth=eval_doc.get("bandwidth"),
                modes=mode_arrays,
                assign_radius=eval_doc.get("assign_radius", 1.0),
            )
            return report.csv_row(seed, float(scale)) + ","
        except RmgError as exc:
            return f"{seed},{float(scale):.12g},,,,,,{type(exc).__name__}: {exc}"

    workers = max(1, int(os.environ.get("RMG_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_row, enumerate(scales)))
    else:
        rows = [run_row(pair) for pair in enumerate(scales)]
    with open(out / "sweep.csv", "w") as fh:
        fh.write(me.CSV_HEADER + ",error\n")
        for row in rows:
            fh.write(row + "\n")
    print(f"wrote {len(rows)} sweep rows to {out / 'sweep.csv'}")
    return 0


VALIDATE_KEYS = {"schema", "input", "tolerance"}


def cmd_validate(config_path, out_dir, seed_override=None) -> int:
    doc = _load_config(config_path)
    _check_keys(doc, VALIDATE_KEYS, "validate config")
    if "input" not in doc:
        raise ConfigError("validate config requires 'input'")
    tol = float(doc.get("tolerance", 1e-6))
    seq = mo.load_motion(doc["input"], tol=tol)
    problems = []
    for i, frame in enumerate(seq.frames):
        for msg in frame.violations(tol=tol):
            problems.append(f"frame {i}: {msg}")
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return 2
    print(f"{len(seq)} frames valid (tolerance {tol})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmgflow")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "sample", "convert", "eval", "sweep", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".")
        if name in ("sample", "sweep"):
            p.add_argument("--checkpoint", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config, args.out, args.seed)
        if args.command == "sample":
            return cmd_sample(args.checkpoint, args.config, args.out, args.seed)
        if args.command == "convert":
            return cmd_convert(args.config, args.out, args.seed)
        if args.command == "eval":
            return cmd_eval(args.config, args.out, args.seed)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.out, args.checkpoint, args.seed)
        if args.command == "validate":
            return cmd_validate(args.config, args.out, args.seed)
        raise ConfigError(f"unknown command {args.command}")
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (RmgError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
