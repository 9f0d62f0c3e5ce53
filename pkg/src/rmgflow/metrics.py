"""Toy dataset generators and desk-scale evaluation metrics.

Fidelity is measured with an unbiased squared MMD under a Gaussian kernel
on geodesic distances (the estimator may be slightly negative; raw values
are reported).  Diversity is proxied by geodesic mode-coverage fractions,
and the manifold-preservation claim by aggregate constraint deviations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import manifold as mf
from . import motion as mo
from .errors import EmptyBatch, InvalidConfig


@dataclass(frozen=True)
class MixtureComponent:
    mean: np.ndarray
    scale: float = 1.0
    weight: float = 1.0
    condition: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        if self.scale < 0:
            raise InvalidConfig("component scale must be >= 0")
        if self.weight <= 0:
            raise InvalidConfig("component weight must be positive")


@dataclass(frozen=True)
class ToyTaskSpec:
    """Desk-scale data source: a wrapped-Gaussian mixture, a single fixed
    point, or a synthetic sequence with one sinusoidally sweeping joint."""

    kind: str
    sample_count: int
    components: tuple[MixtureComponent, ...] = ()
    # rotating_joint parameters
    joint: int = 1
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    amplitude: float = 1.0
    cycles: float = 2.0
    fps: float = 30.0
    representation: Optional[mo.RepresentationConfig] = None
    skeleton: Optional[mo.Skeleton] = None

    def __post_init__(self):
        if self.kind not in ("sphere_mixture", "fixed_point", "rotating_joint"):
            raise InvalidConfig(f"unknown toy task kind {self.kind!r}")
        if self.sample_count < 1:
            raise InvalidConfig("sample_count must be >= 1")
        if self.kind in ("sphere_mixture", "fixed_point") and not self.components:
            raise InvalidConfig(f"{self.kind} needs at least one component")
        if self.kind == "sphere_mixture":
            total = sum(c.weight for c in self.components)
            if abs(total - 1.0) > 1e-9:
                raise InvalidConfig(f"mixture weights must sum to 1, got {total}")


def generate_toy_dataset(
    task: ToyTaskSpec, m: mf.ManifoldSpec, rng: np.random.Generator
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Sample (points, condition labels); labels are None when no component
    carries a condition.  Deterministic per rng state."""
    n = task.sample_count
    if task.kind == "rotating_joint":
        return _rotating_joint_points(task, m), None
    if task.kind == "fixed_point":
        comp = task.components[0]
        pts = np.tile(comp.mean, (n, 1))
        cond = None
        if comp.condition is not None:
            cond = np.full(n, comp.condition)
        return pts, cond
    weights = np.array([c.weight for c in task.components])
    comp_idx = rng.choice(len(task.components), size=n, p=weights)
    means = np.stack([c.mean for c in task.components])[comp_idx]
    scales = np.array([c.scale for c in task.components])[comp_idx]
    xi = scales[:, None] * rng.standard_normal((n, m.total_ambient_dim))
    v = mf.project_tangent(m, means, xi)
    pts = mf.exp_map(m, means, v)
    labels = [c.condition for c in task.components]
    cond = None
    if any(l is not None for l in labels):
        table = np.array([0 if l is None else l for l in labels])
        cond = table[comp_idx]
    return pts, cond


def _rotating_joint_points(task: ToyTaskSpec, m: mf.ManifoldSpec) -> np.ndarray:
    skeleton = task.skeleton or mo.default_skeleton()
    cfg = task.representation or mo.RepresentationConfig(
        joints=skeleton.joint_count, translation=True, rotations=True
    )
    frames = []
    for i in range(task.sample_count + int(cfg.has_differences)):
        phase = 2.0 * np.pi * task.cycles * i / task.sample_count
        angle = task.amplitude * np.sin(phase)
        rot = np.tile(mo.QUAT_IDENTITY, (skeleton.joint_count, 1))
        rot[task.joint] = mo.canonicalize_quaternion(
            mo.quat_from_axis_angle(task.axis, angle)
        )
        # slow forward drift so the translation factor is not degenerate
        trans = np.array([0.01 * i / task.fps, 0.0, 0.0])
        frames.append(mo.MotionFrame(root_translation=trans, rotations=rot))
    seq = mo.MotionSequence(frames=frames, fps=task.fps, skeleton=skeleton)
    pts = mo.sequence_to_points(seq, cfg)
    if pts.shape[1] != m.total_ambient_dim:
        raise InvalidConfig("rotating_joint representation disagrees with the manifold")
    return pts


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def pairwise_distance(
    m: mf.ManifoldSpec, a: np.ndarray, b: np.ndarray, block: int = 256
) -> np.ndarray:
    """Geodesic distance matrix, blocked over rows to bound memory."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], block):
        stop = min(start + block, a.shape[0])
        out[start:stop] = mf.distance(m, a[start:stop, None, :], b[None, :, :])
    return out


def median_bandwidth(
    m: mf.ManifoldSpec, a: np.ndarray, b: np.ndarray, max_points: int = 1000
) -> float:
    """Median heuristic over pooled pairwise distances (strided subsample
    beyond max_points so the estimate stays deterministic)."""
    pool = np.concatenate([np.atleast_2d(a), np.atleast_2d(b)])
    if pool.shape[0] > max_points:
        stride = int(np.ceil(pool.shape[0] / max_points))
        pool = pool[::stride]
    d = pairwise_distance(m, pool, pool)
    iu = np.triu_indices(pool.shape[0], k=1)
    return float(np.median(d[iu]))


def geodesic_mmd(
    m: mf.ManifoldSpec, a: np.ndarray, b: np.ndarray, bandwidth: float
) -> float:
    """Unbiased squared MMD with kernel exp(-d(x,y)^2 / (2 sigma^2))."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    n, mm = a.shape[0], b.shape[0]
    if n < 2 or mm < 2:
        raise EmptyBatch("MMD needs at least 2 samples per batch")
    if bandwidth <= 0:
        raise InvalidConfig("bandwidth must be positive")
    s2 = 2.0 * bandwidth * bandwidth

    def kernel(x, y):
        d = pairwise_distance(m, x, y)
        return np.exp(-(d * d) / s2)

    kaa = kernel(a, a)
    kbb = kernel(b, b)
    kab = kernel(a, b)
    term_aa = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
    term_bb = (kbb.sum() - np.trace(kbb)) / (mm * (mm - 1))
    term_ab = kab.sum() / (n * mm)
    return float(term_aa + term_bb - 2.0 * term_ab)


def mode_coverage(
    m: mf.ManifoldSpec,
    samples: np.ndarray,
    modes: Sequence[np.ndarray],
    assign_radius: float,
) -> tuple[np.ndarray, float]:
    """Fraction of samples nearest each mode within the radius, plus the
    outlier fraction; fractions sum to 1 exactly."""
    if len(modes) == 0:
        raise InvalidConfig("mode list must be nonempty")
    samples = np.atleast_2d(samples)
    n = samples.shape[0]
    d = pairwise_distance(m, samples, np.stack([np.asarray(mm) for mm in modes]))
    nearest = d.argmin(axis=1)
    within = d[np.arange(n), nearest] <= assign_radius
    counts = np.bincount(nearest[within], minlength=len(modes))
    return counts / n, float(np.sum(~within) / n)


@dataclass
class ConstraintStats:
    max_sphere_norm_dev: float = 0.0
    mean_sphere_norm_dev: float = 0.0
    max_preshape_centroid_dev: float = 0.0
    mean_preshape_centroid_dev: float = 0.0
    max_preshape_norm_dev: float = 0.0
    mean_preshape_norm_dev: float = 0.0
    sample_count: int = 0

    @property
    def max_deviation(self) -> float:
        return max(self.max_sphere_norm_dev, self.max_preshape_centroid_dev,
                   self.max_preshape_norm_dev)


def constraint_violation_stats(m: mf.ManifoldSpec, samples: np.ndarray) -> ConstraintStats:
    samples = np.atleast_2d(samples)
    stats = ConstraintStats(sample_count=samples.shape[0])
    if samples.shape[0] == 0:
        return stats
    sphere_devs, cent_devs, pre_devs = [], [], []
    for seg_idx, name, dev in mf.point_deviations(m, samples):
        kind = m.segments[seg_idx].kind
        if name == "centroid":
            cent_devs.append(dev)
        elif kind == "preshape":
            pre_devs.append(dev)
        else:
            sphere_devs.append(dev)
    if sphere_devs:
        all_dev = np.stack(sphere_devs)
        stats.max_sphere_norm_dev = float(all_dev.max())
        stats.mean_sphere_norm_dev = float(all_dev.mean())
    if cent_devs:
        all_dev = np.stack(cent_devs)
        stats.max_preshape_centroid_dev = float(all_dev.max())
        stats.mean_preshape_centroid_dev = float(all_dev.mean())
    if pre_devs:
        all_dev = np.stack(pre_devs)
        stats.max_preshape_norm_dev = float(all_dev.max())
        stats.mean_preshape_norm_dev = float(all_dev.mean())
    return stats


@dataclass
class MetricReport:
    mmd: float
    per_mode_mass: tuple[float, ...]
    outlier_fraction: float
    max_constraint_violation: float
    mean_geodesic_nn_distance: float
    sample_count: int
    bandwidth: float

    def __post_init__(self):
        total = sum(self.per_mode_mass) + self.outlier_fraction
        if abs(total - 1.0) > 1e-9:
            raise InvalidConfig(f"mode masses + outliers must sum to 1, got {total}")
        values = [self.mmd, self.outlier_fraction, self.max_constraint_violation,
                  self.mean_geodesic_nn_distance, *self.per_mode_mass]
        if not np.all(np.isfinite(values)):
            raise InvalidConfig("metric report contains non-finite values")

    def to_json_dict(self) -> dict:
        return {
            "mmd": self.mmd,
            "per_mode_mass": list(self.per_mode_mass),
            "outlier_fraction": self.outlier_fraction,
            "max_constraint_violation": self.max_constraint_violation,
            "mean_geodesic_nn_distance": self.mean_geodesic_nn_distance,
            "sample_count": self.sample_count,
            "bandwidth": self.bandwidth,
        }

    def csv_row(self, seed: int, guidance_scale: float) -> str:
        mode0 = self.per_mode_mass[0] if self.per_mode_mass else 0.0
        mode1 = self.per_mode_mass[1] if len(self.per_mode_mass) > 1 else 0.0
        return (f"{seed},{guidance_scale:.12g},{self.mmd:.12g},{mode0:.12g},"
                f"{mode1:.12g},{self.outlier_fraction:.12g},"
                f"{self.max_constraint_violation:.12g}")


CSV_HEADER = "seed,guidance_scale,mmd,mode0,mode1,outliers,max_violation"


def evaluate_samples(
    m: mf.ManifoldSpec,
    samples: np.ndarray,
    reference: np.ndarray,
    bandwidth: Optional[float] = None,
    modes: Optional[Sequence[np.ndarray]] = None,
    assign_radius: float = 1.0,
) -> MetricReport:
    samples = np.atleast_2d(samples)
    reference = np.atleast_2d(reference)
    if samples.shape[0] == 0 or reference.shape[0] == 0:
        raise EmptyBatch("evaluation needs nonempty sample and reference sets")
    if bandwidth is None:
        bandwidth = median_bandwidth(m, samples, reference)
    mmd = geodesic_mmd(m, samples, reference, bandwidth)
    if modes:
        mass, outliers = mode_coverage(m, samples, modes, assign_radius)
    else:
        mass, outliers = np.array([1.0]), 0.0
    nn = pairwise_distance(m, samples, reference).min(axis=1)
    stats = constraint_violation_stats(m, samples)
    return MetricReport(
        mmd=mmd,
        per_mode_mass=tuple(float(x) for x in mass),
        outlier_fraction=outliers,
        max_constraint_violation=stats.max_deviation,
        mean_geodesic_nn_distance=float(nn.mean()),
        sample_count=samples.shape[0],
        bandwidth=float(bandwidth),
    )
