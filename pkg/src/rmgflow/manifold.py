"""Closed-form geometry on products of Euclidean, sphere, and pre-shape factors.

Points and tangent vectors are flat float64 arrays in ambient coordinates.
Every operation accepts arbitrary leading batch dimensions and works
factor-wise along the last axis, so a product manifold behaves exactly like
independent per-factor application.

Supported factors:

- ``euclidean(n)``   -- flat R^n, exp/log are addition/subtraction.
- ``sphere(d)``      -- unit sphere S^d embedded in R^{d+1}.
- ``preshape(k, m)`` -- centered k x m landmark matrices of unit Frobenius
  norm (Kendall pre-shapes).  Intrinsically a sphere inside the centered
  subspace, so geodesics reuse the sphere formulas; only the tangent
  projection additionally re-centers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    AntipodalPoints,
    DimensionMismatch,
    DomainError,
    InvalidConfig,
    NotTangent,
)

# Centralized tolerance table (double precision throughout).
TOL_POINT = 1e-9          # unit-norm / centering slack for valid points
TOL_TANGENT = 1e-9        # tangency slack for valid tangent vectors
TANGENT_REJECT = 10.0 * TOL_TANGENT  # hard-error threshold in exp_map
SMALL_ANGLE = 1e-6        # switch to series expansions below this angle
ANTIPODAL_MARGIN = 1e-6   # reject geodesics with theta >= pi - margin


@dataclass(frozen=True)
class FactorSpec:
    """One factor of a product manifold.

    ``dim`` is n for Euclidean factors and d for Sphere(d) (embedded in
    R^{d+1}); pre-shape factors use ``landmarks`` x ``spatial_dim`` matrices.
    """

    kind: str
    dim: int = 0
    landmarks: int = 0
    spatial_dim: int = 0
    multiplicity: int = 1

    def __post_init__(self):
        if self.multiplicity < 1:
            raise InvalidConfig(f"multiplicity must be >= 1, got {self.multiplicity}")
        if self.kind == "euclidean":
            if self.dim < 1:
                raise InvalidConfig(f"euclidean dim must be >= 1, got {self.dim}")
        elif self.kind == "sphere":
            if self.dim < 1:
                raise InvalidConfig(f"sphere dim must be >= 1, got {self.dim}")
        elif self.kind == "preshape":
            if self.landmarks < 2:
                raise InvalidConfig(f"preshape needs >= 2 landmarks, got {self.landmarks}")
            if self.spatial_dim < 1:
                raise InvalidConfig(f"preshape spatial dim must be >= 1, got {self.spatial_dim}")
        else:
            raise InvalidConfig(f"unknown factor kind {self.kind!r}")

    @property
    def ambient_dim_per_copy(self) -> int:
        if self.kind == "euclidean":
            return self.dim
        if self.kind == "sphere":
            return self.dim + 1
        return self.landmarks * self.spatial_dim

    @property
    def ambient_dim(self) -> int:
        return self.ambient_dim_per_copy * self.multiplicity

    def to_json_dict(self) -> dict:
        if self.kind == "preshape":
            return {
                "kind": "preshape",
                "landmarks": self.landmarks,
                "spatial_dim": self.spatial_dim,
                "multiplicity": self.multiplicity,
            }
        return {"kind": self.kind, "dim": self.dim, "multiplicity": self.multiplicity}

    @classmethod
    def from_json_dict(cls, d: dict) -> "FactorSpec":
        kind = d.get("kind")
        mult = int(d.get("multiplicity", 1))
        if kind == "preshape":
            return cls(
                kind="preshape",
                landmarks=int(d["landmarks"]),
                spatial_dim=int(d["spatial_dim"]),
                multiplicity=mult,
            )
        if kind in ("euclidean", "sphere"):
            return cls(kind=kind, dim=int(d["dim"]), multiplicity=mult)
        raise InvalidConfig(f"unknown factor kind {kind!r}")


def euclidean(n: int, multiplicity: int = 1) -> FactorSpec:
    return FactorSpec(kind="euclidean", dim=n, multiplicity=multiplicity)


def sphere(d: int, multiplicity: int = 1) -> FactorSpec:
    return FactorSpec(kind="sphere", dim=d, multiplicity=multiplicity)


def preshape(landmarks: int, spatial_dim: int, multiplicity: int = 1) -> FactorSpec:
    return FactorSpec(
        kind="preshape", landmarks=landmarks, spatial_dim=spatial_dim, multiplicity=multiplicity
    )


class Segment(NamedTuple):
    """One multiplicity-expanded slice of the flat coordinate vector."""

    kind: str
    offset: int
    length: int
    landmarks: int
    spatial_dim: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


@dataclass(frozen=True)
class ManifoldSpec:
    """Ordered product of factors with a contiguous flat memory layout."""

    factors: tuple[FactorSpec, ...]

    def __init__(self, factors: Sequence[FactorSpec]):
        object.__setattr__(self, "factors", tuple(factors))
        if not self.factors:
            raise InvalidConfig("a manifold needs at least one factor")

    @cached_property
    def segments(self) -> tuple[Segment, ...]:
        segs = []
        off = 0
        for f in self.factors:
            per = f.ambient_dim_per_copy
            for _ in range(f.multiplicity):
                segs.append(Segment(f.kind, off, per, f.landmarks, f.spatial_dim))
                off += per
        return tuple(segs)

    @cached_property
    def layout(self) -> tuple[tuple[int, int], ...]:
        """Per-factor (offset, length) into the flat coordinate vector."""
        out = []
        off = 0
        for f in self.factors:
            out.append((off, f.ambient_dim))
            off += f.ambient_dim
        return tuple(out)

    @property
    def total_ambient_dim(self) -> int:
        return sum(f.ambient_dim for f in self.factors)

    def to_json_dict(self) -> dict:
        return {"factors": [f.to_json_dict() for f in self.factors]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, d: dict) -> "ManifoldSpec":
        return cls([FactorSpec.from_json_dict(f) for f in d["factors"]])

    @classmethod
    def from_json(cls, s: str) -> "ManifoldSpec":
        return cls.from_json_dict(json.loads(s))


@dataclass(frozen=True)
class WrappedGaussianSpec:
    """Tangent Gaussian at ``mean`` wrapped through the exponential map.

    ``per_factor_scale`` holds one isotropic sigma per factor (sigma = 0 is
    the degenerate distribution concentrated at the mean).
    """

    spec: ManifoldSpec
    mean: np.ndarray
    per_factor_scale: tuple[float, ...]

    def __init__(self, spec, mean, per_factor_scale):
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "mean", np.asarray(mean, dtype=float))
        if np.isscalar(per_factor_scale):
            per_factor_scale = (float(per_factor_scale),) * len(spec.factors)
        object.__setattr__(self, "per_factor_scale", tuple(float(s) for s in per_factor_scale))
        if self.mean.shape != (spec.total_ambient_dim,):
            raise DimensionMismatch(
                f"mean has shape {self.mean.shape}, expected ({spec.total_ambient_dim},)"
            )
        if len(self.per_factor_scale) != len(spec.factors):
            raise DimensionMismatch("need one scale per factor")
        if any(s < 0 for s in self.per_factor_scale):
            raise InvalidConfig("scales must be nonnegative")


# ---------------------------------------------------------------------------
# segment-level primitives (sphere formulas also serve pre-shape segments)
# ---------------------------------------------------------------------------


def _norm(a, keepdims=True):
    return np.linalg.norm(a, axis=-1, keepdims=keepdims)


def _center(a, k, m):
    """Subtract the landmark centroid from a flat (..., k*m) block."""
    mat = a.reshape(a.shape[:-1] + (k, m))
    mat = mat - mat.mean(axis=-2, keepdims=True)
    return mat.reshape(a.shape)


def _sphere_exp(x, v):
    n = _norm(v)
    small = n < SMALL_ANGLE
    safe = np.where(small, 1.0, n)
    sinc = np.where(small, 1.0 - n * n / 6.0, np.sin(safe) / safe)
    cosn = np.where(small, 1.0 - n * n / 2.0, np.cos(n))
    y = cosn * x + sinc * v
    return y / _norm(y)


def _sphere_angle(x, y):
    dot = np.clip(np.sum(x * y, axis=-1, keepdims=True), -1.0, 1.0)
    return dot, np.arccos(dot)


def _check_not_antipodal(theta):
    if np.any(theta >= np.pi - ANTIPODAL_MARGIN):
        raise AntipodalPoints("segment angle within 1e-6 of pi: no unique geodesic")


def _sphere_log(x, y):
    dot, theta = _sphere_angle(x, y)
    _check_not_antipodal(theta)
    u = y - dot * x
    un = _norm(u)
    small = theta < SMALL_ANGLE
    safe_un = np.where(small, 1.0, un)
    # theta / sin(theta) with its series for tiny angles (||u|| = sin(theta))
    scale = np.where(small, 1.0 + theta * theta / 6.0, theta / safe_un)
    return scale * u


def _sphere_geodesic(x0, x1, t):
    dot, theta = _sphere_angle(x0, x1)
    _check_not_antipodal(theta)
    small = theta < SMALL_ANGLE
    safe_sin = np.where(small, 1.0, np.sin(theta))
    w0 = np.where(small, 1.0 - t, np.sin((1.0 - t) * theta) / safe_sin)
    w1 = np.where(small, t, np.sin(t * theta) / safe_sin)
    y = w0 * x0 + w1 * x1
    n = _norm(y)
    return np.where(small, y / np.where(n == 0, 1.0, n), y)


def _sphere_geodesic_velocity(x0, x1, t):
    # Analytic d/dt of the sin-weighted geodesic; constant speed ||.|| = theta.
    dot, theta = _sphere_angle(x0, x1)
    _check_not_antipodal(theta)
    small = theta < SMALL_ANGLE
    safe_sin = np.where(small, 1.0, np.sin(theta))
    ratio = np.where(small, 1.0 + theta * theta / 6.0, theta / safe_sin)
    return ratio * (-np.cos((1.0 - t) * theta) * x0 + np.cos(t * theta) * x1)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _as_coords(m: ManifoldSpec, a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0 or a.shape[-1] != m.total_ambient_dim:
        raise DimensionMismatch(
            f"{name} has trailing dim {a.shape[-1] if a.ndim else 0}, "
            f"expected {m.total_ambient_dim}"
        )
    return a


def tangency_defect(m: ManifoldSpec, x, v) -> float:
    """Largest violation of the tangent-space constraints of v at x."""
    worst = 0.0
    for seg in m.segments:
        if seg.kind == "euclidean":
            continue
        xs, vs = x[..., seg.slice], v[..., seg.slice]
        radial = np.abs(np.sum(xs * vs, axis=-1))
        worst = max(worst, float(radial.max()))
        if seg.kind == "preshape":
            mat = vs.reshape(vs.shape[:-1] + (seg.landmarks, seg.spatial_dim))
            cent = np.abs(mat.mean(axis=-2))
            worst = max(worst, float(cent.max()))
    return worst


def exp_map(m: ManifoldSpec, x, v) -> np.ndarray:
    """Shoot v (tangent at x) along its geodesic for unit time."""
    x = _as_coords(m, x, "x")
    v = _as_coords(m, v, "v")
    defect = tangency_defect(m, x, v)
    if defect > TANGENT_REJECT:
        raise NotTangent(f"tangency defect {defect:.3e} exceeds {TANGENT_REJECT:.1e}")
    shape = np.broadcast_shapes(x.shape, v.shape)
    out = np.empty(shape)
    for seg in m.segments:
        xs, vs = x[..., seg.slice], v[..., seg.slice]
        if seg.kind == "euclidean":
            out[..., seg.slice] = xs + vs
        else:
            out[..., seg.slice] = _sphere_exp(xs, vs)
    return out


def log_map(m: ManifoldSpec, x, y) -> np.ndarray:
    """Tangent vector at x pointing to y with length equal to distance."""
    x = _as_coords(m, x, "x")
    y = _as_coords(m, y, "y")
    shape = np.broadcast_shapes(x.shape, y.shape)
    out = np.empty(shape)
    for seg in m.segments:
        xs, ys = x[..., seg.slice], y[..., seg.slice]
        if seg.kind == "euclidean":
            out[..., seg.slice] = ys - xs
        else:
            out[..., seg.slice] = _sphere_log(xs, ys)
    return out


def _check_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError("interpolation time t must lie in [0, 1]")
    return t


def geodesic(m: ManifoldSpec, x0, x1, t) -> np.ndarray:
    """Constant-speed geodesic point between x0 and x1 at time t in [0, 1]."""
    x0 = _as_coords(m, x0, "x0")
    x1 = _as_coords(m, x1, "x1")
    t = _check_t(t)[..., None]
    shape = np.broadcast_shapes(x0.shape, x1.shape, t.shape[:-1] + (m.total_ambient_dim,))
    out = np.empty(shape)
    for seg in m.segments:
        a, b = x0[..., seg.slice], x1[..., seg.slice]
        if seg.kind == "euclidean":
            out[..., seg.slice] = (1.0 - t) * a + t * b
        else:
            out[..., seg.slice] = _sphere_geodesic(a, b, t)
    return out


def geodesic_velocity(m: ManifoldSpec, x0, x1, t) -> np.ndarray:
    """Time derivative of ``geodesic`` (tangent at the geodesic point)."""
    x0 = _as_coords(m, x0, "x0")
    x1 = _as_coords(m, x1, "x1")
    t = _check_t(t)[..., None]
    shape = np.broadcast_shapes(x0.shape, x1.shape, t.shape[:-1] + (m.total_ambient_dim,))
    out = np.empty(shape)
    for seg in m.segments:
        a, b = x0[..., seg.slice], x1[..., seg.slice]
        if seg.kind == "euclidean":
            out[..., seg.slice] = b - a
        else:
            out[..., seg.slice] = _sphere_geodesic_velocity(a, b, t)
    return out


def project_tangent(m: ManifoldSpec, x, a) -> np.ndarray:
    """Orthogonal projection of an ambient vector onto the tangent space at x.

    Idempotent and self-adjoint; Euclidean blocks pass through unchanged.
    """
    x = _as_coords(m, x, "x")
    a = _as_coords(m, a, "a")
    shape = np.broadcast_shapes(x.shape, a.shape)
    out = np.empty(shape)
    for seg in m.segments:
        xs, as_ = x[..., seg.slice], a[..., seg.slice]
        if seg.kind == "euclidean":
            out[..., seg.slice] = as_ + np.zeros_like(xs)
        elif seg.kind == "sphere":
            dot = np.sum(as_ * xs, axis=-1, keepdims=True)
            out[..., seg.slice] = as_ - dot * xs
        else:
            c = _center(as_ + np.zeros_like(xs), seg.landmarks, seg.spatial_dim)
            dot = np.sum(c * xs, axis=-1, keepdims=True)
            out[..., seg.slice] = c - dot * xs
    return out


def distance(m: ManifoldSpec, x, y) -> np.ndarray:
    """Product geodesic distance (factor-wise Pythagorean combination)."""
    x = _as_coords(m, x, "x")
    y = _as_coords(m, y, "y")
    total = 0.0
    for seg in m.segments:
        xs, ys = x[..., seg.slice], y[..., seg.slice]
        if seg.kind == "euclidean":
            d = np.linalg.norm(ys - xs, axis=-1)
        else:
            dot, theta = _sphere_angle(xs, ys)
            d = theta[..., 0]
        total = total + d * d
    return np.sqrt(total)


@dataclass(frozen=True)
class Violation:
    factor_index: int
    constraint: str
    deviation: float


def point_deviations(m: ManifoldSpec, x) -> list[tuple[int, str, np.ndarray]]:
    """Per-constraint absolute deviations, vectorized over leading dims."""
    x = _as_coords(m, x, "x")
    out = []
    for i, seg in enumerate(m.segments):
        xs = x[..., seg.slice]
        if seg.kind == "euclidean":
            continue
        out.append((i, "unit_norm", np.abs(_norm(xs, keepdims=False) - 1.0)))
        if seg.kind == "preshape":
            mat = xs.reshape(xs.shape[:-1] + (seg.landmarks, seg.spatial_dim))
            out.append((i, "centroid", np.abs(mat.mean(axis=-2)).max(axis=-1)))
    return out


def validate_point(m: ManifoldSpec, x, tol: float = TOL_POINT) -> list[Violation]:
    """Empty list iff all point invariants hold within tol."""
    violations = []
    for i, name, dev in point_deviations(m, x):
        worst = float(np.max(dev))
        if worst > tol:
            violations.append(Violation(i, name, worst))
    return violations


def max_constraint_deviation(m: ManifoldSpec, x) -> float:
    devs = [float(np.max(d)) for _, _, d in point_deviations(m, x)]
    return max(devs, default=0.0)


def sample_wrapped_gaussian(
    m: ManifoldSpec, g: WrappedGaussianSpec, rng: np.random.Generator, size=None
) -> np.ndarray:
    """Draw ambient Gaussian noise, project to the tangent space at the mean,
    and wrap through the exponential map.  Deterministic given the rng state.
    """
    if size is None:
        shape = (m.total_ambient_dim,)
    elif np.isscalar(size):
        shape = (int(size), m.total_ambient_dim)
    else:
        shape = tuple(size) + (m.total_ambient_dim,)
    xi = rng.standard_normal(shape)
    for (off, length), scale in zip(m.layout, g.per_factor_scale):
        if scale != 1.0:
            xi[..., off : off + length] = scale * xi[..., off : off + length]
    v = project_tangent(m, g.mean, xi)
    return exp_map(m, g.mean, v)


def random_point(m: ManifoldSpec, rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform-ish random point: Gaussian draws normalized / centered per segment."""
    if size is None:
        shape = (m.total_ambient_dim,)
    elif np.isscalar(size):
        shape = (int(size), m.total_ambient_dim)
    else:
        shape = tuple(size) + (m.total_ambient_dim,)
    x = rng.standard_normal(shape)
    for seg in m.segments:
        xs = x[..., seg.slice]
        if seg.kind == "euclidean":
            continue
        if seg.kind == "preshape":
            xs = _center(xs, seg.landmarks, seg.spatial_dim)
        x[..., seg.slice] = xs / _norm(xs)
    return x


def random_tangent(
    m: ManifoldSpec, x, rng: np.random.Generator, max_norm: float | None = None
) -> np.ndarray:
    """Random tangent vector at x, optionally capped per sphere-like segment."""
    x = _as_coords(m, x, "x")
    v = project_tangent(m, x, rng.standard_normal(x.shape))
    if max_norm is not None:
        for seg in m.segments:
            if seg.kind == "euclidean":
                continue
            vs = v[..., seg.slice]
            n = _norm(vs)
            over = n > max_norm
            v[..., seg.slice] = np.where(over, vs * (max_norm / np.where(over, n, 1.0)), vs)
    return v
