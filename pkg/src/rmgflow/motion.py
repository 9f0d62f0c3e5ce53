"""Skeletal motion data model and its embedding into product manifolds.

Conventions (fixed for reproducibility): y-up right-handed axes, quaternion
order (w, x, y, z), rotation index 0 is the global orientation, and all
quaternions are kept on the upper hemisphere (w > 0, ties broken by the
first nonzero of x, y, z).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import manifold as mf
from .errors import (
    ConfigLacksRotations,
    DegenerateConfiguration,
    DimensionMismatch,
    IndexOutOfRange,
    InvalidConfig,
    MissingNextFrame,
    SequenceTooShort,
    SkeletonMismatch,
    ZeroQuaternion,
)

log = logging.getLogger(__name__)

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# Ambient-dimension formulas (a*J + b) of documented per-frame motion formats.
# Recorded as constants for dimension accounting only; the byte layouts of
# these external formats are out of scope.
FORMAT_DIMENSIONS: dict[str, tuple[int, int]] = {
    "humanml3d": (12, -1),
    "motionstreamer": (12, 8),
    "dart": (12, 12),
    "hy-motion": (9, 3),
    "rmg": (4, 3),
}


def format_ambient_dimension(fmt: str, joints: int) -> int:
    a, b = FORMAT_DIMENSIONS[fmt]
    return a * joints + b


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------


def canonicalize_quaternion(q: np.ndarray) -> np.ndarray:
    """Normalize and flip sign so the first nonzero of (w, x, y, z) is positive.

    q and -q represent the same rotation; this picks a unique representative
    on the upper hemisphere.  Idempotent.  Works on (..., 4) arrays.
    """
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ZeroQuaternion("cannot canonicalize a zero quaternion")
    q = q / n
    sign = np.zeros(q.shape[:-1])
    for i in range(4):
        sign = np.where(sign == 0.0, np.sign(q[..., i]), sign)
    return q * sign[..., None]


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of (..., 4) quaternion arrays in (w, x, y, z) order."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ZeroQuaternion("rotation axis must be nonzero")
    axis = axis / n
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion; supports (..., 4) input."""
    w, x, y, z = (q[..., i] for i in range(4))
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (quat_to_matrix(q) @ v[..., None])[..., 0]


# ---------------------------------------------------------------------------
# skeleton and frames
# ---------------------------------------------------------------------------


@dataclass
class Skeleton:
    """Joint tree with fixed bone offsets defining the canonical T-pose."""

    parents: np.ndarray        # (J,) int, parents[0] == -1, parents[j] < j
    rest_offsets: np.ndarray   # (J, 3) meters, root offset is zero

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=int)
        self.rest_offsets = np.asarray(self.rest_offsets, dtype=float)
        J = self.parents.shape[0]
        if self.rest_offsets.shape != (J, 3):
            raise InvalidConfig(f"rest_offsets must be ({J}, 3)")
        if J < 1 or self.parents[0] != -1:
            raise InvalidConfig("joint 0 must be the root (parent -1)")
        for j in range(1, J):
            if not 0 <= self.parents[j] < j:
                raise InvalidConfig(f"parent of joint {j} must precede it in the ordering")
        if np.any(self.rest_offsets[0] != 0.0):
            raise InvalidConfig("root rest offset must be zero")

    @property
    def joint_count(self) -> int:
        return int(self.parents.shape[0])

    def to_json_dict(self) -> dict:
        return {
            "parents": self.parents.tolist(),
            "rest_offsets": self.rest_offsets.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Skeleton":
        return cls(parents=d["parents"], rest_offsets=d["rest_offsets"])


def default_skeleton() -> Skeleton:
    """22-joint SMPL-like test skeleton shipped with the package."""
    text = resources.files("rmgflow.data").joinpath("skeleton22.json").read_text()
    return Skeleton.from_json_dict(json.loads(text))


@dataclass
class MotionFrame:
    """Root translation plus J unit quaternions (index 0 = global orientation)."""

    root_translation: np.ndarray  # (3,)
    rotations: np.ndarray         # (J, 4), unit, hemisphere-canonical

    def __post_init__(self):
        self.root_translation = np.asarray(self.root_translation, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        if self.root_translation.shape != (3,):
            raise InvalidConfig("root_translation must be a 3-vector")
        if self.rotations.ndim != 2 or self.rotations.shape[1] != 4:
            raise InvalidConfig("rotations must be (J, 4)")

    @property
    def joint_count(self) -> int:
        return int(self.rotations.shape[0])

    def violations(self, tol: float = 1e-9) -> list[str]:
        out = []
        norms = np.linalg.norm(self.rotations, axis=-1)
        bad = np.abs(norms - 1.0) > tol
        for j in np.nonzero(bad)[0]:
            out.append(f"quaternion {j} has norm {norms[j]:.9f}")
        canon = canonicalize_quaternion(np.where(norms[:, None] > 0, self.rotations, 1.0))
        flipped = np.any(canon * self.rotations < -tol, axis=-1)
        for j in np.nonzero(flipped)[0]:
            out.append(f"quaternion {j} is not hemisphere-canonical")
        return out


def rest_frame(skeleton: Skeleton) -> MotionFrame:
    return MotionFrame(
        root_translation=np.zeros(3),
        rotations=np.tile(QUAT_IDENTITY, (skeleton.joint_count, 1)),
    )


@dataclass
class MotionSequence:
    frames: list[MotionFrame]
    fps: float
    skeleton: Skeleton

    def __post_init__(self):
        if self.fps <= 0:
            raise InvalidConfig("fps must be positive")
        J = self.skeleton.joint_count
        for i, f in enumerate(self.frames):
            if f.joint_count != J:
                raise SkeletonMismatch(f"frame {i} has {f.joint_count} joints, skeleton has {J}")

    def __len__(self) -> int:
        return len(self.frames)


# ---------------------------------------------------------------------------
# representation configs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RepresentationConfig:
    """Which factors participate in the per-frame manifold point.

    Factor order in the flat layout is fixed: translation, rotations,
    preshape, then the temporal-difference blocks in the same order.
    """

    joints: int
    translation: bool = False
    rotations: bool = False
    preshape: bool = False
    d_translation: bool = False
    d_rotations: bool = False
    d_preshape: bool = False

    def __post_init__(self):
        if self.joints < 1:
            raise InvalidConfig("joints must be >= 1")
        if not (self.translation or self.d_translation):
            raise InvalidConfig("config needs a translation or translation-difference factor")
        if not (self.rotations or self.preshape or self.d_rotations or self.d_preshape):
            raise InvalidConfig("config needs a rotation or pose factor")

    @property
    def has_differences(self) -> bool:
        return self.d_translation or self.d_rotations or self.d_preshape

    def to_json_dict(self) -> dict:
        return {
            "joints": self.joints,
            "translation": self.translation,
            "rotations": self.rotations,
            "preshape": self.preshape,
            "d_translation": self.d_translation,
            "d_rotations": self.d_rotations,
            "d_preshape": self.d_preshape,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RepresentationConfig":
        return cls(**d)


def ambient_dimension(cfg: RepresentationConfig) -> int:
    J = cfg.joints
    dim = 0
    if cfg.translation:
        dim += 3
    if cfg.rotations:
        dim += 4 * J
    if cfg.preshape:
        dim += 3 * J
    if cfg.d_translation:
        dim += 3
    if cfg.d_rotations:
        dim += 4 * J
    if cfg.d_preshape:
        dim += 3 * J
    return dim


def config_to_manifold(cfg: RepresentationConfig) -> mf.ManifoldSpec:
    """Product manifold induced by the config (difference blocks are tangent
    coordinates attached to the data, hence Euclidean segments)."""
    J = cfg.joints
    factors = []
    if cfg.translation:
        factors.append(mf.euclidean(3))
    if cfg.rotations:
        factors.append(mf.sphere(3, multiplicity=J))
    if cfg.preshape:
        factors.append(mf.preshape(J, 3))
    if cfg.d_translation:
        factors.append(mf.euclidean(3))
    if cfg.d_rotations:
        factors.append(mf.euclidean(4, multiplicity=J))
    if cfg.d_preshape:
        factors.append(mf.euclidean(3 * J))
    return mf.ManifoldSpec(factors)


# ---------------------------------------------------------------------------
# geometry of frames
# ---------------------------------------------------------------------------


def compute_preshape(positions: np.ndarray) -> np.ndarray:
    """Center the landmark rows and scale to unit Frobenius norm."""
    P = np.asarray(positions, dtype=float)
    centered = P - P.mean(axis=0, keepdims=True)
    norm = np.linalg.norm(centered)
    if norm <= 1e-12:
        raise DegenerateConfiguration("all landmarks coincide; pre-shape undefined")
    return centered / norm


def forward_kinematics(skeleton: Skeleton, frame: MotionFrame) -> np.ndarray:
    """World positions of all joints, composing rotations down the tree."""
    J = skeleton.joint_count
    if frame.joint_count != J:
        raise SkeletonMismatch(f"frame has {frame.joint_count} joints, skeleton has {J}")
    positions = np.empty((J, 3))
    global_q = np.empty((J, 4))
    positions[0] = frame.root_translation
    global_q[0] = frame.rotations[0]
    for j in range(1, J):
        p = skeleton.parents[j]
        positions[j] = positions[p] + quat_rotate(global_q[p], skeleton.rest_offsets[j])
        global_q[j] = quat_multiply(global_q[p], frame.rotations[j])
    return positions


def _frame_quats_flat(frame: MotionFrame) -> np.ndarray:
    return canonicalize_quaternion(frame.rotations).reshape(-1)


def temporal_difference(
    seq: MotionSequence, cfg: RepresentationConfig, t_index: int
) -> dict[str, np.ndarray]:
    """Log-map tangents from frame t to frame t+1 for the enabled d-blocks."""
    if t_index < 0 or t_index + 1 >= len(seq):
        raise IndexOutOfRange(f"t_index {t_index} needs a following frame")
    cur, nxt = seq.frames[t_index], seq.frames[t_index + 1]
    out: dict[str, np.ndarray] = {}
    if cfg.d_translation:
        out["d_translation"] = nxt.root_translation - cur.root_translation
    if cfg.d_rotations:
        s3 = mf.ManifoldSpec([mf.sphere(3, multiplicity=cfg.joints)])
        out["d_rotations"] = mf.log_map(s3, _frame_quats_flat(cur), _frame_quats_flat(nxt))
    if cfg.d_preshape:
        pk = mf.ManifoldSpec([mf.preshape(cfg.joints, 3)])
        cur_p = compute_preshape(forward_kinematics(seq.skeleton, cur)).reshape(-1)
        nxt_p = compute_preshape(forward_kinematics(seq.skeleton, nxt)).reshape(-1)
        out["d_preshape"] = mf.log_map(pk, cur_p, nxt_p)
    return out


def frame_to_point(
    frame: MotionFrame,
    cfg: RepresentationConfig,
    skeleton: Skeleton,
    next_frame: MotionFrame | None = None,
    seq_fps: float = 1.0,
) -> np.ndarray:
    """Flat manifold coordinates of a frame under the config layout."""
    if frame.joint_count != cfg.joints or skeleton.joint_count != cfg.joints:
        raise SkeletonMismatch("frame / skeleton / config joint counts disagree")
    if cfg.has_differences and next_frame is None:
        raise MissingNextFrame("temporal-difference factors need the next frame")
    blocks = []
    if cfg.translation:
        blocks.append(frame.root_translation)
    if cfg.rotations:
        blocks.append(_frame_quats_flat(frame))
    if cfg.preshape:
        blocks.append(compute_preshape(forward_kinematics(skeleton, frame)).reshape(-1))
    if cfg.has_differences:
        tiny = MotionSequence(frames=[frame, next_frame], fps=seq_fps, skeleton=skeleton)
        diffs = temporal_difference(tiny, cfg, 0)
        for key in ("d_translation", "d_rotations", "d_preshape"):
            if key in diffs:
                blocks.append(np.asarray(diffs[key]).reshape(-1))
    return np.concatenate(blocks)


def point_to_frame(
    p: np.ndarray, cfg: RepresentationConfig, skeleton: Skeleton
) -> MotionFrame:
    """Recover a frame from flat coordinates (rotation recovery path)."""
    if not cfg.rotations:
        raise ConfigLacksRotations("cannot rebuild a frame without a rotation factor")
    p = np.asarray(p, dtype=float)
    if p.shape != (ambient_dimension(cfg),):
        raise DimensionMismatch(
            f"point has shape {p.shape}, expected ({ambient_dimension(cfg)},)"
        )
    off = 0
    translation = np.zeros(3)
    if cfg.translation:
        translation = p[0:3]
        off = 3
    quats = p[off : off + 4 * cfg.joints].reshape(cfg.joints, 4)
    norms = np.linalg.norm(quats, axis=-1)
    drift = float(np.max(np.abs(norms - 1.0)))
    if drift > 1e-6:
        log.warning("renormalizing quaternions with max norm drift %.3e", drift)
    return MotionFrame(root_translation=translation.copy(),
                       rotations=canonicalize_quaternion(quats))


def sequence_to_points(seq: MotionSequence, cfg: RepresentationConfig) -> np.ndarray:
    """(T, D) or (T-1, D) stack of per-frame points (one fewer with d-blocks)."""
    frames = seq.frames
    if cfg.has_differences:
        if len(frames) < 2:
            raise SequenceTooShort("difference factors need at least 2 frames")
        pairs = zip(frames[:-1], frames[1:])
        return np.stack(
            [frame_to_point(f, cfg, seq.skeleton, nxt, seq.fps) for f, nxt in pairs]
        )
    return np.stack([frame_to_point(f, cfg, seq.skeleton) for f in frames])


def points_to_sequence(
    points: np.ndarray, cfg: RepresentationConfig, skeleton: Skeleton, fps: float
) -> MotionSequence:
    frames = [point_to_frame(p, cfg, skeleton) for p in np.atleast_2d(points)]
    return MotionSequence(frames=frames, fps=fps, skeleton=skeleton)


def convert_to_position_format(seq: MotionSequence) -> tuple[np.ndarray, np.ndarray]:
    """Joint positions plus forward-difference velocities (scaled by fps).

    The last frame repeats the previous velocity.  Returns two (T, J, 3)
    arrays.
    """
    if len(seq) < 2:
        raise SequenceTooShort("need at least 2 frames for velocities")
    positions = np.stack([forward_kinematics(seq.skeleton, f) for f in seq.frames])
    velocities = np.empty_like(positions)
    velocities[:-1] = (positions[1:] - positions[:-1]) * seq.fps
    velocities[-1] = velocities[-2]
    return positions, velocities


# ---------------------------------------------------------------------------
# motion file format
# ---------------------------------------------------------------------------


def load_motion_dict(doc: dict, tol: float = 1e-6) -> MotionSequence:
    """Parse the motion JSON document, rejecting invalid quaternions and
    auto-canonicalizing hemisphere signs (flip count is logged)."""
    skeleton = Skeleton(
        parents=doc["skeleton"]["parents"],
        rest_offsets=doc["skeleton"]["rest_offsets"],
    )
    frames = []
    flips = 0
    for i, fr in enumerate(doc["frames"]):
        rot = np.asarray(fr["rotations"], dtype=float)
        norms = np.linalg.norm(rot, axis=-1)
        bad = np.abs(norms - 1.0) > tol
        if np.any(bad):
            j = int(np.nonzero(bad)[0][0])
            raise InvalidConfig(
                f"frame {i}: quaternion {j} has norm {norms[j]:.6f} (tolerance {tol})"
            )
        canon = canonicalize_quaternion(rot)
        flips += int(np.sum(np.any(canon * rot < -tol, axis=-1)))
        frames.append(MotionFrame(root_translation=fr["root_translation"], rotations=canon))
    if flips:
        log.info("canonicalized %d quaternion hemisphere signs on load", flips)
    return MotionSequence(frames=frames, fps=float(doc["fps"]), skeleton=skeleton)


def load_motion(path, tol: float = 1e-6) -> MotionSequence:
    with open(path) as fh:
        return load_motion_dict(json.load(fh), tol=tol)


def motion_to_dict(seq: MotionSequence) -> dict:
    return {
        "fps": seq.fps,
        "skeleton": seq.skeleton.to_json_dict(),
        "frames": [
            {
                "root_translation": f.root_translation.tolist(),
                "rotations": f.rotations.tolist(),
            }
            for f in seq.frames
        ],
    }


def save_motion(seq: MotionSequence, path) -> None:
    with open(path, "w") as fh:
        json.dump(motion_to_dict(seq), fh)
