"""Forward kinematics and reward-relevant geometric predicates for the arm."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from twinsac import _kernels

N_JOINTS = 6
WORLD_UP = np.array([0.0, 0.0, 1.0])


class JointLimitError(ValueError):
    """A joint vector violates the arm's limits."""

    def __init__(self, joint: int, value: float, lo: float, hi: float):
        self.joint = joint
        super().__init__(f"joint {joint} = {value!r} outside [{lo!r}, {hi!r}]")


@dataclass(frozen=True)
class Pose3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite pose {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_array(cls, a) -> "Pose3":
        return cls(float(a[0]), float(a[1]), float(a[2]))


def _default_limits():
    lim = [(-math.pi, math.pi)] * N_JOINTS
    lim[1] = (-1.8, 1.8)
    lim[2] = (-1.8, 1.8)
    return tuple(lim)


@dataclass(frozen=True)
class ArmModel:
    """Geometry of the serial chain.

    ``link_lengths`` are upper arm, forearm (before roll), forearm (after
    roll), wrist-to-flange, and flange-to-gripper-midpoint, in meters.
    """

    link_lengths: tuple = (0.25, 0.15, 0.10, 0.08, 0.07)
    base_height: float = 0.10
    joint_limits: tuple = field(default_factory=_default_limits)
    max_aperture: float = 0.04
    table_height: float = 0.0
    base_keepout_y: float = -0.05
    contact_epsilon: float = 1e-3
    max_reach: float = 0.75

    def __post_init__(self):
        object.__setattr__(self, "link_lengths", tuple(float(v) for v in self.link_lengths))
        object.__setattr__(
            self, "joint_limits", tuple((float(lo), float(hi)) for lo, hi in self.joint_limits)
        )
        if len(self.link_lengths) != 5:
            raise ValueError("link_lengths must have 5 entries")
        if len(self.joint_limits) != N_JOINTS:
            raise ValueError("joint_limits must have 6 intervals")
        if min(self.link_lengths) <= 0 or self.base_height <= 0:
            raise ValueError("all lengths must be strictly positive")
        if sum(self.link_lengths) + self.base_height > self.max_reach + 1e-12:
            raise ValueError(
                f"total length {sum(self.link_lengths) + self.base_height:.4f} m exceeds "
                f"reach bound {self.max_reach} m"
            )
        for i, (lo, hi) in enumerate(self.joint_limits):
            if not lo < hi:
                raise ValueError(f"empty joint limit interval for joint {i}")
        if self.max_aperture <= 0:
            raise ValueError("max_aperture must be positive")
        object.__setattr__(self, "_params", np.array((self.base_height,) + self.link_lengths))
        object.__setattr__(self, "_lo", np.array([lo for lo, _ in self.joint_limits]))
        object.__setattr__(self, "_hi", np.array([hi for _, hi in self.joint_limits]))

    @property
    def params(self) -> np.ndarray:
        return self._params

    @property
    def lower(self) -> np.ndarray:
        return self._lo

    @property
    def upper(self) -> np.ndarray:
        return self._hi

    def clamp(self, angles) -> np.ndarray:
        return np.minimum(np.maximum(angles, self._lo), self._hi)


@dataclass(frozen=True)
class JointVector:
    angles: np.ndarray
    gripper_aperture: float = 0.0

    def __post_init__(self):
        a = np.array(self.angles, dtype=np.float64).reshape(N_JOINTS)
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)
        object.__setattr__(self, "gripper_aperture", float(self.gripper_aperture))

    def __eq__(self, other):
        if not isinstance(other, JointVector):
            return NotImplemented
        return (
            np.array_equal(self.angles, other.angles)
            and self.gripper_aperture == other.gripper_aperture
        )

    def as_array(self) -> np.ndarray:
        """7 values: six angles then the aperture (the twin-link payload order)."""
        return np.append(self.angles, self.gripper_aperture)

    @classmethod
    def from_array(cls, a) -> "JointVector":
        return cls(np.asarray(a[:N_JOINTS], dtype=np.float64), float(a[N_JOINTS]))


def check_limits(model: ArmModel, q: JointVector) -> None:
    for i in range(N_JOINTS):
        v = q.angles[i]
        lo, hi = model.joint_limits[i]
        if not lo <= v <= hi:
            raise JointLimitError(i, float(v), lo, hi)
    if not 0.0 <= q.gripper_aperture <= model.max_aperture:
        raise JointLimitError(N_JOINTS, q.gripper_aperture, 0.0, model.max_aperture)


@dataclass(frozen=True)
class FkResult:
    end_effector: Pose3
    gripper_mid: Pose3
    wrist_axis: np.ndarray


def forward_kinematics(model: ArmModel, q: JointVector) -> FkResult:
    check_limits(model, q)
    out = _kernels.fk_single(model.params, q.angles)
    return FkResult(Pose3.from_array(out[0:3]), Pose3.from_array(out[3:6]), out[6:9])


def fk_raw(model: ArmModel, angles) -> np.ndarray:
    """Unchecked chain evaluation; rows ``[ee(3), gripper_mid(3), axis(3)]``."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.ndim == 1:
        return _kernels.fk_single(model.params, angles)
    return _kernels.fk_batch(model.params, angles)


@dataclass(frozen=True)
class PredicateSet:
    touched_goal: bool = False
    touched_table: bool = False
    below_table: bool = False
    behind_base: bool = False


def predicates_at(model: ArmModel, gripper_mid, goal, goal_radius: float) -> PredicateSet:
    gx, gy, gz = float(gripper_mid[0]), float(gripper_mid[1]), float(gripper_mid[2])
    d = math.sqrt((gx - goal[0]) ** 2 + (gy - goal[1]) ** 2 + (gz - goal[2]) ** 2)
    eps = model.contact_epsilon
    return PredicateSet(
        touched_goal=d <= goal_radius,
        touched_table=abs(gz - model.table_height) <= eps,
        below_table=gz < model.table_height - eps,
        behind_base=gy < model.base_keepout_y,
    )


def geometric_predicates(
    model: ArmModel, q: JointVector, goal: Pose3, goal_radius: float
) -> PredicateSet:
    fk = forward_kinematics(model, q)
    return predicates_at(model, fk.gripper_mid.as_array(), goal.as_array(), goal_radius)


def upright_alignment(wrist_axis) -> float:
    """Clamped cosine between the final link and world up, in [0, 1]."""
    axis = np.asarray(wrist_axis, dtype=np.float64)
    norm = float(np.sqrt(axis @ axis))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"wrist axis must be a unit vector, got norm {norm!r}")
    return max(0.0, float(axis[2]))
