"""Episodic arm simulation for the reaching (case 1) and following (cases 2, 3) tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from twinsac import _kernels
from twinsac.kinematics import ArmModel, JointVector, Pose3, predicates_at, PredicateSet
from twinsac.rewards import CaseId, RewardSpec, StepEvents, Trigger, evaluate, load_spec

N_BRANCHES = 7
N_OPTIONS = 3
OBS_DIM = 16

# observation layout
OBS_GRIPPER = slice(0, 3)
OBS_EE = slice(3, 6)
OBS_GOAL = slice(6, 9)
OBS_DIST = 9
OBS_JOINTS = slice(10, 16)


class EpisodeOver(RuntimeError):
    """step() was called on a terminal state."""


@dataclass(frozen=True)
class EnvConfig:
    joint_step: float = 0.02
    gripper_step: float = 0.001
    goal_radius: float = 0.03
    home_angles: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    home_aperture: float = 0.02
    workspace_lo: tuple = (-0.15, 0.20, 0.10)
    workspace_hi: tuple = (0.15, 0.40, 0.30)
    track_x_min: float = -0.20
    track_x_max: float = 0.20
    track_y: float = 0.30
    track_z_offset: float = 0.05
    goal_speed: float = 0.0005
    contact_cooldown: int = 25
    max_episode_steps: dict = field(default_factory=lambda: {"1": 3000, "2": 5000, "3": 5000})

    def __post_init__(self):
        if self.joint_step <= 0 or self.gripper_step <= 0:
            raise ValueError("increments must be positive")
        if not self.track_x_min < self.track_x_max:
            raise ValueError("empty goal track")
        if any(lo > hi for lo, hi in zip(self.workspace_lo, self.workspace_hi)):
            raise ValueError("empty goal workspace box")
        if self.goal_speed < 0:
            raise ValueError("goal_speed must be non-negative")


@dataclass(frozen=True)
class BranchedAction:
    """Seven ternary selections: 0 = negative / open, 1 = stop, 2 = positive / close."""

    branches: tuple

    def __post_init__(self):
        b = tuple(int(v) for v in self.branches)
        if len(b) != N_BRANCHES or any(v not in (0, 1, 2) for v in b):
            raise ValueError(f"invalid branched action {self.branches!r}")
        object.__setattr__(self, "branches", b)

    @classmethod
    def stop(cls) -> "BranchedAction":
        return cls((1,) * N_BRANCHES)


@dataclass(eq=False)
class EnvState:
    q: JointVector
    goal: Pose3
    goal_velocity_x: float
    step_index: int
    episode_index: int
    rng: np.random.Generator
    cooldown: int = 0
    done: bool = False
    obs_cache: np.ndarray | None = field(default=None, repr=False)

    def snapshot(self) -> tuple:
        """Hashable comparison key, including the generator state."""
        return (
            tuple(self.q.angles.tolist()),
            self.q.gripper_aperture,
            (self.goal.x, self.goal.y, self.goal.z),
            self.goal_velocity_x,
            self.step_index,
            self.episode_index,
            json.dumps(self.rng.bit_generator.state, sort_keys=True),
            self.cooldown,
            self.done,
        )


@dataclass(eq=False)
class Transition:
    obs: np.ndarray
    action: BranchedAction
    reward: float
    next_obs: np.ndarray
    done: bool
    q: JointVector  # joint state after the step
    breakdown: dict
    goal_touched: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "obs": self.obs.tolist(),
                "action": list(self.action.branches),
                "reward": self.reward,
                "next_obs": self.next_obs.tolist(),
                "done": self.done,
                "q": self.q.as_array().tolist(),
                "goal_touched": self.goal_touched,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "Transition":
        d = json.loads(line)
        return cls(
            obs=np.asarray(d["obs"], dtype=np.float64),
            action=BranchedAction(tuple(d["action"])),
            reward=float(d["reward"]),
            next_obs=np.asarray(d["next_obs"], dtype=np.float64),
            done=bool(d["done"]),
            q=JointVector.from_array(d["q"]),
            breakdown={},
            goal_touched=bool(d.get("goal_touched", False)),
        )


def write_trace(path, transitions) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for tr in transitions:
            fh.write(tr.to_json())
            fh.write("\n")
            n += 1
    return n


def read_trace(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [Transition.from_json(line) for line in fh if line.strip()]


class ArmEnv:
    """Binds arm geometry, task layout and a reward table."""

    def __init__(
        self,
        case_id,
        arm: ArmModel | None = None,
        config: EnvConfig | None = None,
        spec: RewardSpec | None = None,
    ):
        self.case_id = CaseId.parse(case_id)
        self.arm = arm or ArmModel()
        self.config = config or EnvConfig()
        if spec is None:
            caps = self.config.max_episode_steps
            spec = load_spec(self.case_id, int(caps[str(int(self.case_id))]))
        self.spec = spec
        self.following = self.case_id is not CaseId.CASE1
        self._goal_terms = [t for t in spec.terms if t.trigger is Trigger.GOAL_TOUCHED]
        self._ws_lo = np.array(self.config.workspace_lo, dtype=np.float64)
        self._ws_hi = np.array(self.config.workspace_hi, dtype=np.float64)
        home = JointVector(np.array(self.config.home_angles), self.config.home_aperture)
        self.home = JointVector(self.arm.clamp(home.angles), min(home.gripper_aperture, self.arm.max_aperture))

    def reset(self, seed=None, episode_index: int = 0) -> EnvState:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        cfg = self.config
        if self.following:
            goal = Pose3(cfg.track_x_min, cfg.track_y, self.arm.table_height + cfg.track_z_offset)
            vel = cfg.goal_speed
        else:
            goal = Pose3.from_array(rng.uniform(self._ws_lo, self._ws_hi))
            vel = 0.0
        return EnvState(self.home, goal, vel, 0, episode_index, rng)

    def observe(self, state: EnvState) -> np.ndarray:
        if state.obs_cache is not None:
            return state.obs_cache.copy()
        fk = _kernels.fk_single(self.arm.params, state.q.angles)
        return self._obs(fk, state.goal.as_array(), state.q.angles)

    @staticmethod
    def _obs(fk, goal, angles) -> np.ndarray:
        obs = np.empty(OBS_DIM)
        obs[OBS_GRIPPER] = fk[3:6]
        obs[OBS_EE] = fk[0:3]
        obs[OBS_GOAL] = goal
        d = fk[3:6] - goal
        obs[OBS_DIST] = np.sqrt(d @ d)
        obs[OBS_JOINTS] = angles
        return obs

    def _advance_goal(self, state: EnvState) -> tuple:
        if not self.following:
            return state.goal, state.goal_velocity_x
        cfg = self.config
        x = state.goal.x + state.goal_velocity_x
        v = state.goal_velocity_x
        if x > cfg.track_x_max:
            x = 2.0 * cfg.track_x_max - x
            v = -v
        elif x < cfg.track_x_min:
            x = 2.0 * cfg.track_x_min - x
            v = -v
        x = min(max(x, cfg.track_x_min), cfg.track_x_max)
        return Pose3(x, state.goal.y, state.goal.z), v

    def step(self, state: EnvState, action) -> tuple:
        if state.done:
            raise EpisodeOver("cannot step a terminal state; call reset()")
        if not isinstance(action, BranchedAction):
            action = BranchedAction(tuple(action))
        cfg = self.config
        sel = np.asarray(action.branches, dtype=np.float64) - 1.0

        params = self.arm.params
        obs = self.observe(state)

        angles = self.arm.clamp(state.q.angles + cfg.joint_step * sel[:6])
        aperture = min(max(state.q.gripper_aperture - cfg.gripper_step * sel[6], 0.0), self.arm.max_aperture)
        q = JointVector(angles, aperture)
        goal, vel = self._advance_goal(state)

        fk = _kernels.fk_single(params, angles)
        goal_arr = goal.as_array()
        preds = predicates_at(self.arm, fk[3:6], goal_arr, cfg.goal_radius)
        cooldown = max(state.cooldown - 1, 0)
        if preds.touched_goal and cooldown > 0:
            preds = replace(preds, touched_goal=False)
        alignment = max(0.0, float(fk[8]))
        out = evaluate(self.spec, StepEvents(preds, alignment, state.step_index))
        goal_touched = preds.touched_goal
        if goal_touched and not out.terminal:
            cooldown = cfg.contact_cooldown

        next_obs = self._obs(fk, goal_arr, angles)
        new_state = EnvState(
            q, goal, vel, state.step_index + 1, state.episode_index, state.rng, cooldown, out.terminal, next_obs
        )
        tr = Transition(obs, action, out.reward, next_obs, out.terminal, q, out.breakdown, goal_touched)
        return new_state, tr


def reset(case_id, seed, **kwargs) -> EnvState:
    return ArmEnv(case_id, **kwargs).reset(seed)


__all__ = [
    "ArmEnv",
    "BranchedAction",
    "EnvConfig",
    "EnvState",
    "EpisodeOver",
    "Transition",
    "PredicateSet",
    "read_trace",
    "write_trace",
    "OBS_DIM",
    "N_BRANCHES",
    "N_OPTIONS",
]
