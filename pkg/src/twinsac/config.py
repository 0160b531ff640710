"""One JSON document per experiment.

Top-level sections: ``arm``, ``env``, ``reward``, ``sac``, ``twin``, plus
``metrics_interval`` and ``seed``. Every key is optional and falls back to
its default; unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from twinsac.env import ArmEnv, EnvConfig
from twinsac.kinematics import ArmModel
from twinsac.rewards import CaseId, RewardSpec, load_spec
from twinsac.sac import SacConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class TwinConfig:
    rate_hz: float = 50.0
    budget_ms: float = 20.0
    bind: str = "127.0.0.1:7400"
    connect: str = "127.0.0.1:7400"
    accept_timeout: float = 30.0

    def __post_init__(self):
        if self.rate_hz <= 0 or self.budget_ms <= 0 or self.accept_timeout <= 0:
            raise ValueError("twin rate_hz, budget_ms and accept_timeout must be positive")


def _coerce(path: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        unknown = sorted(set(value) - set(default))
        if unknown:
            raise ConfigError(f"unknown key {path}.{unknown[0]}")
        return {**default, **value}
    return value


def _section(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key {path}.{unknown[0]}")
    kwargs = {k: _coerce(f"{path}.{k}", v, getattr(defaults, k)) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _asdict(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}


_TOP = {"arm", "env", "reward", "sac", "twin", "metrics_interval", "seed"}


@dataclass(frozen=True)
class Config:
    arm: ArmModel = field(default_factory=ArmModel)
    env: EnvConfig = field(default_factory=EnvConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    twin: TwinConfig = field(default_factory=TwinConfig)
    reward: dict = field(default_factory=dict)  # case number -> RewardSpec override
    metrics_interval: int = 1000
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = sorted(set(data) - _TOP)
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]}")
        reward = {}
        raw_reward = data.get("reward", {})
        if not isinstance(raw_reward, dict):
            raise ConfigError("reward: expected an object keyed by case number")
        for key, spec in raw_reward.items():
            try:
                case = CaseId.parse(key)
            except ValueError:
                raise ConfigError(f"unknown key reward.{key}") from None
            try:
                parsed = RewardSpec.from_dict(spec)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"reward.{key}: {exc}") from None
            if parsed.case_id is not case:
                raise ConfigError(f"reward.{key}: case_id {int(parsed.case_id)} does not match its key")
            reward[int(case)] = parsed
        interval = _coerce("metrics_interval", data.get("metrics_interval", 1000), 1000)
        if interval < 1:
            raise ConfigError("metrics_interval must be positive")
        return cls(
            arm=_section(ArmModel, data.get("arm"), "arm"),
            env=_section(EnvConfig, data.get("env"), "env"),
            sac=_section(SacConfig, data.get("sac"), "sac"),
            twin=_section(TwinConfig, data.get("twin"), "twin"),
            reward=reward,
            metrics_interval=interval,
            seed=_coerce("seed", data.get("seed", 0), 0),
        )

    @classmethod
    def loads(cls, text: str) -> "Config":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "Config":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.loads(text)

    def to_dict(self) -> dict:
        return {
            "arm": _asdict(self.arm),
            "env": _asdict(self.env),
            "reward": {str(k): v.to_dict() for k, v in sorted(self.reward.items())},
            "sac": _asdict(self.sac),
            "twin": _asdict(self.twin),
            "metrics_interval": self.metrics_interval,
            "seed": self.seed,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).digest()

    def reward_spec(self, case_id) -> RewardSpec:
        case = CaseId.parse(case_id)
        if int(case) in self.reward:
            return self.reward[int(case)]
        return load_spec(case, int(self.env.max_episode_steps[str(int(case))]))

    def make_env(self, case_id) -> ArmEnv:
        return ArmEnv(case_id, arm=self.arm, config=self.env, spec=self.reward_spec(case_id))
