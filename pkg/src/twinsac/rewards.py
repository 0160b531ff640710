"""Hierarchical reward tables for the three training cases.

A ``RewardSpec`` is a flat, ordered list of terms. Exactly one term is the
high-level objective (goal contact); the rest are low-level shaping and
penalty terms. ``evaluate`` is pure: the per-step reward is the sum of every
term that fires, and the breakdown reports each term's share.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from twinsac.kinematics import PredicateSet


class CaseId(enum.IntEnum):
    CASE1 = 1
    CASE2 = 2
    CASE3 = 3

    @classmethod
    def parse(cls, value) -> "CaseId":
        if isinstance(value, CaseId):
            return value
        text = str(value).strip().lower()
        if text.startswith("case"):
            text = text[4:]
        try:
            return cls(int(text))
        except (ValueError, KeyError):
            raise ValueError(f"unknown case id {value!r}") from None


class Trigger(str, enum.Enum):
    GOAL_TOUCHED = "GoalTouched"
    UPRIGHT_SHAPING = "UprightShaping"
    TABLE_TOUCHED = "TableTouched"
    BELOW_TABLE = "BelowTable"
    BEHIND_BASE = "BehindBase"
    STEP_BUDGET = "StepBudget"


class Level(str, enum.Enum):
    HIGH = "High"
    LOW = "Low"


_PREDICATE_OF = {
    Trigger.GOAL_TOUCHED: "touched_goal",
    Trigger.TABLE_TOUCHED: "touched_table",
    Trigger.BELOW_TABLE: "below_table",
    Trigger.BEHIND_BASE: "behind_base",
}


@dataclass(frozen=True)
class RewardTerm:
    name: str
    trigger: Trigger
    value: float
    terminal: bool = False
    level: Level = Level.LOW
    budget: int | None = None  # StepBudget period k

    def __post_init__(self):
        object.__setattr__(self, "trigger", Trigger(self.trigger))
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "value", float(self.value))
        if self.trigger is Trigger.STEP_BUDGET:
            if self.budget is None or int(self.budget) < 1:
                raise ValueError(f"term {self.name!r}: StepBudget needs k >= 1")
            object.__setattr__(self, "budget", int(self.budget))
        elif self.budget is not None:
            raise ValueError(f"term {self.name!r}: only StepBudget takes a budget")

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "trigger": self.trigger.value,
            "value": self.value,
            "terminal": self.terminal,
            "level": self.level.value,
        }
        if self.budget is not None:
            d["budget"] = self.budget
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RewardTerm":
        allowed = {"name", "trigger", "value", "terminal", "level", "budget"}
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown reward term key(s): {sorted(extra)}")
        return cls(
            name=str(d["name"]),
            trigger=Trigger(d["trigger"]),
            value=d["value"],
            terminal=bool(d.get("terminal", False)),
            level=Level(d.get("level", "Low")),
            budget=d.get("budget"),
        )


@dataclass(frozen=True)
class RewardSpec:
    case_id: CaseId
    terms: tuple
    max_episode_steps: int

    def __post_init__(self):
        object.__setattr__(self, "case_id", CaseId.parse(self.case_id))
        object.__setattr__(self, "terms", tuple(self.terms))
        if int(self.max_episode_steps) < 1:
            raise ValueError("max_episode_steps must be positive")
        highs = [t for t in self.terms if t.level is Level.HIGH]
        if len(highs) != 1:
            raise ValueError(f"expected exactly one High-level term, found {len(highs)}")
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ValueError("reward term names must be unique")

    def term(self, name: str) -> RewardTerm:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(name)

    def same_terms(self, other: "RewardSpec") -> bool:
        return self.terms == other.terms

    def to_dict(self) -> dict:
        return {
            "case_id": int(self.case_id),
            "max_episode_steps": int(self.max_episode_steps),
            "terms": [t.to_dict() for t in self.terms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardSpec":
        extra = set(d) - {"case_id", "max_episode_steps", "terms"}
        if extra:
            raise ValueError(f"unknown reward spec key(s): {sorted(extra)}")
        return cls(
            case_id=CaseId.parse(d["case_id"]),
            terms=tuple(RewardTerm.from_dict(t) for t in d["terms"]),
            max_episode_steps=int(d["max_episode_steps"]),
        )


@dataclass(frozen=True)
class StepEvents:
    predicates: PredicateSet
    upright_alignment: float
    step_index: int


@dataclass(frozen=True)
class RewardOutcome:
    reward: float
    terminal: bool
    breakdown: dict

    def fired(self, name: str) -> bool:
        return self.breakdown.get(name, 0.0) != 0.0


def evaluate(spec: RewardSpec, events: StepEvents) -> RewardOutcome:
    reward = 0.0
    terminal = events.step_index + 1 >= spec.max_episode_steps
    breakdown = {}
    for term in spec.terms:
        trig = term.trigger
        if trig is Trigger.UPRIGHT_SHAPING:
            contrib = term.value * events.upright_alignment
            fired = False
        elif trig is Trigger.STEP_BUDGET:
            fired = (events.step_index + 1) % term.budget == 0
            contrib = term.value if fired else 0.0
        else:
            fired = getattr(events.predicates, _PREDICATE_OF[trig])
            contrib = term.value if fired else 0.0
        if fired and term.terminal:
            terminal = True
        breakdown[term.name] = contrib
        reward += contrib
    return RewardOutcome(reward, terminal, breakdown)


DEFAULT_MAX_STEPS = {CaseId.CASE1: 3000, CaseId.CASE2: 5000, CaseId.CASE3: 5000}


def _case1_terms():
    return (
        RewardTerm("touch_goal", Trigger.GOAL_TOUCHED, 1.0, terminal=True, level=Level.HIGH),
        RewardTerm("upright", Trigger.UPRIGHT_SHAPING, 3.0),
        RewardTerm("touch_table", Trigger.TABLE_TOUCHED, -1.0),
        RewardTerm("below_table", Trigger.BELOW_TABLE, -1.0, terminal=True),
        RewardTerm("behind_base", Trigger.BEHIND_BASE, -1.0, terminal=True),
        RewardTerm("step_budget", Trigger.STEP_BUDGET, -1.0, budget=300),
    )


def _follow_terms():
    return (
        RewardTerm("touch_goal", Trigger.GOAL_TOUCHED, 10.0, level=Level.HIGH),
        RewardTerm("upright", Trigger.UPRIGHT_SHAPING, 3.0),
        RewardTerm("touch_table", Trigger.TABLE_TOUCHED, -1.0),
        RewardTerm("below_table", Trigger.BELOW_TABLE, -10.0, terminal=True),
        RewardTerm("behind_base", Trigger.BEHIND_BASE, -10.0, terminal=True),
    )


def load_spec(case_id, max_episode_steps: int | None = None) -> RewardSpec:
    """Built-in reward table for a case."""
    case = CaseId.parse(case_id)
    terms = _case1_terms() if case is CaseId.CASE1 else _follow_terms()
    steps = DEFAULT_MAX_STEPS[case] if max_episode_steps is None else max_episode_steps
    return RewardSpec(case, terms, steps)


def reward_bounds(spec: RewardSpec) -> tuple[float, float]:
    """Loosest per-step [min, max] reward: all negatives vs all positives."""
    lo = sum(min(0.0, t.value) for t in spec.terms)
    hi = sum(max(0.0, t.value) for t in spec.terms)
    return lo, hi
