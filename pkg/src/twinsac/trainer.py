"""Environment interaction loop, metrics stream and warm-start transfer."""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from twinsac.checkpoint import Checkpoint
from twinsac.env import ArmEnv, BranchedAction, N_BRANCHES
from twinsac.rewards import CaseId
from twinsac.sac import ReplayBuffer, SacConfig, SacState, greedy_action, sample_action, update

METRICS_HEADER = ("step", "episode", "cum_reward", "episode_length", "value_loss", "policy_loss", "alpha", "entropy")
EPISODE_WINDOW = 20


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    episode: int
    cum_reward: float
    episode_length: float
    value_loss: float
    policy_loss: float
    alpha: float
    entropy: float

    def row(self) -> list:
        return [
            str(self.step),
            str(self.episode),
            repr(self.cum_reward),
            repr(self.episode_length),
            repr(self.value_loss),
            repr(self.policy_loss),
            repr(self.alpha),
            repr(self.entropy),
        ]


def metrics_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for rec in records:
        w.writerow(rec.row())
    return buf.getvalue()


class ShapeMismatch(ValueError):
    """Warm-start checkpoint networks do not fit the configured architecture."""


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else math.nan


def train(
    env: ArmEnv,
    config: SacConfig,
    seed: int,
    init: Checkpoint | None = None,
    digest: bytes = bytes(32),
    metrics_interval: int = 1000,
    total_steps: int | None = None,
    on_record=None,
    stop_when=None,
):
    """Run SAC on ``env``; returns ``(checkpoint, records)``.

    ``on_record`` receives each ``MetricsRecord`` as it is produced. It is a
    one-way sink: nothing it does feeds back into training. ``stop_when`` is
    asked after each record and ends the run early when it returns true; the
    records up to that point are identical to those of a full run.
    """
    total = config.total_steps if total_steps is None else int(total_steps)
    if metrics_interval < 1:
        raise ValueError("metrics_interval must be positive")
    rng = np.random.default_rng(seed)
    sac = SacState.initialize(config, rng)
    if init is not None:
        try:
            sac.warm_start_from(init.sac)
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from None

    buffer = ReplayBuffer(config.buffer_capacity)
    records = []
    returns = deque(maxlen=EPISODE_WINDOW)
    lengths = deque(maxlen=EPISODE_WINDOW)
    losses = []
    episode = 0
    ep_return = 0.0

    state = env.reset(int(rng.integers(2**63)), episode_index=0) if total > 0 else None
    obs = env.observe(state) if state is not None else None

    for t in range(total):
        if t < config.warmup_steps:
            action = tuple(int(a) for a in rng.integers(0, 3, size=N_BRANCHES))
        else:
            action = sample_action(sac.policy, obs, rng)
        state, tr = env.step(state, BranchedAction(action))
        buffer.add(tr.obs, action, tr.reward, tr.next_obs, tr.done)
        ep_return += tr.reward
        obs = tr.next_obs

        if tr.done:
            returns.append(ep_return)
            lengths.append(state.step_index)
            episode += 1
            ep_return = 0.0
            state = env.reset(int(rng.integers(2**63)), episode_index=episode)
            obs = env.observe(state)

        if t >= config.warmup_steps and len(buffer) >= config.batch_size:
            for _ in range(config.updates_per_step):
                losses.append(update(sac, buffer.sample(config.batch_size, rng)))

        if (t + 1) % metrics_interval == 0:
            rec = MetricsRecord(
                step=t + 1,
                episode=episode,
                cum_reward=_mean(returns),
                episode_length=_mean(lengths),
                value_loss=_mean([l.value_loss for l in losses]),
                policy_loss=_mean([l.policy_loss for l in losses]),
                alpha=sac.alpha,
                entropy=_mean([l.entropy for l in losses]),
            )
            losses = []
            records.append(rec)
            if on_record is not None:
                on_record(rec)
            if stop_when is not None and stop_when(rec):
                break

    ckpt = Checkpoint(case_id=env.case_id, sac=sac, digest=digest, rng=rng)
    return ckpt, records


@dataclass(frozen=True)
class EvalReport:
    success_rate: float
    mean_reward: float
    mean_episode_length: float
    episodes: int

    def to_dict(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "mean_reward": self.mean_reward,
            "mean_episode_length": self.mean_episode_length,
            "episodes": self.episodes,
        }


def rollout(env: ArmEnv, policy, seed, greedy: bool = True, max_steps: int | None = None):
    """Yield transitions of one episode under ``policy`` (None = uniform random)."""
    rng = np.random.default_rng(seed)
    state = env.reset(rng)
    obs = env.observe(state)
    n = 0
    while not state.done and (max_steps is None or n < max_steps):
        if policy is None:
            action = tuple(int(a) for a in rng.integers(0, 3, size=N_BRANCHES))
        elif greedy:
            action = greedy_action(policy, obs)
        else:
            action = sample_action(policy, obs, rng)
        state, tr = env.step(state, BranchedAction(action))
        obs = tr.next_obs
        n += 1
        yield tr


def evaluate_policy(env: ArmEnv, policy, episodes: int, seed: int, greedy: bool = True) -> EvalReport:
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    seeds = np.random.SeedSequence(seed).spawn(episodes)
    successes, rewards, lengths = 0, [], []
    for s in seeds:
        total, n, hit = 0.0, 0, False
        for tr in rollout(env, policy, s, greedy=greedy):
            total += tr.reward
            n += 1
            hit = hit or tr.goal_touched
        successes += hit
        rewards.append(total)
        lengths.append(n)
    return EvalReport(successes / episodes, float(np.mean(rewards)), float(np.mean(lengths)), episodes)


def steps_to_threshold(records, threshold: float):
    """First metrics step whose windowed mean episode reward reaches ``threshold``."""
    for rec in records:
        if not math.isnan(rec.cum_reward) and rec.cum_reward >= threshold:
            return rec.step
    return None


__all__ = [
    "CaseId",
    "EvalReport",
    "MetricsRecord",
    "METRICS_HEADER",
    "ShapeMismatch",
    "evaluate_policy",
    "metrics_csv",
    "rollout",
    "steps_to_threshold",
    "train",
]
