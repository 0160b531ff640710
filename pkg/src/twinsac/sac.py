"""Discrete soft actor-critic over a branched (7 x 3) action space.

The policy factorises into independent categoricals, one per branch. Critics
are branch-decomposed: the value of a joint action is the sum of the selected
per-branch entries. Under that decomposition every expectation over the
3**7 joint actions collapses to per-branch sums, so the soft value, policy
loss and entropy are computed exactly, with no action sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from twinsac import _kernels
from twinsac.env import N_BRANCHES, N_OPTIONS, OBS_DIM
from twinsac.nets import Adam, DenseNet

LN3 = math.log(3.0)
MAX_ENTROPY = N_BRANCHES * LN3


class NonFiniteError(FloatingPointError):
    """A loss, logit or gradient became NaN or infinite."""


@dataclass(frozen=True)
class SacConfig:
    hidden: tuple = (128, 128)
    lr: float = 3e-4
    batch_size: int = 256
    gamma: float = 0.99
    tau: float = 0.005
    target_entropy_ratio: float = 0.7
    init_alpha: float = 1.0
    buffer_capacity: int = 200_000
    warmup_steps: int = 1000
    updates_per_step: int = 1
    total_steps: int = 200_000
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.init_alpha <= 0:
            raise ValueError("init_alpha must be positive")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def layer_sizes(self) -> tuple:
        return (OBS_DIM,) + self.hidden + (N_BRANCHES * N_OPTIONS,)

    @property
    def target_entropy_per_branch(self) -> float:
        return self.target_entropy_ratio * LN3


def branch_distribution(logits: np.ndarray):
    """Per-branch softmax of ``(..., 7, 3)`` logits; returns ``(probs, log_probs)``."""
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite policy logits")
    logp = _kernels.log_softmax(logits)
    return np.exp(logp), logp


def policy_distribution(policy: DenseNet, obs: np.ndarray) -> np.ndarray:
    """7 x 3 probability rows (or ``(B, 7, 3)`` for a batch)."""
    obs = np.asarray(obs, dtype=np.float64)
    logits = policy.predict(np.atleast_2d(obs)).reshape(-1, N_BRANCHES, N_OPTIONS)
    probs, _ = branch_distribution(logits)
    return probs[0] if obs.ndim == 1 else probs


def sample_from_rows(probs: np.ndarray, rng: np.random.Generator) -> tuple:
    u = rng.random(N_BRANCHES)
    cdf = np.cumsum(probs, axis=-1)
    idx = (u[:, None] >= cdf[:, :-1]).sum(axis=-1)
    return tuple(int(i) for i in idx)


def sample_action(policy: DenseNet, obs: np.ndarray, rng: np.random.Generator) -> tuple:
    return sample_from_rows(policy_distribution(policy, obs), rng)


def greedy_action(policy: DenseNet, obs: np.ndarray) -> tuple:
    logits = policy.predict(np.atleast_2d(obs)).reshape(N_BRANCHES, N_OPTIONS)
    return tuple(int(i) for i in np.argmax(logits, axis=-1))


def entropy(probs: np.ndarray, logp: np.ndarray) -> np.ndarray:
    """Joint entropy of the factorised policy, per batch item."""
    return -(probs * logp).sum(axis=(-1, -2))


def soft_value(q_min: np.ndarray, probs: np.ndarray, logp: np.ndarray, alpha: float) -> np.ndarray:
    """V(s) = sum_b sum_a pi_b(a) (Q_b(a) - alpha log pi_b(a)), per batch item."""
    return (probs * (q_min - alpha * logp)).sum(axis=(-1, -2))


def _q_table(net: DenseNet, obs: np.ndarray) -> np.ndarray:
    return net.predict(obs).reshape(-1, N_BRANCHES, N_OPTIONS)


def soft_state_value(critics, policy: DenseNet, obs: np.ndarray, alpha: float) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    q_min = np.minimum(_q_table(critics[0], obs), _q_table(critics[1], obs))
    probs, logp = branch_distribution(policy.predict(obs).reshape(-1, N_BRANCHES, N_OPTIONS))
    return soft_value(q_min, probs, logp, alpha)


def critic_target(rewards, dones, next_obs, target_critics, policy, alpha, gamma) -> np.ndarray:
    v_next = soft_state_value(target_critics, policy, next_obs, alpha)
    return np.asarray(rewards, dtype=np.float64) + gamma * (1.0 - np.asarray(dones, dtype=np.float64)) * v_next


def selected_sum(q: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Joint Q: sum over branches of the entry chosen by each action."""
    return np.take_along_axis(q, actions[:, :, None], axis=-1)[..., 0].sum(axis=-1)


# --- losses with analytic gradients -------------------------------------------------


def critic_loss_grad(critic: DenseNet, obs, actions, y):
    """Mean squared error of the joint Q against targets ``y``."""
    out, cache = critic.forward(obs)
    q = out.reshape(-1, N_BRANCHES, N_OPTIONS)
    err = selected_sum(q, actions) - y
    loss = float(np.mean(err * err))
    dq = np.zeros_like(q)
    np.put_along_axis(dq, actions[:, :, None], (2.0 / len(y)) * err[:, None, None], axis=-1)
    grad = critic.backward(cache, dq.reshape(out.shape))
    return loss, grad, q


def critic_loss(critic: DenseNet, obs, actions, y) -> float:
    q = _q_table(critic, obs)
    err = selected_sum(q, actions) - y
    return float(np.mean(err * err))


def policy_loss_grad(policy: DenseNet, obs, q_min, alpha):
    """E_s sum_b E_{a ~ pi_b}[alpha log pi_b(a) - Q_b(a)], exact over the 3 options."""
    out, cache = policy.forward(obs)
    probs, logp = branch_distribution(out.reshape(-1, N_BRANCHES, N_OPTIONS))
    f = alpha * logp - q_min
    per_item = (probs * f).sum(axis=(-1, -2))
    loss = float(per_item.mean())
    # d/dz_k sum_a pi_a f_a = pi_k (f_k - E_pi f); the alpha log-term's own derivative cancels
    dz = probs * (f - (probs * f).sum(axis=-1, keepdims=True)) / len(obs)
    grad = policy.backward(cache, dz.reshape(out.shape))
    return loss, grad, probs, logp


def policy_loss(policy: DenseNet, obs, q_min, alpha) -> float:
    probs, logp = branch_distribution(policy.predict(obs).reshape(-1, N_BRANCHES, N_OPTIONS))
    return float(((probs * (alpha * logp - q_min)).sum(axis=(-1, -2))).mean())


def alpha_loss_grad(log_alpha: float, mean_entropy: float, target_entropy: float):
    """Surrogate ``log_alpha * (H - H_target)``; gradient ``H - H_target``."""
    gap = mean_entropy - target_entropy
    return log_alpha * gap, gap


# --- state --------------------------------------------------------------------------


@dataclass
class LossRecord:
    value_loss: float
    policy_loss: float
    alpha_loss: float
    entropy: float
    alpha: float


@dataclass(eq=False)
class SacState:
    config: SacConfig
    policy: DenseNet
    critics: list
    target_critics: list
    log_alpha: np.ndarray  # shape (1,), float64
    policy_opt: Adam
    critic_opts: list
    alpha_opt: Adam
    global_step: int = 0
    gamma: float = field(init=False)
    tau: float = field(init=False)
    target_entropy_per_branch: float = field(init=False)

    def __post_init__(self):
        self.gamma = self.config.gamma
        self.tau = self.config.tau
        self.target_entropy_per_branch = self.config.target_entropy_per_branch

    @classmethod
    def initialize(cls, config: SacConfig, rng: np.random.Generator) -> "SacState":
        sizes, dt = config.layer_sizes, config.dtype
        policy = DenseNet(sizes, rng, out_scale=0.01, dtype=dt)
        critics = [DenseNet(sizes, rng, dtype=dt) for _ in range(2)]
        targets = [c.copy() for c in critics]
        log_alpha = np.array([math.log(config.init_alpha)])
        n = policy.size
        return cls(
            config=config,
            policy=policy,
            critics=critics,
            target_critics=targets,
            log_alpha=log_alpha,
            policy_opt=Adam(n, lr=config.lr, dtype=dt),
            critic_opts=[Adam(n, lr=config.lr, dtype=dt) for _ in range(2)],
            alpha_opt=Adam(1, lr=config.lr),
        )

    @property
    def alpha(self) -> float:
        return math.exp(float(self.log_alpha[0]))

    @property
    def target_entropy(self) -> float:
        return N_BRANCHES * self.target_entropy_per_branch

    def warm_start_from(self, other: "SacState") -> None:
        """Copy network weights only; optimisers, temperature and step count stay fresh."""
        for dst, src in [(self.policy, other.policy)] + list(zip(self.critics, other.critics)) + list(
            zip(self.target_critics, other.target_critics)
        ):
            if dst.layer_sizes != src.layer_sizes:
                raise ValueError(f"network shape mismatch: {src.layer_sizes} vs {dst.layer_sizes}")
            dst.flat[...] = src.flat


def polyak(target: DenseNet, source: DenseNet, tau: float) -> None:
    _kernels.polyak(target.flat, source.flat, tau)


def update(sac: SacState, batch) -> LossRecord:
    """One gradient step on both critics, the policy and the temperature."""
    obs, actions, rewards, next_obs, dones = batch
    alpha = sac.alpha

    y = critic_target(rewards, dones, next_obs, sac.target_critics, sac.policy, alpha, sac.gamma)

    losses, grads, qs = [], [], []
    for critic in sac.critics:
        loss, g, q = critic_loss_grad(critic, obs, actions, y)
        losses.append(loss)
        grads.append(g)
        qs.append(q)
    q_min = np.minimum(qs[0], qs[1])
    p_loss, p_grads, probs, logp = policy_loss_grad(sac.policy, obs, q_min, alpha)
    h = float(entropy(probs, logp).mean())
    a_loss, a_grad = alpha_loss_grad(float(sac.log_alpha[0]), h, sac.target_entropy)

    for value in losses + [p_loss, a_loss]:
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite loss (critic={losses}, policy={p_loss}, alpha={a_loss})")

    for critic, opt, g in zip(sac.critics, sac.critic_opts, grads):
        opt.step(critic.flat, g)
    sac.policy_opt.step(sac.policy.flat, p_grads)
    sac.alpha_opt.step(sac.log_alpha, np.array([a_grad]))
    for target, critic in zip(sac.target_critics, sac.critics):
        polyak(target, critic, sac.tau)
    sac.global_step += 1

    return LossRecord(
        value_loss=0.5 * (losses[0] + losses[1]),
        policy_loss=p_loss,
        alpha_loss=a_loss,
        entropy=min(max(h, 0.0), MAX_ENTROPY),
        alpha=alpha,
    )


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, N_BRANCHES), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward, next_obs, done) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = self.sample_indices(batch_size, rng)
        return (self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx])
