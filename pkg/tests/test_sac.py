import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import brute_force_soft_value, central_difference, relative_error, softmax_rows
from twinsac.nets import DenseNet
from twinsac.sac import (
    LN3,
    MAX_ENTROPY,
    NonFiniteError,
    ReplayBuffer,
    SacConfig,
    SacState,
    alpha_loss_grad,
    branch_distribution,
    critic_loss,
    critic_loss_grad,
    critic_target,
    greedy_action,
    policy_distribution,
    policy_loss,
    policy_loss_grad,
    sample_action,
    sample_from_rows,
    soft_state_value,
    update,
)

TINY = (16, 8, 21)


def _net(rng, sizes=TINY, scale=1.0):
    return DenseNet(sizes, rng, out_scale=scale, dtype=np.float64)


def _constant_policy(logits):
    """Net whose output ignores the input: zero weights, bias = logits."""
    net = DenseNet(TINY, dtype=np.float64)
    net.params[-1][...] = np.asarray(logits, dtype=np.float64).ravel()
    return net


def _batch(rng, n=4):
    return (
        rng.normal(size=(n, 16)),
        rng.integers(0, 3, size=(n, 7)),
        rng.normal(size=n),
        rng.normal(size=(n, 16)),
        (rng.random(n) < 0.3).astype(float),
    )


# --- distributions and sampling ----------------------------------------------------


def test_zero_logits_uniform():
    probs = policy_distribution(_constant_policy(np.zeros(21)), np.zeros(16))
    np.testing.assert_allclose(probs, np.full((7, 3), 1 / 3), atol=1e-15)


def test_shift_invariance_and_normalisation():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(7, 3)) * 5
    shifted = logits.copy()
    shifted[2] += 17.0
    p1, _ = branch_distribution(logits)
    p2, _ = branch_distribution(shifted)
    np.testing.assert_allclose(p1, p2, atol=1e-12)
    big = rng.normal(size=(500, 7, 3)) * 30
    p, _ = branch_distribution(big)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


def test_non_finite_logits_rejected():
    with pytest.raises(NonFiniteError):
        branch_distribution(np.full((7, 3), np.nan))


def test_degenerate_rows_sample_deterministically():
    rows = np.tile([1.0, 0.0, 0.0], (7, 1))
    rng = np.random.default_rng(0)
    assert all(sample_from_rows(rows, rng) == (0,) * 7 for _ in range(500))
    rows = np.tile([0.0, 0.0, 1.0], (7, 1))
    assert all(sample_from_rows(rows, rng) == (2,) * 7 for _ in range(500))


def test_uniform_sampling_frequencies():
    # binomial sd with n = 30000, p = 1/3 is 0.0027, so 0.02 is over 7 sd
    policy = _constant_policy(np.zeros(21))
    rng = np.random.default_rng(123)
    counts = np.zeros((7, 3))
    for _ in range(30_000):
        a = sample_action(policy, np.zeros(16), rng)
        counts[np.arange(7), a] += 1
    assert np.abs(counts / 30_000 - 1 / 3).max() < 0.02


def test_sampling_reproducible():
    policy = _net(np.random.default_rng(1))
    obs = np.random.default_rng(2).normal(size=16)
    a = [sample_action(policy, obs, np.random.default_rng(7)) for _ in range(3)]
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    assert a[0] == a[1] == a[2]
    assert [sample_action(policy, obs, r1) for _ in range(50)] == [sample_action(policy, obs, r2) for _ in range(50)]


def test_greedy_is_argmax():
    logits = np.tile([0.0, 1.0, -1.0], 7)
    logits[3 * 4 + 2] = 5.0
    assert greedy_action(_constant_policy(logits), np.zeros(16)) == (1, 1, 1, 1, 2, 1, 1)


# --- exact soft values -------------------------------------------------------------


def test_uniform_soft_value():
    zero = DenseNet(TINY, dtype=np.float64)
    v = soft_state_value([zero, zero.copy()], _constant_policy(np.zeros(21)), np.zeros((1, 16)), 1.0)
    assert v[0] == pytest.approx(7 * LN3, abs=1e-12)
    assert 7 * LN3 == pytest.approx(7.6902, abs=1e-4)


def test_zero_temperature_deterministic_policy():
    rng = np.random.default_rng(4)
    choice = rng.integers(0, 3, 7)
    logits = np.full((7, 3), -1000.0)
    logits[np.arange(7), choice] = 0.0
    c1, c2 = _net(rng), _net(rng)
    obs = rng.normal(size=(1, 16))
    q = np.minimum(c1.predict(obs), c2.predict(obs)).reshape(7, 3)
    v = soft_state_value([c1, c2], _constant_policy(logits), obs, 0.0)
    assert v[0] == pytest.approx(q[np.arange(7), choice].sum(), abs=1e-12)


def _instance(rng):
    policy, c1, c2 = _net(rng, scale=3.0), _net(rng), _net(rng)
    obs = rng.normal(size=(1, 16))
    alpha = float(rng.uniform(0.0, 2.0))
    probs = softmax_rows(policy.predict(obs).reshape(7, 3))
    return policy, c1, c2, obs, alpha, probs


def test_soft_value_matches_brute_force():
    rng = np.random.default_rng(77)
    for _ in range(20):
        policy, c1, c2, obs, alpha, probs = _instance(rng)
        expected = brute_force_soft_value(probs, c1.predict(obs).reshape(7, 3), c2.predict(obs).reshape(7, 3), alpha)
        got = soft_state_value([c1, c2], policy, obs, alpha)[0]
        assert abs(got - expected) <= 1e-10


def test_critic_target_cases():
    rng = np.random.default_rng(5)
    policy, c1, c2 = _net(rng), _net(rng), _net(rng)
    r = rng.normal(size=6)
    next_obs = rng.normal(size=(6, 16))
    y = critic_target(r, np.ones(6), next_obs, [c1, c2], policy, 0.3, 0.99)
    np.testing.assert_array_equal(y, r)
    y = critic_target(r, np.zeros(6), next_obs, [c1, c2], policy, 0.3, 0.0)
    np.testing.assert_array_equal(y, r)
    y = critic_target(r, np.zeros(6), next_obs, [c1, c2], policy, 0.3, 0.9)
    for i in range(6):
        probs = softmax_rows(policy.predict(next_obs[i : i + 1]).reshape(7, 3))
        q1 = c1.predict(next_obs[i : i + 1]).reshape(7, 3)
        q2 = c2.predict(next_obs[i : i + 1]).reshape(7, 3)
        assert abs(y[i] - (r[i] + 0.9 * brute_force_soft_value(probs, q1, q2, 0.3))) <= 1e-10


# --- gradients -------------------------------------------------------------------


def _check_by_array(net, analytic, numeric, tol=1e-4):
    for a, n in zip(net.grad_list(analytic), net.grad_list(numeric)):
        assert relative_error(a, n) <= tol


@pytest.mark.parametrize("seed", range(5))
def test_critic_gradient_finite_difference(seed):
    rng = np.random.default_rng(seed)
    critic = _net(rng)
    obs, actions, _, _, _ = _batch(rng)
    y = rng.normal(size=4) * 3
    _, grad, _ = critic_loss_grad(critic, obs, actions, y)
    fd = central_difference(lambda: critic_loss(critic, obs, actions, y), critic.flat)
    _check_by_array(critic, grad, fd)


@pytest.mark.parametrize("seed", range(5))
def test_policy_gradient_finite_difference(seed):
    rng = np.random.default_rng(100 + seed)
    policy = _net(rng, scale=2.0)
    obs = rng.normal(size=(4, 16))
    q_min = rng.normal(size=(4, 7, 3))
    alpha = float(rng.uniform(0.05, 1.5))
    _, grad, _, _ = policy_loss_grad(policy, obs, q_min, alpha)
    fd = central_difference(lambda: policy_loss(policy, obs, q_min, alpha), policy.flat)
    _check_by_array(policy, grad, fd)


def test_temperature_gradient_finite_difference():
    rng = np.random.default_rng(3)
    for _ in range(20):
        la, h, target = rng.normal(), rng.uniform(0, MAX_ENTROPY), rng.uniform(0, MAX_ENTROPY)
        _, g = alpha_loss_grad(la, h, target)
        x = np.array([la])
        fd = central_difference(lambda: alpha_loss_grad(x[0], h, target)[0], x)
        assert relative_error([g], fd) <= 1e-4


# --- update -----------------------------------------------------------------------


def _state(rng, **kw):
    return SacState.initialize(SacConfig(hidden=(8,), dtype="float64", **kw), rng)


def test_full_polyak_copies_critics():
    rng = np.random.default_rng(0)
    sac = _state(rng, tau=1.0)
    update(sac, _batch(rng, 8))
    for t, c in zip(sac.target_critics, sac.critics):
        np.testing.assert_array_equal(t.flat, c.flat)


def test_polyak_identity_and_contraction():
    rng = np.random.default_rng(1)
    sac = _state(rng, tau=0.05)
    for _ in range(5):
        update(sac, _batch(rng, 8))
    for _ in range(5):
        before = [t.flat.copy() for t in sac.target_critics]
        update(sac, _batch(rng, 8))
        for old, t, c in zip(before, sac.target_critics, sac.critics):
            np.testing.assert_array_equal(t.flat, (1.0 - 0.05) * old + 0.05 * c.flat)
            assert np.linalg.norm(t.flat - c.flat) <= (1.0 - 0.05) * np.linalg.norm(old - c.flat) * (1 + 1e-12)


def test_temperature_moves_toward_target_entropy():
    rng = np.random.default_rng(2)
    high = _state(rng)
    high.policy.flat[...] = 0.0  # uniform: entropy 7 ln 3 above target
    a0 = high.alpha
    rec = update(high, _batch(rng, 8))
    assert rec.entropy > high.target_entropy and high.alpha < a0

    low = _state(rng)
    low.policy.flat[...] = 0.0
    low.policy.params[-1][...] = np.tile([8.0, 0.0, 0.0], 7)  # near deterministic
    a0 = low.alpha
    rec = update(low, _batch(rng, 8))
    assert rec.entropy < low.target_entropy and low.alpha > a0


def test_non_finite_loss_aborts():
    rng = np.random.default_rng(3)
    sac = _state(rng)
    obs, actions, r, nxt, d = _batch(rng, 8)
    r[0] = np.nan
    snapshot = sac.critics[0].flat.copy()
    with pytest.raises(NonFiniteError):
        update(sac, (obs, actions, r, nxt, d))
    np.testing.assert_array_equal(sac.critics[0].flat, snapshot)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 30.0))
def test_reported_entropy_in_range(seed, scale):
    rng = np.random.default_rng(seed)
    sac = _state(rng)
    sac.policy.params[-2][...] *= scale
    rec = update(sac, _batch(rng, 8))
    assert 0.0 <= rec.entropy <= MAX_ENTROPY


def test_update_losses_are_finite_and_counted():
    rng = np.random.default_rng(4)
    sac = _state(rng)
    rec = update(sac, _batch(rng, 16))
    assert all(math.isfinite(v) for v in (rec.value_loss, rec.policy_loss, rec.alpha_loss, rec.entropy))
    assert sac.global_step == 1


def test_config_validation():
    with pytest.raises(ValueError):
        SacConfig(gamma=1.0)
    with pytest.raises(ValueError):
        SacConfig(tau=0.0)
    with pytest.raises(ValueError):
        SacConfig(dtype="float16")
    assert SacConfig().target_entropy_per_branch == pytest.approx(0.7 * math.log(3))


# --- replay -----------------------------------------------------------------------


def _fill(buf, n):
    for i in range(n):
        buf.add(np.full(16, i, dtype=float), (1,) * 7, float(i), np.zeros(16), False)


def test_replay_ring_overwrites_oldest():
    buf = ReplayBuffer(5)
    _fill(buf, 8)
    assert len(buf) == 5
    assert sorted(buf.rewards.tolist()) == [3.0, 4.0, 5.0, 6.0, 7.0]


def test_replay_sampling_is_uniform():
    buf = ReplayBuffer(1000)
    _fill(buf, 1000)
    idx = buf.sample_indices(100_000, np.random.default_rng(0))
    counts = np.bincount(idx, minlength=1000)
    assert stats.chisquare(counts).pvalue > 0.01


def test_replay_sample_shapes_and_empty():
    buf = ReplayBuffer(10)
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(0))
    _fill(buf, 3)
    obs, actions, r, nxt, d = buf.sample(4, np.random.default_rng(0))
    assert obs.shape == (4, 16) and actions.shape == (4, 7) and r.shape == (4,)
    assert set(r.tolist()) <= {0.0, 1.0, 2.0}
