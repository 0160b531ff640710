"""Independent reference implementations used by the tests.

Nothing here imports the code under test except for plain data types.
"""

import itertools
import math

import numpy as np


def reward_table(case: int, goal: bool, table: bool, below: bool, behind: bool, alignment: float, step: int):
    """Per-step (reward, terminal) written straight from the three reward tables."""
    if case == 1:
        r = 0.0
        if goal:
            r += 1.0
        r += 3.0 * alignment
        if table:
            r -= 1.0
        if below:
            r -= 1.0
        if behind:
            r -= 1.0
        if (step + 1) % 300 == 0:
            r -= 1.0
        terminal = goal or below or behind or step + 1 >= 3000
        return r, terminal
    r = 0.0
    if goal:
        r += 10.0
    r += 3.0 * alignment
    if table:
        r -= 1.0
    if below:
        r -= 10.0
    if behind:
        r -= 10.0
    terminal = below or behind or step + 1 >= 5000
    return r, terminal


def brute_force_soft_value(probs, q1, q2, alpha):
    """Soft value of one state by enumerating every joint action.

    ``probs``, ``q1``, ``q2`` are (7, 3). The joint policy is the product of
    the rows; each critic's pessimistic joint value is the branch sum of the
    entrywise minimum.
    """
    q_min = np.minimum(q1, q2)
    n_b = probs.shape[0]
    total = 0.0
    for a in itertools.product(range(3), repeat=n_b):
        p = 1.0
        q = 0.0
        for b, ab in enumerate(a):
            p *= probs[b, ab]
            q += q_min[b, ab]
        if p > 0.0:
            total += p * (q - alpha * math.log(p))
    return total


def softmax_rows(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at flat array ``x`` (modified in place, restored)."""
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2.0 * h)
    return g


def relative_error(a, b) -> float:
    """Norm-based relative error; zero when both vectors vanish."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)
