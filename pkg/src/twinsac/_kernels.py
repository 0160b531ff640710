"""Numeric kernels with paired numba / numpy implementations.

Chain convention (forward is +y, z is up): base yaw about z, then a column of
pitch joints about the local x axis (positive pitch tilts the next link
toward local +y), and roll joints about the link axis. The elbow carries a
fixed +90 degree pitch so that the zero configuration holds the upper arm
vertical and the forearm horizontal.

``params`` is ``[base_height, upper_arm, forearm_a, forearm_b, wrist, gripper]``.
Output rows are ``[end_effector(3), gripper_mid(3), wrist_axis(3)]``.
"""

import math

import numpy as np

from twinsac._accel import USE_JIT, njit

ELBOW_BEND = 0.5 * math.pi


def _fk_scalar(params, q, out):
    # rotation columns c0, c1, c2 and position p, all in world frame
    r = np.eye(3)
    p = np.zeros(3)

    # base yaw: R = Rz(q0)
    c, s = math.cos(q[0]), math.sin(q[0])
    r[0, 0] = c
    r[1, 0] = s
    r[0, 1] = -s
    r[1, 1] = c
    p[2] += params[0]

    pitches = (q[1], q[2] + ELBOW_BEND)
    lengths = (params[1], params[2])
    for k in range(2):
        c, s = math.cos(pitches[k]), math.sin(pitches[k])
        for i in range(3):
            a = r[i, 1]
            b = r[i, 2]
            r[i, 1] = c * a - s * b
            r[i, 2] = s * a + c * b
        for i in range(3):
            p[i] += lengths[k] * r[i, 2]

    # forearm roll
    c, s = math.cos(q[3]), math.sin(q[3])
    for i in range(3):
        a = r[i, 0]
        b = r[i, 1]
        r[i, 0] = c * a + s * b
        r[i, 1] = -s * a + c * b
    for i in range(3):
        p[i] += params[3] * r[i, 2]

    # wrist pitch
    c, s = math.cos(q[4]), math.sin(q[4])
    for i in range(3):
        a = r[i, 1]
        b = r[i, 2]
        r[i, 1] = c * a - s * b
        r[i, 2] = s * a + c * b
    for i in range(3):
        p[i] += params[4] * r[i, 2]

    # wrist roll does not move the link axis; fold it in for completeness
    c, s = math.cos(q[5]), math.sin(q[5])
    for i in range(3):
        a = r[i, 0]
        b = r[i, 1]
        r[i, 0] = c * a + s * b
        r[i, 1] = -s * a + c * b

    for i in range(3):
        out[i] = p[i]
        out[3 + i] = p[i] + params[5] * r[i, 2]
        out[6 + i] = r[i, 2]


_fk_scalar_jit = njit(_fk_scalar)


@njit
def _fk_batch_jit(params, qs, out):
    for n in range(qs.shape[0]):
        _fk_scalar_jit(params, qs[n], out[n])


def _rz(theta):
    c, s = np.cos(theta), np.sin(theta)
    m = np.zeros(theta.shape + (4, 4))
    m[..., 0, 0] = c
    m[..., 0, 1] = -s
    m[..., 1, 0] = s
    m[..., 1, 1] = c
    m[..., 2, 2] = 1.0
    m[..., 3, 3] = 1.0
    return m


def _pitch(theta):
    c, s = np.cos(theta), np.sin(theta)
    m = np.zeros(theta.shape + (4, 4))
    m[..., 0, 0] = 1.0
    m[..., 1, 1] = c
    m[..., 1, 2] = s
    m[..., 2, 1] = -s
    m[..., 2, 2] = c
    m[..., 3, 3] = 1.0
    return m


def _tz(length, shape):
    m = np.broadcast_to(np.eye(4), shape + (4, 4)).copy()
    m[..., 2, 3] = length
    return m


def fk_batch_numpy(params, qs):
    """Vectorised homogeneous-transform chain over a ``(n, 6)`` batch."""
    qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
    shape = qs.shape[:1]
    t = _rz(qs[:, 0]) @ _tz(params[0], shape)
    t = t @ _pitch(qs[:, 1]) @ _tz(params[1], shape)
    t = t @ _pitch(qs[:, 2] + ELBOW_BEND) @ _tz(params[2], shape)
    t = t @ _rz(qs[:, 3]) @ _tz(params[3], shape)
    t = t @ _pitch(qs[:, 4]) @ _tz(params[4], shape)
    t = t @ _rz(qs[:, 5])
    out = np.empty((qs.shape[0], 9))
    out[:, 0:3] = t[:, :3, 3]
    out[:, 3:6] = t[:, :3, 3] + params[5] * t[:, :3, 2]
    out[:, 6:9] = t[:, :3, 2]
    return out


def fk_batch_jit(params, qs):
    qs = np.ascontiguousarray(np.atleast_2d(qs), dtype=np.float64)
    out = np.empty((qs.shape[0], 9))
    _fk_batch_jit(np.asarray(params, dtype=np.float64), qs, out)
    return out


def fk_single_jit(params, q):
    out = np.empty(9)
    _fk_scalar_jit(params, q, out)
    return out


def fk_single_numpy(params, q):
    return fk_batch_numpy(params, np.asarray(q, dtype=np.float64)[None, :])[0]


@njit
def _log_softmax_rows_jit(logits, out):
    n, k = logits.shape
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > m:
                m = logits[i, j]
        acc = 0.0
        for j in range(k):
            acc += math.exp(logits[i, j] - m)
        lse = m + math.log(acc)
        for j in range(k):
            out[i, j] = logits[i, j] - lse


def log_softmax_numpy(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_softmax_jit(logits):
    dtype = logits.dtype if logits.dtype in (np.float32, np.float64) else np.float64
    flat = np.ascontiguousarray(logits, dtype=dtype).reshape(-1, logits.shape[-1])
    out = np.empty_like(flat)
    _log_softmax_rows_jit(flat, out)
    return out.reshape(logits.shape)


if USE_JIT:
    fk_single = fk_single_jit
    fk_batch = fk_batch_jit
    log_softmax = log_softmax_jit
else:
    fk_single = fk_single_numpy
    fk_batch = fk_batch_numpy
    log_softmax = log_softmax_numpy


@njit
def _adam_step_jit(p, g, m, v, lr, b1, b2, eps, c1, c2):
    for i in range(p.shape[0]):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / c1) / (math.sqrt(vi / c2) + eps)


def adam_step_numpy(p, g, m, v, lr, b1, b2, eps, c1, c2):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@njit
def _polyak_jit(target, source, tau):
    keep = 1.0 - tau
    for i in range(target.shape[0]):
        target[i] = keep * target[i] + tau * source[i]


def polyak_numpy(target, source, tau):
    target *= 1.0 - tau
    target += tau * source


if USE_JIT:
    adam_step = _adam_step_jit
    polyak = _polyak_jit
else:
    adam_step = adam_step_numpy
    polyak = polyak_numpy
