"""Versioned little-endian checkpoint files.

Layout::

    magic "TWFG" | format_version u32 | case_id u8 | config digest (32 bytes)
    n_arrays u32
    n_arrays x [ n_elements u64 | ndim u32 | dims u32 x ndim | f64 x n_elements ]
    counters: global_step u64 | policy adam t u64 | critic adam t u64 x 2 | alpha adam t u64
    rng: state u128 | inc u128 | has_uint32 u8 | uinteger u32

Arrays appear in declaration order: policy, critic 1, critic 2, target 1,
target 2 (each as W0, b0, W1, b1, ...), log_alpha, then the flat Adam first
and second moment vectors for policy, critic 1 and critic 2, then the
temperature moments.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass

import numpy as np

from twinsac.nets import Adam, DenseNet
from twinsac.rewards import CaseId
from twinsac.sac import SacConfig, SacState

MAGIC = b"TWFG"
FORMAT_VERSION = 1
_MASK64 = (1 << 64) - 1


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint."""


def config_digest(config_json: str) -> bytes:
    return hashlib.sha256(config_json.encode("utf-8")).digest()


@dataclass(eq=False)
class Checkpoint:
    case_id: CaseId
    sac: SacState
    digest: bytes
    rng: np.random.Generator
    format_version: int = FORMAT_VERSION


def _arrays(sac: SacState) -> list:
    nets = [sac.policy] + sac.critics + sac.target_critics
    arrays = [p for net in nets for p in net.params]
    arrays.append(sac.log_alpha)
    for opt in [sac.policy_opt] + sac.critic_opts + [sac.alpha_opt]:
        arrays += [opt.m, opt.v]
    return arrays


def _pack_rng(rng: np.random.Generator) -> bytes:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError(f"unsupported bit generator {st['bit_generator']}")
    s, inc = st["state"]["state"], st["state"]["inc"]
    return struct.pack(
        "<QQQQBI",
        s & _MASK64,
        s >> 64,
        inc & _MASK64,
        inc >> 64,
        int(st["has_uint32"]),
        int(st["uinteger"]),
    )


def _unpack_rng(buf: bytes) -> np.random.Generator:
    s_lo, s_hi, i_lo, i_hi, has, uint = struct.unpack("<QQQQBI", buf)
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": s_lo | (s_hi << 64), "inc": i_lo | (i_hi << 64)},
        "has_uint32": has,
        "uinteger": uint,
    }
    return np.random.Generator(bg)


def dumps(ckpt: Checkpoint) -> bytes:
    if len(ckpt.digest) != 32:
        raise CheckpointError("config digest must be 32 bytes")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<IB", ckpt.format_version, int(ckpt.case_id)))
    out.write(ckpt.digest)
    arrays = _arrays(ckpt.sac)
    out.write(struct.pack("<I", len(arrays)))
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        out.write(struct.pack("<QI", a.size, a.ndim))
        out.write(struct.pack(f"<{a.ndim}I", *a.shape))
        out.write(np.ascontiguousarray(a).tobytes())
    sac = ckpt.sac
    out.write(
        struct.pack(
            "<QQQQQ",
            sac.global_step,
            sac.policy_opt.t,
            sac.critic_opts[0].t,
            sac.critic_opts[1].t,
            sac.alpha_opt.t,
        )
    )
    out.write(_pack_rng(ckpt.rng))
    return out.getvalue()


def save(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes, config: SacConfig | None = None) -> Checkpoint:
    """Parse a checkpoint. Network shapes are taken from the file.

    When ``config`` is given it supplies the hyperparameters; its layer sizes
    must match the stored networks.
    """
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, case = r.unpack("<IB")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        case_id = CaseId(case)
    except ValueError:
        raise CheckpointError(f"bad case id {case}") from None
    digest = r.take(32)
    (n_arrays,) = r.unpack("<I")
    arrays = []
    for _ in range(n_arrays):
        size, ndim = r.unpack("<QI")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        if int(np.prod(shape, dtype=np.int64)) != size:
            raise CheckpointError("array length prefix disagrees with its shape")
        arrays.append(np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape))

    # the policy's layer sizes follow from its weight matrices
    n_per_net = None
    for k in range(2, len(arrays), 2):
        if arrays[k].ndim != 2 or arrays[k].shape[0] != arrays[k - 2].shape[1]:
            n_per_net = k
            break
    if n_per_net is None or n_per_net % 2:
        raise CheckpointError("cannot infer network layout")
    sizes = tuple([arrays[0].shape[0]] + [arrays[k].shape[1] for k in range(0, n_per_net, 2)])
    expected = 5 * n_per_net + 1 + 3 * 2 + 2
    if len(arrays) != expected:
        raise CheckpointError(f"expected {expected} arrays, found {len(arrays)}")
    if config is None:
        config = SacConfig(hidden=sizes[1:-1])
    elif config.layer_sizes != sizes:
        raise CheckpointError(f"checkpoint layers {sizes} do not match config {config.layer_sizes}")

    counters = r.unpack("<QQQQQ")
    rng = _unpack_rng(r.take(struct.calcsize("<QQQQBI")))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint")

    it = iter(arrays)
    dt = config.dtype

    def net():
        n = DenseNet(sizes, dtype=dt)
        n.load([next(it) for _ in range(n_per_net)])
        return n

    def opt(size, t, dtype):
        o = Adam(size, lr=config.lr, dtype=dtype)
        for dst in (o.m, o.v):
            src = next(it)
            if src.shape != dst.shape:
                raise CheckpointError("optimizer moment size mismatch")
            dst[...] = src
        o.t = t
        return o

    try:
        policy = net()
        critics = [net(), net()]
        targets = [net(), net()]
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    log_alpha = next(it).copy()
    if log_alpha.shape != (1,):
        raise CheckpointError("log_alpha must hold one value")
    opts = [opt(policy.size, t, dt) for t in counters[1:4]]
    alpha_opt = opt(1, counters[4], np.float64)

    sac = SacState(
        config=config,
        policy=policy,
        critics=critics,
        target_critics=targets,
        log_alpha=log_alpha,
        policy_opt=opts[0],
        critic_opts=opts[1:],
        alpha_opt=alpha_opt,
        global_step=counters[0],
    )
    return Checkpoint(case_id, sac, digest, rng, version)


def load(path, config: SacConfig | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read(), config)
