"""Command-line entry point: ``twinsac <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error,
3 unreadable or incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys

from twinsac import checkpoint
from twinsac.config import Config, ConfigError
from twinsac.env import write_trace
from twinsac.rewards import CaseId
from twinsac.trainer import METRICS_HEADER, ShapeMismatch, evaluate_policy, rollout, train

EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3

log = logging.getLogger("twinsac")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    return cfg


def _seed(args, cfg: Config) -> int:
    return cfg.seed if args.seed is None else args.seed


def _case(value) -> CaseId:
    try:
        return CaseId.parse(value)
    except ValueError:
        raise CliError(f"unknown case {value!r}; expected 1, 2 or 3", EXIT_CONFIG) from None


def _load_checkpoint(path, cfg: Config | None = None) -> checkpoint.Checkpoint:
    try:
        return checkpoint.load(path, cfg.sac if cfg is not None else None)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint: {exc}", EXIT_CHECKPOINT) from None
    except checkpoint.CheckpointError as exc:
        raise CliError(f"bad checkpoint {path}: {exc}", EXIT_CHECKPOINT) from None


def cmd_train(args) -> int:
    case = _case(args.case)
    if case is CaseId.CASE3 and args.init:
        raise CliError(
            "case 3 is defined as Case 2 without transfer learning; --init is not allowed "
            "(use --case 2 to fine-tune from a checkpoint)",
            EXIT_CONFIG,
        )
    cfg = _config(args)
    seed = _seed(args, cfg)
    if args.steps is not None and args.steps < 0:
        raise CliError("--steps must be non-negative", EXIT_CONFIG)
    init = _load_checkpoint(args.init, cfg) if args.init else None
    env = cfg.make_env(case)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    ckpt_path = os.path.join(args.out, "checkpoint.twfg")

    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)

        def sink(rec):
            writer.writerow(rec.row())
            fh.flush()
            if not args.quiet:
                print(
                    f"step {rec.step} episode {rec.episode} reward {rec.cum_reward:.2f} "
                    f"alpha {rec.alpha:.4f} entropy {rec.entropy:.3f}",
                    file=sys.stderr,
                )

        try:
            ckpt, _ = train(
                env,
                cfg.sac,
                seed,
                init=init,
                digest=cfg.digest(),
                metrics_interval=cfg.metrics_interval,
                total_steps=args.steps,
                on_record=sink,
            )
        except ShapeMismatch as exc:
            raise CliError(f"--init checkpoint does not fit the configured networks: {exc}", EXIT_CHECKPOINT) from None
    checkpoint.save(ckpt_path, ckpt)
    print(json.dumps({"checkpoint": ckpt_path, "metrics": metrics_path, "updates": ckpt.sac.global_step}))
    return 0


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise CliError("--episodes must be at least 1", EXIT_CONFIG)
    cfg = _config(args)
    ckpt = _load_checkpoint(args.checkpoint, cfg)
    case = _case(args.case) if args.case is not None else ckpt.case_id
    report = evaluate_policy(cfg.make_env(case), ckpt.sac.policy, args.episodes, _seed(args, cfg))
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def _policy_source(args, cfg: Config):
    """Returns (env, policy) for rollout-style commands; policy None means random."""
    if args.checkpoint:
        ckpt = _load_checkpoint(args.checkpoint, cfg)
        case = _case(args.case) if args.case is not None else ckpt.case_id
        return cfg.make_env(case), ckpt.sac.policy
    return cfg.make_env(_case(args.case if args.case is not None else 1)), None


def cmd_rollout(args) -> int:
    cfg = _config(args)
    env, policy = _policy_source(args, cfg)
    n = write_trace(args.out, rollout(env, policy, _seed(args, cfg), greedy=not args.sample, max_steps=args.max_steps))
    print(json.dumps({"trace": args.out, "transitions": n}))
    return 0


def cmd_twin_serve(args) -> int:
    from twinsac.env import read_trace
    from twinsac.twinlink import parse_address, publish

    cfg = _config(args)
    if bool(args.trace) == bool(args.checkpoint):
        raise CliError("give exactly one of --trace or --checkpoint", EXIT_CONFIG)
    if args.trace:
        try:
            source = [tr.q.as_array() for tr in read_trace(args.trace)]
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot read trace: {exc}", EXIT_CONFIG) from None
    else:
        env, policy = _policy_source(args, cfg)
        source = (tr.q.as_array() for tr in rollout(env, policy, _seed(args, cfg), max_steps=args.max_steps))
    bind = parse_address(args.bind or cfg.twin.bind)

    def listening(addr):
        print(f"listening on {addr[0]}:{addr[1]}", file=sys.stderr, flush=True)

    summary = publish(
        source,
        bind,
        rate_hz=args.rate_hz or cfg.twin.rate_hz,
        budget_ms=cfg.twin.budget_ms,
        accept_timeout=cfg.twin.accept_timeout,
        on_listening=listening,
    )
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return 0


def cmd_twin_follow(args) -> int:
    from twinsac.twinlink import follow, parse_address

    cfg = _config(args)
    report = follow(parse_address(args.connect or cfg.twin.connect), cfg.arm, connect_timeout=args.timeout)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def _percent(v: float, peak: float) -> float:
    if not math.isfinite(v):
        return v
    return 100.0 * v / peak if peak > 0 else 0.0


def _normalize(text: str) -> str:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != METRICS_HEADER:
        raise CliError(f"metrics CSV header must be {','.join(METRICS_HEADER)}", EXIT_CONFIG)
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(METRICS_HEADER):
            raise CliError(f"line {i}: expected {len(METRICS_HEADER)} fields, got {len(row)}", EXIT_CONFIG)
        try:
            data.append([float(v) for v in row])
        except ValueError:
            raise CliError(f"line {i}: non-numeric field", EXIT_CONFIG) from None
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    # step and episode are the axis, not series
    peaks = []
    for j in range(len(METRICS_HEADER)):
        finite = [abs(r[j]) for r in data if math.isfinite(r[j])]
        peaks.append(max(finite) if finite else 0.0)
    for raw, vals in zip(rows[1:], data):
        cells = raw[:2]
        for j in range(2, len(METRICS_HEADER)):
            cells.append(repr(_percent(vals[j], peaks[j])))
        w.writerow(cells)
    return out.getvalue()


def cmd_metrics(args) -> int:
    try:
        with open(args.csv, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read metrics: {exc}", EXIT_CONFIG) from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise CliError("metrics CSV is not UTF-8", EXIT_CONFIG) from None
    normalized = _normalize(text)  # validates even when passing through
    out = normalized.encode("utf-8") if args.normalize_peak else raw
    sys.stdout.buffer.write(out)
    sys.stdout.flush()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twinsac", description="Branched discrete SAC arm training and twin-link tools.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON config file (defaults if omitted)")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")

    t = sub.add_parser("train", help="train an agent")
    common(t)
    t.add_argument("--case", required=True)
    t.add_argument("--out", default="runs/latest")
    t.add_argument("--init", help="warm-start checkpoint (case 2 transfer)")
    t.add_argument("--steps", type=int, default=None, help="overrides sac.total_steps")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=50)
    e.add_argument("--case", default=None, help="defaults to the checkpoint's case")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="export one episode as a JSON-lines trace")
    common(r)
    r.add_argument("--checkpoint", help="policy to roll out (uniform random if omitted)")
    r.add_argument("--case", default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--sample", action="store_true", help="sample actions instead of argmax")
    r.add_argument("--max-steps", type=int, default=None)
    r.set_defaults(func=cmd_rollout)

    s = sub.add_parser("twin-serve", help="publish joint states to one follower")
    common(s)
    s.add_argument("--trace")
    s.add_argument("--checkpoint")
    s.add_argument("--case", default=None)
    s.add_argument("--bind", default=None, help="host:port (config twin.bind)")
    s.add_argument("--rate-hz", type=float, default=None)
    s.add_argument("--max-steps", type=int, default=None)
    s.set_defaults(func=cmd_twin_serve)

    f = sub.add_parser("twin-follow", help="mirror a publisher onto a local arm replica")
    common(f, seed=False)
    f.add_argument("--connect", default=None, help="host:port (config twin.connect)")
    f.add_argument("--timeout", type=float, default=5.0)
    f.set_defaults(func=cmd_twin_follow)

    m = sub.add_parser("metrics", help="print a metrics CSV, optionally rescaled to percent of peak")
    m.add_argument("csv")
    m.add_argument("--normalize-peak", action="store_true")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"twinsac: error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"twinsac: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except checkpoint.CheckpointError as exc:
        print(f"twinsac: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # runtime failure, reported rather than traced
        log.debug("unhandled", exc_info=True)
        print(f"twinsac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
