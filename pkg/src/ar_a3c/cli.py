"""Command-line entry point: ``ar-a3c {train,eval,attack-sweep,clog-sweep,impulse,trace,show-checkpoint}``.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
4 I/O error, 5 unusable checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ar_a3c import evaluation as ev
from ar_a3c.checkpoint import (
    Checkpoint,
    atomic_write,
    check_shapes,
    config_from_dict,
    config_to_dict,
    load_checkpoint,
    load_config,
    save_checkpoint,
    timestamp,
)
from ar_a3c.dynamics import CLOG_MASSES, ImpulseSchedule
from ar_a3c.errors import CheckpointError, ConfigError, DivergenceError
from ar_a3c.trainer import TrainConfig, train

log = logging.getLogger("ar_a3c")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_CHECKPOINT = 0, 2, 3, 4, 5

CURVE_HEADER = ("episode", "worker", "reward", "wallclock_s")
SWEEP_HEADER = ("sweep_value", "seed", "episode", "reward")
SUMMARY_HEADER = ("policy", "sweep_value", "mean", "std", "n_episodes")
SCHEMA_VERSION = 1


def csv_text(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def curve_rows(curve) -> list:
    return [CURVE_HEADER] + [tuple(rec) for rec in curve]


def sweep_rows(report: ev.EvalReport) -> list:
    rows = [SWEEP_HEADER]
    for point in report.points:
        for seed, rewards in point.per_seed().items():
            rows.extend((point.value, seed, k, r) for k, r in enumerate(rewards))
    return rows


def summary_rows(reports: Sequence[ev.EvalReport]) -> list:
    rows = [SUMMARY_HEADER]
    for report in reports:
        rows.extend((report.policy_id, p.value, p.mean, p.std, p.n_episodes) for p in report.points)
    return rows


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def _parse_set(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def effective_config(args, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Defaults (or ``base``) <- --config file <- --set pairs <- named flags <- AR_A3C_THREADS."""
    config = base or TrainConfig()
    if getattr(args, "config", None):
        file_cfg = load_config(args.config)
        config = config_from_dict(config_to_dict(file_cfg), config) if base else file_cfg
    overrides = _parse_set(getattr(args, "set", None))
    for flag in ("seed", "algo", "workers", "episodes", "difficulty"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    threads = os.environ.get("AR_A3C_THREADS")
    if threads:
        overrides["workers"] = threads
    return config_from_dict(overrides, config) if overrides else config


def source_revision() -> Optional[str]:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, argv, config: Optional[TrainConfig], outputs: dict, inputs=()) -> Path:
    body = {
        "command": command,
        "argv": list(argv),
        "config": config_to_dict(config) if config is not None else None,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "csv_schema_version": SCHEMA_VERSION,
        "source_revision": source_revision(),
        "created": timestamp(),
    }
    body["run_id"] = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]
    path = out_dir / f"manifest-{command}.json"
    atomic_write(path, json.dumps(body, indent=1) + "\n")
    return path


def _frozen_clock() -> float:
    return 0.0


def cmd_train(args) -> int:
    out = Path(args.out)
    store = None
    inputs = []
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        config = effective_config(args, ckpt.config)
        check_shapes(ckpt, config)
        store = ckpt.to_store()
        inputs.append(args.resume)
    else:
        config = effective_config(args)
    clock = _frozen_clock if os.environ.get("SOURCE_DATE_EPOCH") else time.perf_counter
    log.info("training %s: %d episodes, %d workers, seed %d", config.algo, config.episodes, config.workers, config.seed)
    store, curve = train(config, store, clock=clock)
    ckpt_path = out / "checkpoint.json"
    curve_path = out / "curve.csv"
    save_checkpoint(ckpt_path, Checkpoint.from_store(store, config))
    atomic_write(curve_path, csv_text(curve_rows(curve[-config.episodes :])))
    write_manifest(out, "train", args.argv, config, {"checkpoint": ckpt_path, "curve": curve_path}, inputs)
    tail = [rec.reward for rec in curve[-max(1, len(curve) // 10) :]]
    print(f"trained {store.episode_count} episodes; last-10% mean reward {np.mean(tail):.1f}; wrote {ckpt_path}")
    return EXIT_OK


def _policy_args(specs: Sequence[str], expected: TrainConfig) -> dict:
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            path = spec
            p = Path(spec)
            name = p.parent.name if p.stem == "checkpoint" and p.parent.name else p.stem
        out[name] = (load_checkpoint(path, expected), path)
    return out


def _adversary(args, expected, policies: dict):
    if args.adversary:
        return load_checkpoint(args.adversary, expected).adversary, [args.adversary]
    for ckpt, path in policies.values():
        if ckpt.config.adversarial:
            return ckpt.adversary, []
    raise ConfigError("--kind trained_adversary needs --adversary CKPT or an ar_a3c policy checkpoint")


def _eval_common(args):
    config = effective_config(args)
    policies = _policy_args(args.policy, config)
    seeds = _ints(args.seeds)
    return config, policies, seeds


def _run_attack(args, command: str, magnitudes) -> int:
    config, policies, seeds = _eval_common(args)
    adversary, extra = (None, [])
    if args.kind == "trained_adversary":
        adversary, extra = _adversary(args, config, policies)
    out = Path(args.out)
    outputs, reports = {}, []
    for name, (ckpt, _) in policies.items():
        report = ev.attack_sweep(
            ckpt.protagonist, args.kind, magnitudes, adversary, config.env, seeds, args.episodes_per_seed, name,
            deterministic=not args.sample,
        )
        reports.append(report)
        path = out / f"{command}_{name}.csv"
        atomic_write(path, csv_text(sweep_rows(report)))
        outputs[name] = path
    summary = out / f"{command}_summary.csv"
    atomic_write(summary, csv_text(summary_rows(reports)))
    outputs["summary"] = summary
    write_manifest(out, command, args.argv, config, outputs, [p for _, p in policies.values()] + extra)
    sys.stdout.write(csv_text(summary_rows(reports)))
    return EXIT_OK


def cmd_eval(args) -> int:
    return _run_attack(args, "eval", [args.magnitude])


def cmd_attack_sweep(args) -> int:
    return _run_attack(args, "attack-sweep", _floats(args.magnitudes))


def cmd_clog_sweep(args) -> int:
    config, policies, seeds = _eval_common(args)
    clogs = _floats(args.clogs)
    reports = ev.clog_sweep(
        {name: ckpt.protagonist for name, (ckpt, _) in policies.items()},
        clogs, config.env, seeds, args.episodes_per_seed, deterministic=not args.sample,
    )
    out = Path(args.out)
    outputs = {}
    for name, report in reports.items():
        path = out / f"clog-sweep_{name}.csv"
        atomic_write(path, csv_text(sweep_rows(report)))
        outputs[name] = path
    summary = out / "clog-sweep_summary.csv"
    atomic_write(summary, csv_text(summary_rows(list(reports.values()))))
    outputs["summary"] = summary
    write_manifest(out, "clog-sweep", args.argv, config, outputs, [p for _, p in policies.values()])
    sys.stdout.write(csv_text(summary_rows(list(reports.values()))))
    return EXIT_OK


def cmd_impulse(args) -> int:
    config, policies, _ = _eval_common(args)
    impulse = ImpulseSchedule(args.at, args.duration, args.torque)
    out = Path(args.out)
    outputs = {}
    for name, (ckpt, _) in policies.items():
        rng = np.random.default_rng(config.seed)
        trace = ev.impulse_trace(ckpt.protagonist, impulse, args.steps, config.env, rng)
        path = out / f"impulse_{name}.csv"
        atomic_write(path, csv_text(ev.export_trace(trace)))
        outputs[name] = path
        rec = ev.recovery_time(trace, impulse)
        print(f"{name}: recovery {'never' if rec is None else f'{rec} steps'} after the impulse; wrote {path}")
    write_manifest(out, "impulse", args.argv, config, outputs, [p for _, p in policies.values()])
    return EXIT_OK


def cmd_trace(args) -> int:
    config, policies, _ = _eval_common(args)
    out = Path(args.out)
    outputs, extra = {}, []
    for name, (ckpt, _) in policies.items():
        attack = ev.NO_ATTACK
        if args.kind != "none":
            adversary = None
            if args.kind == "trained_adversary":
                adversary, extra = _adversary(args, config, {name: policies[name]})
            magnitude = args.magnitude if args.magnitude is not None else (
                adversary.action_scale if adversary is not None else config.difficulty * config.env.max_torque
            )
            attack = ev.Attack(args.kind, magnitude, adversary)
        rng = np.random.default_rng(config.seed)
        trace = ev.run_trace(ckpt.protagonist, config.env, args.steps, rng, attack, deterministic=not args.sample)
        path = out / f"trace_{name}.csv"
        atomic_write(path, csv_text(ev.export_trace(trace)))
        outputs[name] = path
        print(f"{name}: {len(trace)} steps, {len(ev.same_sign_steps(trace))} near-upright steps with a same-sign adversary; wrote {path}")
    write_manifest(out, "trace", args.argv, config, outputs, [p for _, p in policies.values()] + extra)
    return EXIT_OK


def cmd_show_checkpoint(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    info = {
        "format_version": ckpt.format_version,
        "created": ckpt.created,
        "episode_count": ckpt.episode_count,
        "algo": ckpt.config.algo,
        "difficulty": ckpt.config.difficulty,
        "seed": ckpt.seed,
        "protagonist": {"actor": list(ckpt.protagonist.actor.sizes), "critic": list(ckpt.protagonist.critic.sizes), "action_scale": ckpt.protagonist.action_scale},
        "adversary": {"actor": list(ckpt.adversary.actor.sizes), "critic": list(ckpt.adversary.critic.sizes), "action_scale": ckpt.adversary.action_scale},
        "config": config_to_dict(ckpt.config),
    }
    print(json.dumps(info, indent=1))
    return EXIT_OK


def _common(p: argparse.ArgumentParser, out_default: str = "runs") -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config file with a flat key set")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=out_default, metavar="DIR")
    p.add_argument("--algo", choices=("a3c", "ar-a3c", "ar_a3c"))
    p.add_argument("--workers", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--difficulty", type=float)
    p.add_argument("-v", "--verbose", action="store_true")


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", action="append", required=True, metavar="[NAME=]CKPT", help="policy checkpoint (repeatable)")
    p.add_argument("--seeds", default=",".join(map(str, ev.DEFAULT_SEEDS)))
    p.add_argument("--episodes-per-seed", type=int, default=ev.EPISODES_PER_SEED)
    p.add_argument("--sample", action="store_true", help="sample actions instead of using the policy mean")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ar-a3c", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a3c or ar-a3c and write a checkpoint + curve CSV")
    _common(p)
    p.add_argument("--resume", metavar="CKPT", help="continue training from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate policies at one attack setting")
    _common(p)
    _eval_flags(p)
    p.add_argument("--kind", choices=ev.ATTACK_KINDS, default="none")
    p.add_argument("--magnitude", type=float, default=0.0)
    p.add_argument("--adversary", metavar="CKPT")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack-sweep", help="reward versus adversary magnitude")
    _common(p)
    _eval_flags(p)
    p.add_argument("--kind", choices=ev.ATTACK_KINDS, default="trained_adversary")
    p.add_argument("--magnitudes", default="0,0.5,1.0,1.5,2.0")
    p.add_argument("--adversary", metavar="CKPT")
    p.set_defaults(func=cmd_attack_sweep)

    p = sub.add_parser("clog-sweep", help="reward versus tip mass")
    _common(p)
    _eval_flags(p)
    p.add_argument("--clogs", default=",".join(map(str, (0.0,) + CLOG_MASSES)))
    p.set_defaults(func=cmd_clog_sweep)

    p = sub.add_parser("impulse", help="trace a run with a timed external impact")
    _common(p)
    _eval_flags(p)
    p.add_argument("--at", type=int, default=300)
    p.add_argument("--duration", type=int, default=5)
    p.add_argument("--torque", type=float, default=10.0)
    p.add_argument("--steps", type=int, default=1000)
    p.set_defaults(func=cmd_impulse)

    p = sub.add_parser("trace", help="per-timestep trajectory with an optional adversary")
    _common(p)
    _eval_flags(p)
    p.add_argument("--kind", choices=ev.ATTACK_KINDS, default="trained_adversary")
    p.add_argument("--magnitude", type=float)
    p.add_argument("--adversary", metavar="CKPT")
    p.add_argument("--steps", type=int, default=200)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("show-checkpoint", help="print a checkpoint summary")
    p.add_argument("checkpoint")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_show_checkpoint)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
