"""Command-line entry points: ``hapsits train|eval|sweep``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 resource cap exceeded. Every command writes ``manifest.json`` into its
output directory before any computation starts; the manifest is rewritten
at the end with status ``complete`` (all listed artifacts exist) or ``failed``.

Configuration comes from ``--config`` (YAML) and then from environment
variables prefixed ``HAPSITS_`` (nested fields use ``__``, for example
``HAPSITS_RL__LR=1e-3``).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml

from . import __version__, io
from .allocsolver import SolverError
from .config import ConfigError, ScenarioConfig, load_config
from .experiments import CapExceeded, SchemeSpec, ShapeMismatch, evaluate_policy
from .marl import checkpoint
from .marl.checkpoint import CheckpointError
from .marl.learner import TrainingError, train

log = logging.getLogger("hapsits")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAP = 0, 2, 3, 4

# sweep axis name -> SchemeSpec field (values given in the units shown)
AXES = {
    "cache_mbits": ("cache_mbits", 1.0),
    "f_haps_gcps": ("f_haps", 1e9),
    "f_rsu_gcps": ("f_rsu", 1e9),
}


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seeds: List[int]
    schemes: List[Dict]
    out_dir: str
    artifacts: List[str] = field(default_factory=list)
    tool_version: str = __version__
    status: str = "running"

    def write(self) -> Path:
        return io.write_json(Path(self.out_dir) / "manifest.json", dataclasses.asdict(self))

    def finish(self) -> None:
        missing = [a for a in self.artifacts if not (Path(self.out_dir) / a).exists()]
        self.status = "failed" if missing else "complete"
        self.write()


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if getattr(args, "algo", None):
        cfg = cfg.replace(rl={"algo": args.algo})
    return cfg


def _scheme(args, **overrides) -> SchemeSpec:
    spec = dict(policy=args.scheme, allocation=args.alloc, mask=args.mask, handoff=args.handoff,
                fixed_caching=args.fixed_caching)
    if args.cache_mbits is not None:
        spec["cache_mbits"] = args.cache_mbits
    spec.update(overrides)
    return SchemeSpec(**spec)


def cmd_train(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    stem = f"{cfg.rl.algo}_s{args.seed}"
    manifest = RunManifest("train", cfg.config_hash(), [args.seed],
                           [{"algo": cfg.rl.algo, "mask": args.mask, "handoff": args.handoff}], str(out),
                           [f"{stem}.ckpt", f"{stem}_training_log.csv"])
    manifest.write()
    try:
        res = train(cfg, args.seed, mask=args.mask, handoff=args.handoff, epochs=args.epochs, dump_dir=out)
        checkpoint.save(out / f"{stem}.ckpt", res.learner.net,
                        {"algo": cfg.rl.algo, "seed": args.seed, "config_hash": cfg.config_hash(),
                         "prev_action_input": cfg.rl.prev_action_input})
        io.write_csv(out / f"{stem}_training_log.csv", "training_log", res.log)
    finally:
        manifest.finish()
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    scheme = _scheme(args)
    out = Path(args.out)
    manifest = RunManifest("eval", cfg.config_hash(), list(args.seeds), [scheme.to_dict()], str(out),
                           ["slot_delay.csv", "summary.json"])
    manifest.write()
    try:
        bundle = evaluate_policy(args.checkpoint, cfg, args.seeds, scheme, slots=args.slots)
        io.write_csv(out / "slot_delay.csv", "slot_delay", bundle.rows)
        io.write_json(out / "summary.json", bundle.summary())
    finally:
        manifest.finish()
    return EXIT_OK


def _sweep_values(args) -> tuple:
    axis, values = args.axis, list(args.values or [])
    if args.matrix:
        spec = yaml.safe_load(Path(args.matrix).read_text(encoding="utf-8")) or {}
        axis = spec.get("axis", axis)
        values = list(spec.get("values") or [])
    if axis not in AXES:
        raise ConfigError(f"sweep axis must be one of {sorted(AXES)}, got {axis!r}")
    if not values:
        raise ConfigError(f"sweep axis {axis!r} has no values")
    return axis, [float(v) for v in values]


def cmd_sweep(args) -> int:
    cfg = _load(args)
    axis, values = _sweep_values(args)
    field_name, unit = AXES[axis]
    schemes = [_scheme(args, **{field_name: v * unit}) for v in values]
    out = Path(args.out)
    cells = [f"{axis}={v:g}" for v in values]
    manifest = RunManifest("sweep", cfg.config_hash(), list(args.seeds), [s.to_dict() for s in schemes], str(out),
                           [f"slot_delay_{c}.csv" for c in cells] + ["sweep_summary.csv", "summary.json"])
    manifest.write()
    try:
        rows, summaries = [], []
        for cell, value, scheme in zip(cells, values, schemes):
            bundle = evaluate_policy(args.checkpoint, cfg, args.seeds, scheme, slots=args.slots)
            io.write_csv(out / f"slot_delay_{cell}.csv", "slot_delay", bundle.rows)
            ratios = bundle.mode_ratios()
            rows.append({"cell": cell, "axis": axis, "value": value, "scheme": scheme.name,
                         "seeds": " ".join(str(s) for s in args.seeds), "mean_delay_s": bundle.mean_delay,
                         "std_delay_s": bundle.std_delay, "comm_s": bundle.comm_mean, "comp_s": bundle.comp_mean,
                         "ratio_local": ratios["local"], "ratio_haps": ratios["haps"], "ratio_rsu": ratios["rsu"]})
            summaries.append(bundle.summary())
        io.write_csv(out / "sweep_summary.csv", "sweep_summary", rows)
        io.write_json(out / "summary.json", {"axis": axis, "cells": summaries})
    finally:
        manifest.finish()
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="YAML scenario file (defaults if omitted)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--mask", choices=("full", "worsu", "wohaps"), default="full")
    p.add_argument("--handoff", action="store_true", help="mask RSU actions outside RSU range")


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--scheme", choices=("vdn", "iql", "exhaustive", "joint-exhaustive", "random"), default="vdn")
    p.add_argument("--alloc", choices=("opt", "equal"), default="opt")
    p.add_argument("--cache-mbits", type=float, default=None)
    p.add_argument("--fixed-caching", action="store_true", help="prefill caches by popularity, never update")
    p.add_argument("--slots", type=int, default=None, help="slots per seed (default: one episode)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hapsits", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train agents and write a checkpoint plus training log")
    _common(t)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--algo", choices=("vdn", "iql"), default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate one scheme over seeds")
    _common(e)
    _eval_flags(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="evaluate one scheme along a parameter axis")
    _common(s)
    _eval_flags(s)
    s.add_argument("--axis", choices=sorted(AXES), default="cache_mbits")
    s.add_argument("--values", type=float, nargs="*", default=None)
    s.add_argument("--matrix", type=Path, default=None, help="YAML file with 'axis' and 'values'")
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers: Dict[type, int] = {
        ConfigError: EXIT_CONFIG, CheckpointError: EXIT_CONFIG, ShapeMismatch: EXIT_CONFIG,
        io.SchemaError: EXIT_CONFIG, FileNotFoundError: EXIT_CONFIG, yaml.YAMLError: EXIT_CONFIG,
        CapExceeded: EXIT_CAP, SolverError: EXIT_NUMERIC, TrainingError: EXIT_NUMERIC,
        FloatingPointError: EXIT_NUMERIC, ValueError: EXIT_CONFIG,
    }
    try:
        return args.func(args)
    except tuple(handlers) as exc:
        code = next(c for t, c in handlers.items() if isinstance(exc, t))
        print(f"hapsits {args.command}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
