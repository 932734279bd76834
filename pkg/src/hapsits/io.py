"""Versioned CSV and JSON output.

Every CSV starts with a comment line ``# hapsits-schema: <name> <major>.<minor>``
followed by a header row in the fixed column order below. Readers accept any
minor version of a known major version and reject everything else.

slot_delay 1.0
    run_id, slot, cav, mode, comm_s, comp_s, total_s
training_log 1.0
    epoch, env_steps, mean_episode_reward, mean_delay_s, loss, epsilon,
    ratio_local, ratio_haps, ratio_rsu
alloc_trace 1.0
    iteration, eta, sum_b, objective
sweep_summary 1.0
    cell, axis, value, scheme, seeds, mean_delay_s, std_delay_s, comm_s, comp_s,
    ratio_local, ratio_haps, ratio_rsu

Wall-clock solving times are not deterministic, so they go to the JSON
summary only and never into a CSV.

Floats are written with ``repr`` so a file round-trips exactly and two runs
with the same inputs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Tuple

SCHEMAS: Dict[str, Tuple[int, int, Tuple[str, ...]]] = {
    "slot_delay": (1, 0, ("run_id", "slot", "cav", "mode", "comm_s", "comp_s", "total_s")),
    "training_log": (1, 0, ("epoch", "env_steps", "mean_episode_reward", "mean_delay_s", "loss", "epsilon",
                            "ratio_local", "ratio_haps", "ratio_rsu")),
    "alloc_trace": (1, 0, ("iteration", "eta", "sum_b", "objective")),
    "sweep_summary": (1, 0, ("cell", "axis", "value", "scheme", "seeds", "mean_delay_s", "std_delay_s", "comm_s",
                             "comp_s", "ratio_local", "ratio_haps", "ratio_rsu")),
}
_PREFIX = "# hapsits-schema:"


class SchemaError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, schema: str, rows: Iterable[Mapping]) -> Path:
    if schema not in SCHEMAS:
        raise SchemaError(f"unknown schema {schema!r}")
    major, minor, cols = SCHEMAS[schema]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"{_PREFIX} {schema} {major}.{minor}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            missing = [c for c in cols if c not in row]
            if missing:
                raise SchemaError(f"{schema} row lacks {missing}")
            w.writerow([_fmt(row[c]) for c in cols])
    return path


def read_csv(path, schema: str | None = None) -> Tuple[str, List[Dict[str, str]]]:
    """Return (schema name, rows as string dicts); values are left for the caller to convert."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith(_PREFIX):
            raise SchemaError(f"{path}: missing schema line")
        try:
            name, version = first[len(_PREFIX):].split()
            major = int(version.split(".")[0])
        except ValueError as exc:
            raise SchemaError(f"{path}: malformed schema line {first!r}") from exc
        if name not in SCHEMAS:
            raise SchemaError(f"{path}: unknown schema {name!r}")
        if schema is not None and name != schema:
            raise SchemaError(f"{path}: expected {schema}, found {name}")
        if major != SCHEMAS[name][0]:
            raise SchemaError(f"{path}: {name} major version {major} not supported")
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCHEMAS[name][2]:
            raise SchemaError(f"{path}: header {reader.fieldnames} does not match {name}")
        return name, list(reader)


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
    return path
