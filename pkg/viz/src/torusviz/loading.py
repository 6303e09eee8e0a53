"""Strict loaders for the torusflow file schemas.

Each input declares its schema on the first line (CSV comment or JSONL
header record).  A wrong schema or a missing column is a hard error naming
the offender; nothing is silently dropped.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

# published schemas of the simulation package, by figure kind
SCHEMAS = {
    "energy": "torusflow.energy.v1",
    "convergence": "torusflow.convergence.v1",
    "sweep": "torusflow.sweep.v1",
    "weak-strong": "torusflow.relative-energy.v1",
    "martingale": "torusflow.probe-stats.v1",
}

REQUIRED_COLUMNS = {
    "energy": ["time", "energy_ns", "dissipation_cum", "energy_budget_residual"],
    "convergence": ["dt", "gap_rel_l2"],
    "sweep": ["mu", "dissipation_total", "gap_rho", "gap_momentum"],
    "weak-strong": ["time", "relative_energy", "envelope", "guard_ok"],
    "martingale": ["time", "m1_mean", "m1_se", "m2_mean", "m2_se", "m2_var",
                   "qv2_pred_mean", "qv2_pred_half_mean",
                   "cross_pred_mean", "cross_emp_mean"],
}


class SchemaError(ValueError):
    """Input file does not match the published schema."""


def _parse_cell(cell: str) -> float:
    return np.nan if cell == "" else float(cell)


def load_csv(path: str | Path, kind: str) -> dict[str, np.ndarray]:
    """Read a schema-tagged CSV into named columns (empty cells become NaN)."""
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    if not lines or not lines[0].startswith("# torusflow-schema: "):
        raise SchemaError(f"{path}: missing schema header line")
    schema = lines[0].split(": ", 1)[1].strip()
    if schema != SCHEMAS[kind]:
        raise SchemaError(f"{path}: schema {schema!r} does not match "
                          f"{SCHEMAS[kind]!r} expected for kind {kind!r}")
    if len(lines) < 3:
        raise SchemaError(f"{path}: no data rows")
    header = lines[1].split(",")
    missing = [c for c in REQUIRED_COLUMNS[kind] if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")
    table = {name: [] for name in header}
    for lineno, line in enumerate(lines[2:], start=3):
        cells = line.split(",")
        if len(cells) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} cells, "
                              f"got {len(cells)}")
        for name, cell in zip(header, cells):
            table[name].append(_parse_cell(cell))
    return {name: np.asarray(vals) for name, vals in table.items()}


def load_jsonl(path: str | Path, kind: str) -> dict[str, np.ndarray]:
    """Read a schema-tagged JSONL stream into named columns."""
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    if not lines:
        raise SchemaError(f"{path}: empty file")
    head = json.loads(lines[0])
    if head.get("schema") != SCHEMAS[kind]:
        raise SchemaError(f"{path}: schema {head.get('schema')!r} does not match "
                          f"{SCHEMAS[kind]!r} expected for kind {kind!r}")
    records = [json.loads(line) for line in lines[1:]]
    if not records:
        raise SchemaError(f"{path}: no data records")
    missing = [c for c in REQUIRED_COLUMNS[kind] if c not in records[0]]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")
    names = sorted(records[0])
    return {name: np.asarray([r.get(name, np.nan) for r in records]) for name in names}
