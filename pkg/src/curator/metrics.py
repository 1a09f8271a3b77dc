"""Continual-learning evaluation arithmetic over skill x timestep tables.

Average accuracy is the per-timestep mean over skills. Relative gain
expresses skill performance as a percentage of per-skill upper bounds.
The forgetting rate averages the relative per-skill drops across all
transitions; the underlying formula is non-positive, and the reported
value is its magnitude.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .datamodel import PerformanceTable


def average_accuracy(table: PerformanceTable, t: int) -> float:
    """Mean over skills of the accuracy at timestep t."""
    if not 0 <= t < table.n_timesteps:
        raise ValueError(f"timestep {t} out of range [0, {table.n_timesteps})")
    return float(np.mean(table.values[:, t]))


def relative_gain(table: PerformanceTable, t: int, upper_bounds: Sequence[float] | None = None) -> float:
    """Mean over skills of value/upper_bound at timestep t, as a percentage."""
    if not 0 <= t < table.n_timesteps:
        raise ValueError(f"timestep {t} out of range [0, {table.n_timesteps})")
    if upper_bounds is None:
        upper_bounds = table.upper_bounds
    if upper_bounds is None:
        raise ValueError("upper bounds required for relative gain")
    ub = np.asarray(upper_bounds, dtype=np.float64)
    if ub.shape != (len(table.skills),):
        raise ValueError("one upper bound per skill required")
    if np.any(ub <= 0):
        raise ValueError("upper bounds must be positive")
    return float(np.mean(table.values[:, t] / ub) * 100.0)


def forgetting_rate(table: PerformanceTable) -> float:
    """Average % drop across skills and transitions, reported positive.

    Transitions with a zero baseline contribute 0 (see
    zero_baseline_transitions for the flagged cells).
    """
    values = table.values
    n_trans = values.shape[1] - 1
    if n_trans < 1:
        raise ValueError("need at least two timesteps")
    total = 0.0
    for s in range(values.shape[0]):
        for t in range(1, values.shape[1]):
            prev = values[s, t - 1]
            if prev <= 0:
                continue
            total += min(values[s, t] - prev, 0.0) / prev
    rate = total / (values.shape[0] * n_trans) * 100.0
    return abs(rate)


def zero_baseline_transitions(table: PerformanceTable) -> list[tuple[str, int]]:
    """(skill, t) pairs whose transition t-1 -> t had a zero baseline."""
    flagged = []
    for s, skill in enumerate(table.skills):
        for t in range(1, table.n_timesteps):
            if table.values[s, t - 1] <= 0:
                flagged.append((skill, t))
    return flagged


def skill_upper_bounds(reference: PerformanceTable) -> np.ndarray:
    """Per-skill maxima over timesteps, the usual upper-bound source."""
    bounds = np.max(reference.values, axis=1)
    if np.any(bounds <= 0):
        bad = reference.skills[int(np.argmax(bounds <= 0))]
        raise ValueError(f"skill {bad!r} never exceeds 0; no usable upper bound")
    return bounds


def read_performance_csv(path) -> PerformanceTable:
    """Parse a table with header ``skill,t0,t1,...`` and one row per skill."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"empty CSV: {path}")
    header = [c.strip() for c in rows[0]]
    if not header or header[0] != "skill":
        raise ValueError("first header column must be 'skill'")
    n_t = len(header) - 1
    if n_t < 1:
        raise ValueError("need at least one timestep column")
    skills, values = [], []
    for row in rows[1:]:
        if len(row) != n_t + 1:
            raise ValueError(f"row for {row[0]!r} has {len(row) - 1} cells, expected {n_t}")
        skills.append(row[0].strip())
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError as exc:
            raise ValueError(f"non-numeric cell in row {row[0]!r}: {exc}") from exc
    return PerformanceTable(skills=tuple(skills), values=np.asarray(values))


def metrics_report(table: PerformanceTable, upper_bounds: Sequence[float] | None = None) -> dict:
    """JSON-ready summary of all three metrics plus per-timestep accuracy."""
    final_t = table.n_timesteps - 1
    report = {
        "n_skills": len(table.skills),
        "n_timesteps": table.n_timesteps,
        "average_accuracy": average_accuracy(table, final_t),
        "average_accuracy_per_timestep": [average_accuracy(table, t) for t in range(table.n_timesteps)],
        "forgetting_rate": forgetting_rate(table) if table.n_timesteps > 1 else 0.0,
        "zero_baseline_transitions": [[skill, t] for skill, t in zero_baseline_transitions(table)],
    }
    ub = upper_bounds if upper_bounds is not None else table.upper_bounds
    if ub is not None:
        report["relative_gain"] = relative_gain(table, final_t, ub)
        report["upper_bounds"] = [float(b) for b in np.asarray(ub)]
    return report
