"""Evaluation metrics: OSPA, agent position error, detected counts and Monte Carlo means."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

EXHAUSTIVE_MAX = 6


@dataclass(frozen=True)
class OspaConfig:
    order: float = 1.0
    cutoff: float = 5000.0

    def __post_init__(self) -> None:
        if not self.order >= 1:
            raise ValueError(f"OSPA order must be >= 1, got {self.order}")
        if not self.cutoff > 0:
            raise ValueError(f"OSPA cutoff must be positive, got {self.cutoff}")


OSPA_SIMULATION = OspaConfig(order=1.0, cutoff=5000.0)
OSPA_SEA_TRIAL = OspaConfig(order=1.0, cutoff=1000.0)


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2))
    return arr.reshape(-1, 2)


def _min_cost_exhaustive(cost: np.ndarray) -> float:
    m, n = cost.shape
    best = np.inf
    rows = np.arange(m)
    for cols in itertools.permutations(range(n), m):
        best = min(best, float(cost[rows, list(cols)].sum()))
    return best


def _min_cost_assignment(cost: np.ndarray) -> float:
    row_ind, col_ind = linear_sum_assignment(cost)
    return float(cost[row_ind, col_ind].sum())


def ospa(estimates, truths, cfg: OspaConfig = OSPA_SIMULATION, method: str = "auto") -> float:
    """OSPA distance between two finite point sets.

    ``method`` is ``"auto"``, ``"exhaustive"`` or ``"assignment"``; auto
    enumerates permutations for sets of at most six points.
    """
    x, y = _as_points(estimates), _as_points(truths)
    m, n = len(x), len(y)
    if m > n:
        x, y = y, x
        m, n = n, m
    if n == 0:
        return 0.0
    c, p = cfg.cutoff, cfg.order
    local = 0.0
    if m > 0:
        dist = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
        cost = np.minimum(dist, c) ** p
        if method == "exhaustive" or (method == "auto" and n <= EXHAUSTIVE_MAX):
            local = _min_cost_exhaustive(cost)
        elif method in ("assignment", "auto"):
            local = _min_cost_assignment(cost)
        else:
            raise ValueError(f"unknown OSPA method '{method}'")
    return float(((local + (n - m) * c ** p) / n) ** (1.0 / p))


def position_error(estimate, truth) -> float:
    e = np.asarray(estimate, dtype=float).reshape(-1)[:2]
    t = np.asarray(truth, dtype=float).reshape(-1)[:2]
    return float(np.linalg.norm(e - t))


def detected_count(report) -> int:
    return len(report.targets)


def aggregate(runs: Sequence[pd.DataFrame], on: str = "t") -> pd.DataFrame:
    """Per-time arithmetic means over Monte Carlo runs sharing the same time axis."""
    if not runs:
        raise ValueError("no runs to aggregate")
    axis = list(runs[0][on])
    for i, df in enumerate(runs[1:], start=1):
        if list(df[on]) != axis:
            raise ValueError(f"horizon mismatch: run {i} has {len(df)} steps, run 0 has {len(axis)}")
    stacked = pd.concat(runs, ignore_index=True)
    return stacked.groupby(on, sort=True).mean(numeric_only=True).reset_index()


def target_errors(
    tracks: pd.DataFrame,
    truth_tracks: Mapping[int, Mapping[int, np.ndarray]],
    missing_penalty: float = OSPA_SIMULATION.cutoff,
) -> pd.DataFrame:
    """Error of each true target against the PT label consistently closest to it over time.

    ``tracks`` has columns t, label, est_x, est_y; ``truth_tracks`` maps a
    target id to {t: position}. The selected label minimizes the distance
    summed over the target's lifetime, a step where the label is not reported
    costing ``missing_penalty``. Steps without an estimate get a NaN error.
    """
    estimates: Dict[str, Dict[int, np.ndarray]] = {}
    for row in tracks.itertuples(index=False):
        estimates.setdefault(str(row.label), {})[int(row.t)] = np.array([row.est_x, row.est_y], dtype=float)

    rows: List[Dict] = []
    for target_id, positions in sorted(truth_tracks.items()):
        times = sorted(positions)
        best_label: Optional[str] = None
        best_cost = np.inf
        for label in sorted(estimates):
            per_t = estimates[label]
            cost = sum(
                position_error(per_t[t], positions[t]) if t in per_t else missing_penalty for t in times
            )
            if cost < best_cost:
                best_cost, best_label = cost, label
        for t in times:
            per_t = estimates.get(best_label, {}) if best_label is not None else {}
            err = position_error(per_t[t], positions[t]) if t in per_t else np.nan
            rows.append({"target": target_id, "t": t, "label": best_label, "error_m": err})
    return pd.DataFrame(rows, columns=["target", "t", "label", "error_m"])
