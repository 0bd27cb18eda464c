"""RMSE scoring of rollouts and the results table fed to the ANOVA."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DuplicateCell, EmptyOverlap, EmptySeries, LengthMismatch, ValidationError
from .rollout import RolloutResult, step_ballistic
from .trajectory import TargetKind, Trajectory, derive_kinematics

VARIABLES = ("a", "v", "s")
MODEL_ORDER = ("IDM", "Gipps", "FVDM-CTH", "FVDM-SIGMOID", "GP", "KRR", "LSTM")
CSV_COLUMNS = ("RMSE", "variable", "Dataset", "Model", "Target", "diverged", "collision")

# Test-set RMSEs for one cell of the published benchmark (external data), kept
# only as orders of magnitude for sanity checks, never as assertions.
REFERENCE_MAGNITUDES = {
    ("ASTA", "LSTM", "s"): {"a": 0.22, "v": 0.079, "s": 0.16},
    ("ASTA", "IDM", "a"): {"a": 0.45},
}


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"shapes differ: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise EmptySeries("cannot compute RMSE of empty series")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


@dataclass(frozen=True)
class RolloutScore:
    a: float
    v: float
    s: float
    steps: int
    diverged: bool = False
    collision: bool = False

    def __getitem__(self, variable: str) -> float:
        return getattr(self, str(variable))


def evaluate_rollout(sim: RolloutResult, truth: Trajectory) -> RolloutScore:
    """RMSE of a, v and s over the horizon both series cover.

    Truncated rollouts are scored on their prefix and keep their flags.
    """
    m = min(len(sim), len(truth))
    if m < 1:
        raise EmptyOverlap("rollout and ground truth do not overlap")
    ref = derive_kinematics(truth)
    return RolloutScore(
        a=rmse(sim.a[:m], ref.a_follower[:m]),
        v=rmse(sim.v[:m], truth.v_follower[:m]),
        s=rmse(sim.s[:m], ref.s[:m]),
        steps=m,
        diverged=sim.diverged or (len(sim) < len(truth) and not sim.collision),
        collision=sim.collision,
    )


def cumulative_error_identity(v_errors, dt: float) -> float:
    """Position error after ``N`` steps implied by speed errors ``eps_1..eps_N``.

    Both trajectories are integrated with the trapezoidal position update from
    a shared start, so the displacement error is
    ``dt * sum_k (eps_k + eps_{k-1}) / 2`` with ``eps_0 = 0``. The matching
    spacing error is the negative of this value.
    """
    eps = np.concatenate([[0.0], np.asarray(v_errors, dtype=float)])
    return float(dt * np.sum((eps[1:] + eps[:-1]) / 2.0))


def reintegrate_position_error(v_errors, dt: float, v_reference=None) -> float:
    """Direct route: integrate two speed series through :func:`step_ballistic`."""
    eps = np.asarray(v_errors, dtype=float)
    ref = np.zeros(len(eps) + 1) if v_reference is None else np.asarray(v_reference, dtype=float)
    pert = ref.copy()
    pert[1:] += eps
    x_ref = x_pert = 0.0
    for k in range(len(eps)):
        _, dx = step_ballistic(ref[k], (ref[k + 1] - ref[k]) / dt, dt)
        x_ref += dx
        _, dx = step_ballistic(pert[k], (pert[k + 1] - pert[k]) / dt, dt)
        x_pert += dx
    return x_pert - x_ref


# ---------------------------------------------------------------------------
# results table


@dataclass(frozen=True)
class ResultsRow:
    rmse: float
    predicted_variable: str
    dataset: str
    model: str
    target: str
    diverged: bool = False
    collision: bool = False

    def __post_init__(self):
        if self.predicted_variable not in VARIABLES:
            raise ValidationError(f"predicted_variable must be one of {VARIABLES}")
        object.__setattr__(self, "target", str(TargetKind.parse(self.target)))
        if not self.diverged and not (math.isfinite(self.rmse) and self.rmse >= 0):
            raise ValidationError(f"rmse must be finite and >= 0 unless diverged, got {self.rmse}")

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.dataset, self.model, self.target, self.predicted_variable)


def _sort_key(row: ResultsRow):
    model_idx = MODEL_ORDER.index(row.model) if row.model in MODEL_ORDER else len(MODEL_ORDER)
    return (row.dataset, model_idx, row.model, VARIABLES.index(row.target),
            VARIABLES.index(row.predicted_variable))


@dataclass
class ResultsTable:
    rows: list[ResultsRow] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            if r.key in seen:
                raise DuplicateCell(f"duplicate results row {r.key}")
            seen.add(r.key)
        self.rows = sorted(self.rows, key=_sort_key)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def levels(self, factor: str) -> list[str]:
        attr = {"Dataset": "dataset", "Model": "model", "Target": "target"}[factor]
        return sorted({getattr(r, attr) for r in self.rows})

    def select(self, variable: str) -> list[ResultsRow]:
        return [r for r in self.rows if r.predicted_variable == variable]

    def log_rmse(self) -> list[float]:
        return [math.log(r.rmse) if r.rmse > 0 else float("-inf") for r in self.rows]

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([repr(float(r.rmse)), r.predicted_variable, r.dataset, r.model, r.target,
                            int(r.diverged), int(r.collision)])
        tmp.replace(path)

    @classmethod
    def from_csv(cls, path) -> "ResultsTable":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                missing = [c for c in CSV_COLUMNS[:5] if c not in rec]
                if missing:
                    raise ValidationError(f"{path}: missing columns {missing}")
                rows.append(ResultsRow(
                    rmse=float(rec["RMSE"]),
                    predicted_variable=rec["variable"],
                    dataset=rec["Dataset"],
                    model=rec["Model"],
                    target=rec["Target"],
                    diverged=bool(int(rec.get("diverged") or 0)),
                    collision=bool(int(rec.get("collision") or 0)),
                ))
        return cls(rows)


def rows_for_cell(dataset: str, model: str, target, score: RolloutScore | None) -> list[ResultsRow]:
    """Three rows for one (dataset, model, target) cell; ``None`` marks a failed cell."""
    target = str(TargetKind.parse(target))
    if score is None:
        return [ResultsRow(float("nan"), var, dataset, model, target, diverged=True) for var in VARIABLES]
    return [
        ResultsRow(score[var], var, dataset, model, target, diverged=score.diverged, collision=score.collision)
        for var in VARIABLES
    ]


def build_results_table(outcomes: Iterable) -> ResultsTable:
    """Assemble rows from cell outcomes (objects with ``rows``) or plain row lists."""
    rows: list[ResultsRow] = []
    seen = set()
    for item in outcomes:
        cell_rows = item.rows if hasattr(item, "rows") else list(item)
        for r in cell_rows:
            if r.key in seen:
                raise DuplicateCell(f"cell {r.key[:3]} evaluated more than once")
            seen.add(r.key)
            rows.append(r)
    return ResultsTable(rows)
