"""Leader/follower trajectories: data model, CSV I/O, splitting and synthesis.

Sign convention used across the package: ``dv = v_follower - v_leader``, so a
positive ``dv`` means the follower is closing in on its leader.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CollisionDuringSynthesis,
    CollisionInData,
    MissingColumn,
    NonUniformTimestep,
    SegmentTooShort,
    TooShort,
    ValidationError,
)

DEFAULT_DT = 0.1
TIMESTEP_TOL = 1e-6

REQUIRED_ROLES = ("t", "x_leader", "v_leader", "x_follower", "v_follower")
OPTIONAL_ROLES = ("a_follower", "leader_length")


class TargetKind(str, enum.Enum):
    """Variable a model is optimized on (and, for learners, predicts)."""

    A = "a"
    V = "v"
    S = "s"

    @classmethod
    def parse(cls, value) -> "TargetKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown target {value!r}; expected one of a, v, s") from None

    def __str__(self):
        return self.value


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled leader/follower pair."""

    dt: float
    t0: float
    x_leader: np.ndarray
    v_leader: np.ndarray
    x_follower: np.ndarray
    v_follower: np.ndarray
    leader_length: float
    a_follower: np.ndarray | None = None

    def __post_init__(self):
        for name in ("x_leader", "v_leader", "x_follower", "v_follower"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.a_follower is not None:
            object.__setattr__(self, "a_follower", _frozen(self.a_follower))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "leader_length", float(self.leader_length))

        n = len(self.x_leader)
        series = [self.v_leader, self.x_follower, self.v_follower]
        if self.a_follower is not None:
            series.append(self.a_follower)
        if any(s.ndim != 1 or len(s) != n for s in series) or self.x_leader.ndim != 1:
            raise ValidationError("all trajectory series must be 1-D with equal length")
        if n < 2:
            raise TooShort(f"trajectory needs at least 2 samples, got {n}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        all_series = [self.x_leader, *series]
        if not all(np.all(np.isfinite(s)) for s in all_series):
            raise ValidationError("trajectory contains non-finite values")
        gap = self.spacing
        if np.any(gap <= 0):
            k = int(np.argmax(gap <= 0))
            raise CollisionInData(f"non-positive spacing {gap[k]:.6g} m at sample {k}")

    def __len__(self):
        return len(self.x_leader)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def spacing(self) -> np.ndarray:
        return self.x_leader - self.x_follower - self.leader_length

    def slice(self, start: int, stop: int | None = None) -> "Trajectory":
        stop = len(self) if stop is None else stop
        a = None if self.a_follower is None else self.a_follower[start:stop]
        return Trajectory(
            dt=self.dt,
            t0=self.t0 + start * self.dt,
            x_leader=self.x_leader[start:stop],
            v_leader=self.v_leader[start:stop],
            x_follower=self.x_follower[start:stop],
            v_follower=self.v_follower[start:stop],
            leader_length=self.leader_length,
            a_follower=a,
        )


@dataclass(frozen=True)
class DerivedSeries:
    s: np.ndarray
    dv: np.ndarray
    a_follower: np.ndarray


def derive_kinematics(traj: Trajectory) -> DerivedSeries:
    """Spacing, speed difference and forward-difference acceleration.

    The acceleration at the last sample repeats the previous value, so every
    series has the trajectory's length. Recorded ``a_follower`` columns are not
    used here on purpose: RMSE(a) is always computed against differenced speed.
    """
    v = traj.v_follower
    a = np.empty_like(v)
    a[:-1] = np.diff(v) / traj.dt
    a[-1] = a[-2]
    return DerivedSeries(s=traj.spacing, dv=v - traj.v_leader, a_follower=a)


def target_series(traj: Trajectory, target) -> np.ndarray:
    """Per-step regression targets for one-step-ahead prediction.

    Entry ``k`` is what a predictor sees as the label for the state at step
    ``k``: the acceleration applied over ``[k, k+1]`` for target ``a`` and the
    next speed/spacing for ``v`` and ``s``. Length is ``len(traj) - 1``.
    """
    target = TargetKind.parse(target)
    if target is TargetKind.A:
        return np.diff(traj.v_follower) / traj.dt
    if target is TargetKind.V:
        return np.asarray(traj.v_follower[1:], dtype=float)
    return np.asarray(traj.spacing[1:], dtype=float)


def features(traj: Trajectory) -> np.ndarray:
    """(N, 3) matrix of learner inputs: follower speed, leader speed, spacing."""
    return np.column_stack([traj.v_follower, traj.v_leader, traj.spacing])


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def split(traj: Trajectory, spec: SplitSpec | float = SplitSpec()) -> tuple[Trajectory, Trajectory]:
    """Chronological train/test split; the test part starts at the split index."""
    if not isinstance(spec, SplitSpec):
        spec = SplitSpec(float(spec))
    n = len(traj)
    k = math.floor(spec.train_fraction * n)
    if k < 2 or n - k < 2:
        raise SegmentTooShort(
            f"split of N={n} at fraction {spec.train_fraction} gives segments ({k}, {n - k}); both need >= 2"
        )
    return traj.slice(0, k), traj.slice(k)


def concatenate(first: Trajectory, second: Trajectory) -> Trajectory:
    a = None
    if first.a_follower is not None and second.a_follower is not None:
        a = np.concatenate([first.a_follower, second.a_follower])
    return Trajectory(
        dt=first.dt,
        t0=first.t0,
        x_leader=np.concatenate([first.x_leader, second.x_leader]),
        v_leader=np.concatenate([first.v_leader, second.v_leader]),
        x_follower=np.concatenate([first.x_follower, second.x_follower]),
        v_follower=np.concatenate([first.v_follower, second.v_follower]),
        leader_length=first.leader_length,
        a_follower=a,
    )


# ---------------------------------------------------------------------------
# CSV


def load_csv(
    path,
    column_map: Mapping[str, str] | None = None,
    leader_length: float | None = None,
    dt: float | None = None,
) -> Trajectory:
    """Read a column-mapped CSV into a :class:`Trajectory`.

    Args:
        path: CSV file with a header row.
        column_map: role -> column name. Roles not mapped are looked up under
            their own name (``t``, ``x_leader``, ...).
        leader_length: leader length in meters. When ``None`` the file must carry
            a ``leader_length`` column.
        dt: expected sample period. Inferred from the timestamps when ``None``.
    """
    column_map = dict(column_map or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)

    def col(role, required=True):
        name = column_map.get(role, role)
        if name not in header:
            if required:
                raise MissingColumn(f"column {name!r} for role {role!r} not found in {path}")
            return None
        try:
            return np.array([float(r[name]) for r in rows], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"column {name!r} is not numeric: {exc}") from None

    data = {role: col(role) for role in REQUIRED_ROLES}
    a = col("a_follower", required=False)
    if leader_length is None:
        lengths = col("leader_length", required=False)
        if lengths is None:
            raise MissingColumn("leader_length not given and no leader_length column present")
        leader_length = float(lengths[0])

    t = data["t"]
    if len(t) < 2:
        raise TooShort(f"{path}: need at least 2 rows, got {len(t)}")
    steps = np.diff(t)
    if dt is None:
        dt = float(np.round((t[-1] - t[0]) / (len(t) - 1), 9))
    bad = np.abs(steps - dt) > TIMESTEP_TOL
    if np.any(bad):
        k = int(np.argmax(bad))
        raise NonUniformTimestep(f"{path}: step {steps[k]:.9g} s at row {k + 1} differs from dt={dt}")

    return Trajectory(
        dt=dt,
        t0=float(t[0]),
        x_leader=data["x_leader"],
        v_leader=data["v_leader"],
        x_follower=data["x_follower"],
        v_follower=data["v_follower"],
        leader_length=leader_length,
        a_follower=a,
    )


def save_csv(traj: Trajectory, path) -> None:
    """Write ``traj`` so that :func:`load_csv` restores every series bit-exactly."""
    cols = ["t", "x_leader", "v_leader", "x_follower", "v_follower", "leader_length"]
    series = [traj.t, traj.x_leader, traj.v_leader, traj.x_follower, traj.v_follower,
              np.full(len(traj), traj.leader_length)]
    if traj.a_follower is not None:
        cols.append("a_follower")
        series.append(traj.a_follower)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in zip(*series):
            writer.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class LeaderProfile:
    """Leader speed as piecewise-linear breakpoints plus an optional sinusoid.

    ``speed(t) = interp(t, breakpoints) + amplitude * sin(omega * t)``, clipped
    at zero. Without breakpoints the base is ``base_speed``.
    """

    base_speed: float = 10.0
    amplitude: float = 0.0
    omega: float = 0.0
    breakpoints: Sequence[tuple[float, float]] = field(default_factory=tuple)

    def speed(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.breakpoints:
            bt, bv = zip(*sorted(self.breakpoints))
            base = np.interp(t, bt, bv)
        else:
            base = np.full_like(t, self.base_speed)
        return np.maximum(base + self.amplitude * np.sin(self.omega * t), 0.0)

    @classmethod
    def from_dict(cls, d: Mapping) -> "LeaderProfile":
        bps = tuple(tuple(map(float, p)) for p in d.get("breakpoints", ()))
        return cls(
            base_speed=float(d.get("base_speed", 10.0)),
            amplitude=float(d.get("amplitude", 0.0)),
            omega=float(d.get("omega", 0.0)),
            breakpoints=bps,
        )

    def to_dict(self) -> dict:
        return {
            "base_speed": self.base_speed,
            "amplitude": self.amplitude,
            "omega": self.omega,
            "breakpoints": [list(p) for p in self.breakpoints],
        }


def synthesize(
    leader: LeaderProfile,
    model_kind,
    params,
    initial_gap: float,
    duration: float,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    noise_std: float = 0.0,
    leader_length: float = 5.0,
    initial_speed: float | None = None,
    measurement_std: float = 0.0,
) -> Trajectory:
    """Generate a follower trajectory by rolling out a classical model.

    The leader follows ``leader`` exactly and its position is integrated with
    the same trapezoidal rule as the follower. ``noise_std`` adds zero-mean
    Gaussian noise (m/s) to each follower speed increment, so it changes the
    motion itself. ``measurement_std`` adds independent zero-mean Gaussian
    noise (m/s) to the recorded follower speeds only, leaving positions and
    spacing untouched, like a noisy speed sensor.

    Raises:
        TooShort: duration shorter than one step.
        CollisionDuringSynthesis: the follower reaches zero spacing.
    """
    from . import classical
    from .rollout import simulate_batch

    n = int(round(duration / dt)) + 1 if duration > 0 else 1
    if n < 2:
        raise TooShort(f"duration {duration} s yields {n} sample(s)")
    p = classical.coerce_params(model_kind, params)
    s0 = getattr(p, "s0", 0.0)
    if not initial_gap > s0:
        raise ValidationError(f"initial_gap {initial_gap} must exceed the model's s0={s0}")
    if noise_std < 0 or measurement_std < 0:
        raise ValidationError("noise_std and measurement_std must be >= 0")

    t = dt * np.arange(n)
    vl = leader.speed(t)
    xl = np.empty(n)
    xl[0] = initial_gap + leader_length
    xl[1:] = xl[0] + np.cumsum((vl[1:] + vl[:-1]) / 2.0 * dt)
    v0 = float(vl[0]) if initial_speed is None else float(initial_speed)

    noise = None
    if noise_std > 0:
        noise = np.random.default_rng(seed).normal(0.0, noise_std, size=n - 1)

    sim = simulate_batch(
        classical.get_model(model_kind), [p.as_array()], xl, vl, leader_length, 0.0, v0, dt,
        speed_noise=noise,
    )
    if sim.collision_step[0] >= 0:
        raise CollisionDuringSynthesis(f"follower collided at step {sim.collision_step[0]}")
    if sim.diverged_step[0] >= 0:
        raise CollisionDuringSynthesis(f"follower diverged at step {sim.diverged_step[0]}")
    v_rec = sim.v[0]
    if measurement_std > 0:
        # separate stream so adding sensor noise leaves the process noise unchanged
        v_rec = v_rec + np.random.default_rng([seed, 1]).normal(0.0, measurement_std, size=n)
    return Trajectory(
        dt=dt,
        t0=0.0,
        x_leader=xl,
        v_leader=vl,
        x_follower=sim.x[0],
        v_follower=v_rec,
        leader_length=leader_length,
    )
