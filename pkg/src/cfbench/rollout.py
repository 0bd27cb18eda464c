"""Ballistic integration and free-simulation rollouts.

Speed is advanced by an Euler step and position by the trapezoid of the two
speeds. Classical models and learned predictors are both rolled out in closed
loop: only the leader's series come from the recording.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .classical import CfState
from .errors import DivergedToNonFinite, ValidationError
from .trajectory import TargetKind, Trajectory, derive_kinematics, features

DIVERGENCE_LIMIT = 1e9

__all__ = [
    "DIVERGENCE_LIMIT",
    "RolloutResult",
    "TargetKind",
    "step_ballistic",
    "simulate_batch",
    "rollout_classical",
    "transform_prediction",
    "rollout_predictor",
]


def step_ballistic(v, a, dt):
    """One integration step; returns ``(v_next, dx)``."""
    v_next = v + a * dt
    return v_next, (v_next + v) / 2.0 * dt


@dataclass(frozen=True)
class RolloutResult:
    """Simulated follower series.

    ``a[k]`` is the acceleration applied between samples ``k`` and ``k+1``; the
    last entry repeats the previous one. A collision or divergence truncates
    every series at the step where it happened.
    """

    dt: float
    t0: float
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    s: np.ndarray
    collision_step: int | None = None
    diverged_step: int | None = None

    def __len__(self):
        return len(self.x)

    @property
    def collision(self) -> bool:
        return self.collision_step is not None

    @property
    def diverged(self) -> bool:
        return self.diverged_step is not None

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    def to_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "v", "a", "s", "collision", "diverged"])
            for k in range(len(self)):
                w.writerow([
                    repr(float(self.t[k])), repr(float(self.x[k])), repr(float(self.v[k])),
                    repr(float(self.a[k])), repr(float(self.s[k])),
                    int(self.collision_step == k), int(self.diverged_step == k),
                ])


@dataclass
class BatchSimulation:
    """Population rollout; step indices are -1 where nothing happened."""

    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    s: np.ndarray
    collision_step: np.ndarray
    diverged_step: np.ndarray

    def length(self, i: int) -> int:
        """Number of valid samples for member ``i``."""
        n = self.x.shape[1]
        if self.diverged_step[i] >= 0:
            return int(self.diverged_step[i])
        if self.collision_step[i] >= 0:
            return int(self.collision_step[i]) + 1
        return n


def simulate_batch(
    model_or_accel,
    params_matrix,
    x_leader,
    v_leader,
    leader_length: float,
    x0,
    v0,
    dt: float,
    speed_noise=None,
    clamp_speed: bool = True,
) -> BatchSimulation:
    """Roll out ``P`` parameter vectors of one classical model side by side.

    Args:
        model_or_accel: a :class:`~cfbench.classical.ClassicalModel`, or a bare
            ``CfState -> a`` callable (then ``params_matrix`` only fixes ``P``).
        params_matrix: (P, n_params) array.
        speed_noise: optional (N-1,) additive speed increments, shared by all members.

    A member stops evolving once it collides (spacing <= 0) or its state leaves
    the finite range; its step index is recorded instead.
    """
    params_matrix = np.atleast_2d(np.asarray(params_matrix, dtype=float))
    n_pop = params_matrix.shape[0]
    if hasattr(model_or_accel, "params_from_array"):
        p = model_or_accel.params_from_array(params_matrix)
        accel = lambda st: model_or_accel.accel(st, p)  # noqa: E731
    else:
        accel = model_or_accel

    xl = np.asarray(x_leader, dtype=float)
    vl = np.asarray(v_leader, dtype=float)
    n = len(xl)
    x = np.empty((n_pop, n))
    v = np.empty((n_pop, n))
    a = np.zeros((n_pop, n))
    s = np.empty((n_pop, n))
    x[:, 0] = x0
    v[:, 0] = v0
    collision = np.full(n_pop, -1)
    diverged = np.full(n_pop, -1)
    alive = np.ones(n_pop, dtype=bool)

    for k in range(n):
        s[:, k] = xl[k] - x[:, k] - leader_length
        bad = alive & ~(np.isfinite(s[:, k]) & np.isfinite(v[:, k])
                        & (np.abs(x[:, k]) <= DIVERGENCE_LIMIT) & (np.abs(v[:, k]) <= DIVERGENCE_LIMIT))
        diverged[bad] = k
        alive &= ~bad
        hit = alive & (s[:, k] <= 0)
        collision[hit] = k
        alive &= ~hit
        if k == n - 1 or not alive.any():
            if k < n - 1:
                x[:, k + 1:] = x[:, k:k + 1]
                v[:, k + 1:] = v[:, k:k + 1]
                s[:, k + 1:] = s[:, k:k + 1]
            break
        s_safe = np.where(alive, s[:, k], 1.0)
        v_k = np.where(alive, v[:, k], 0.0)
        state = CfState(v=v_k, s=s_safe, dv=v_k - vl[k], v_leader=vl[k])
        with np.errstate(all="ignore"):
            a_k = np.broadcast_to(np.asarray(accel(state), dtype=float), (n_pop,)).copy()
        bad_a = alive & ~(np.isfinite(a_k) & (np.abs(a_k) <= DIVERGENCE_LIMIT))
        diverged[bad_a] = k
        alive &= ~bad_a
        a_k = np.where(alive, a_k, 0.0)
        a[:, k] = a_k
        v_next = v[:, k] + a_k * dt
        if speed_noise is not None:
            v_next = v_next + speed_noise[k]
        if clamp_speed:
            v_next = np.maximum(v_next, 0.0)
        v_next = np.where(alive, v_next, v[:, k])
        x[:, k + 1] = np.where(alive, x[:, k] + (v_next + v[:, k]) / 2.0 * dt, x[:, k])
        v[:, k + 1] = v_next

    # acceleration is undefined at the last valid sample: repeat the previous one
    for i in range(n_pop):
        end = collision[i] if collision[i] >= 0 else (diverged[i] if diverged[i] >= 0 else n - 1)
        if end >= 1:
            a[i, end:] = a[i, end - 1]
    return BatchSimulation(x=x, v=v, a=a, s=s, collision_step=collision, diverged_step=diverged)


def _result_from_batch(sim: BatchSimulation, i: int, dt: float, t0: float) -> RolloutResult:
    m = sim.length(i)
    if m == 0:
        raise DivergedToNonFinite("initial state is not finite")
    return RolloutResult(
        dt=dt,
        t0=t0,
        x=sim.x[i, :m].copy(),
        v=sim.v[i, :m].copy(),
        a=sim.a[i, :m].copy(),
        s=sim.s[i, :m].copy(),
        collision_step=int(sim.collision_step[i]) if sim.collision_step[i] >= 0 else None,
        diverged_step=int(sim.diverged_step[i]) if sim.diverged_step[i] >= 0 else None,
    )


def rollout_classical(accel_fn: Callable[[CfState], float], segment: Trajectory,
                      clamp_speed: bool = True) -> RolloutResult:
    """Free simulation of a classical model over ``segment``.

    The follower starts from its recorded position and speed; speed is clamped
    at zero. ``accel_fn`` receives a :class:`CfState` whose fields are length-1
    arrays and may return a scalar.
    """
    sim = simulate_batch(
        accel_fn, np.zeros((1, 1)), segment.x_leader, segment.v_leader, segment.leader_length,
        segment.x_follower[0], segment.v_follower[0], segment.dt, clamp_speed=clamp_speed,
    )
    return _result_from_batch(sim, 0, segment.dt, segment.t0)


def transform_prediction(target, y_pred: float, prev_state, leader_next, dt: float,
                         leader_length: float):
    """Turn one prediction into the next kinematic state.

    Args:
        prev_state: ``(x, v, a, s)`` at step ``k``.
        leader_next: ``(x_leader, v_leader)`` at step ``k + 1``.

    Returns:
        ``(x, v, a, s)`` where ``x, v, s`` belong to step ``k + 1`` and ``a`` is
        the acceleration applied over ``[k, k + 1]``.
    """
    target = TargetKind.parse(target)
    x, v = prev_state[0], prev_state[1]
    xl_next = leader_next[0]
    if target is TargetKind.A:
        a = y_pred
        v_next, dx = step_ballistic(v, a, dt)
        x_next = x + dx
    elif target is TargetKind.V:
        v_next = y_pred
        a = (v_next - v) / dt
        x_next = x + (v_next + v) / 2.0 * dt
    else:
        x_next = xl_next - leader_length - y_pred
        v_next = (x_next - x) / dt
        a = (v_next - v) / dt
    s_next = xl_next - x_next - leader_length
    return x_next, v_next, a, s_next


def _finite(*vals) -> bool:
    return all(np.isfinite(q) and abs(q) <= DIVERGENCE_LIMIT for q in vals)


def rollout_predictor(
    predict: Callable[[np.ndarray], float],
    target,
    segment: Trajectory,
    window: int = 1,
    history: Trajectory | None = None,
    on_divergence: str = "truncate",
) -> RolloutResult:
    """Closed-loop rollout of a one-step predictor.

    Args:
        predict: maps a ``(window, 3)`` array of (follower speed, leader speed,
            spacing) rows, oldest first, to the next value of ``target``.
        segment: recorded data; only the leader series and the seed steps are read.
        window: number of feature rows per prediction.
        history: recorded steps immediately preceding ``segment``. When given,
            its last ``window - 1`` rows seed the first window so predictions
            start at the segment's first sample; otherwise the first ``window``
            samples of ``segment`` are copied from the recording.
        on_divergence: ``"truncate"`` (stop and flag) or ``"raise"``.

    Raises:
        DivergedToNonFinite: only with ``on_divergence="raise"``.
    """
    target = TargetKind.parse(target)
    if window < 1:
        raise ValidationError("window must be >= 1")
    if on_divergence not in ("truncate", "raise"):
        raise ValidationError(f"on_divergence must be 'truncate' or 'raise', got {on_divergence!r}")
    n = len(segment)
    dt, L = segment.dt, segment.leader_length
    xl, vl = segment.x_leader, segment.v_leader

    if history is not None and window > 1:
        if len(history) < window - 1:
            raise ValidationError(f"history has {len(history)} steps, need {window - 1}")
        pre = features(history)[len(history) - (window - 1):]
        n_seed = 1
    else:
        pre = np.empty((0, 3))
        n_seed = window
    if n <= n_seed:
        raise ValidationError(f"segment length {n} must exceed the {n_seed} seeded step(s)")

    rec = derive_kinematics(segment)
    x = np.empty(n)
    v = np.empty(n)
    a = np.empty(n)
    s = np.empty(n)
    x[:n_seed] = segment.x_follower[:n_seed]
    v[:n_seed] = segment.v_follower[:n_seed]
    s[:n_seed] = rec.s[:n_seed]
    a[:n_seed] = rec.a_follower[:n_seed]
    feats = np.vstack([pre, np.column_stack([v[:n_seed], vl[:n_seed], s[:n_seed]]), np.zeros((n - n_seed, 3))])
    offset = len(pre)

    collision_step = None
    diverged_step = None
    end = n
    for k in range(n_seed - 1, n - 1):
        win = feats[offset + k - window + 1: offset + k + 1]
        y = float(predict(win))
        nxt = transform_prediction(target, y, (x[k], v[k], a[k], s[k]), (xl[k + 1], vl[k + 1]), dt, L)
        if not (np.isfinite(y) and _finite(*nxt)):
            if on_divergence == "raise":
                raise DivergedToNonFinite(f"rollout left the finite range at step {k + 1}")
            diverged_step = k + 1
            end = k + 1
            break
        x[k + 1], v[k + 1], a[k], s[k + 1] = nxt
        feats[offset + k + 1] = (v[k + 1], vl[k + 1], s[k + 1])
        if s[k + 1] <= 0:
            collision_step = k + 1
            end = k + 2
            break
    if end >= 2:
        a[end - 1] = a[end - 2]
    return RolloutResult(
        dt=dt, t0=segment.t0, x=x[:end].copy(), v=v[:end].copy(), a=a[:end].copy(), s=s[:end].copy(),
        collision_step=collision_step, diverged_step=diverged_step,
    )
