"""Real-coded genetic algorithm for calibrating classical car-following models."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from . import classical
from .errors import ValidationError
from .rollout import simulate_batch
from .trajectory import TargetKind, Trajectory, derive_kinematics

log = logging.getLogger(__name__)

PENALTY = 1e6
TOURNAMENT_SIZE = 3
BLX_ALPHA = 0.5
MUTATION_SCALE = 0.1  # Gaussian sigma as a fraction of the box width


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    generations: int = 200
    crossover_rate: float = 0.8
    mutation_rate: float = 0.1
    elitism: int = 2
    seed: int = 0
    stall_generations: int = 30
    polish_evals: int = 2000  # Nelder-Mead budget after the GA; 0 disables

    def __post_init__(self):
        if self.population_size < 4:
            raise ValidationError("population_size must be >= 4")
        if not (0 <= self.crossover_rate <= 1 and 0 <= self.mutation_rate <= 1):
            raise ValidationError("crossover_rate and mutation_rate must lie in [0, 1]")
        if not 0 <= self.elitism < self.population_size:
            raise ValidationError("elitism must be in [0, population_size)")
        if self.generations < 1 or self.stall_generations < 1:
            raise ValidationError("generations and stall_generations must be >= 1")
        if self.polish_evals < 0:
            raise ValidationError("polish_evals must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "GaConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown GA settings {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CalibrationResult:
    params: np.ndarray
    train_rmse: float
    history: list[float] = field(default_factory=list)
    evaluations: int = 0
    param_names: tuple[str, ...] = ()
    ga_rmse: float = float("nan")  # best fitness before the local polish

    def params_dict(self) -> dict:
        return {n: float(p) for n, p in zip(self.param_names, self.params)}

    def to_dict(self) -> dict:
        return {
            "params": self.params_dict(),
            "train_rmse": self.train_rmse,
            "history": list(self.history),
            "evaluations": self.evaluations,
            "ga_rmse": self.ga_rmse,
        }


def _recorded(segment: Trajectory, target: TargetKind) -> np.ndarray:
    if target is TargetKind.A:
        return derive_kinematics(segment).a_follower
    if target is TargetKind.V:
        return np.asarray(segment.v_follower)
    return segment.spacing


def population_objective(params_matrix, model_kind, segment: Trajectory, target) -> np.ndarray:
    """Fitness of every row of ``params_matrix`` (vectorised :func:`objective`)."""
    target = TargetKind.parse(target)
    model = classical.get_model(model_kind)
    params_matrix = np.atleast_2d(np.asarray(params_matrix, dtype=float))
    sim = simulate_batch(
        model, params_matrix, segment.x_leader, segment.v_leader, segment.leader_length,
        segment.x_follower[0], segment.v_follower[0], segment.dt,
    )
    simulated = {TargetKind.A: sim.a, TargetKind.V: sim.v, TargetKind.S: sim.s}[target]
    truth = _recorded(segment, target)
    n = len(segment)
    fitness = np.sqrt(np.mean((simulated - truth) ** 2, axis=1))
    for i in range(len(params_matrix)):
        m = sim.length(i)
        if m < n or not np.isfinite(fitness[i]):
            # shortfall in steps keeps pressure towards longer survival
            fitness[i] = PENALTY + (n - m)
    return fitness


def objective(params, model_kind, segment: Trajectory, target) -> float:
    """Free-simulation RMSE of the target variable over ``segment``.

    Collisions and divergence score ``1e6`` plus the number of lost steps.
    """
    return float(population_objective(np.asarray(params, dtype=float)[None, :], model_kind, segment, target)[0])


def _tournament(rng, fitness, k=TOURNAMENT_SIZE) -> int:
    idx = rng.integers(0, len(fitness), size=k)
    return int(idx[np.argmin(fitness[idx])])


def minimize(
    fitness_fn: Callable[[np.ndarray], np.ndarray],
    lower,
    upper,
    config: GaConfig = GaConfig(),
):
    """Minimise a population fitness function inside a box.

    ``fitness_fn`` maps a (P, n) array of candidates to (P,) scores. The RNG is
    only consumed in the sequential selection/variation phase, so results do
    not depend on how fitness evaluations are scheduled.

    Returns:
        ``(best_x, best_f, history, evaluations)`` where ``history`` holds the
        best-so-far fitness after each generation.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or not np.all(np.isfinite(lower) & np.isfinite(upper) & (lower < upper)):
        raise ValidationError("bounds must be finite with low < high")
    width = upper - lower
    rng = np.random.default_rng(config.seed)
    n_pop, n_dim = config.population_size, len(lower)

    pop = lower + rng.random((n_pop, n_dim)) * width
    fit = np.asarray(fitness_fn(pop), dtype=float)
    evaluations = n_pop
    best_i = int(np.argmin(fit))
    best_x, best_f = pop[best_i].copy(), float(fit[best_i])
    history = [best_f]
    stall = 0

    for gen in range(1, config.generations + 1):
        order = np.argsort(fit, kind="stable")
        children = [pop[i].copy() for i in order[:config.elitism]]
        while len(children) < n_pop:
            p1 = pop[_tournament(rng, fit)]
            p2 = pop[_tournament(rng, fit)]
            if rng.random() < config.crossover_rate:
                lo = np.minimum(p1, p2)
                hi = np.maximum(p1, p2)
                span = hi - lo
                child = lo - BLX_ALPHA * span + rng.random(n_dim) * (1 + 2 * BLX_ALPHA) * span
            else:
                child = p1.copy()
            mutate = rng.random(n_dim) < config.mutation_rate
            child = child + mutate * rng.normal(0.0, MUTATION_SCALE, n_dim) * width
            children.append(np.clip(child, lower, upper))
        pop = np.array(children)
        # elites keep their known fitness; only offspring are evaluated
        new_fit = np.empty(n_pop)
        new_fit[:config.elitism] = fit[order[:config.elitism]]
        new_fit[config.elitism:] = fitness_fn(pop[config.elitism:])
        evaluations += n_pop - config.elitism
        fit = new_fit

        i = int(np.argmin(fit))
        if fit[i] < best_f:
            stall = 0 if best_f - fit[i] > 1e-12 * max(1.0, abs(best_f)) else stall + 1
            best_x, best_f = pop[i].copy(), float(fit[i])
        else:
            stall += 1
        history.append(best_f)
        if stall >= config.stall_generations:
            log.debug("GA stalled after %d generations", gen)
            break
    return best_x, best_f, history, evaluations


def calibrate(
    model_kind,
    train_segment: Trajectory,
    target,
    bounds: Mapping[str, tuple[float, float]] | None = None,
    config: GaConfig = GaConfig(),
) -> CalibrationResult:
    """Fit a classical model to ``train_segment`` by free-simulation RMSE on ``target``."""
    model = classical.get_model(model_kind)
    target = TargetKind.parse(target)
    box = classical.param_bounds(model, bounds)
    lower = np.array([box[n][0] for n in model.param_names])
    upper = np.array([box[n][1] for n in model.param_names])
    x, f, history, evals = minimize(
        lambda pop: population_objective(pop, model, train_segment, target), lower, upper, config
    )
    ga_f = f
    if config.polish_evals > 0 and f < PENALTY:
        x, f, n = polish(lambda p: objective(p, model, train_segment, target), x, f, lower, upper,
                         config.polish_evals)
        evals += n
    log.info("%s calibrated on %s: rmse=%.4g (GA %.4g) after %d evaluations", model.name, target, f, ga_f, evals)
    return CalibrationResult(params=x, train_rmse=f, history=history, evaluations=evals,
                             param_names=model.param_names, ga_rmse=ga_f)


def polish(fn: Callable[[np.ndarray], float], x0, f0: float, lower, upper, max_evals: int):
    """Bounded Nelder-Mead refinement of the GA optimum.

    The GA locates the basin; its box-aligned operators are slow to follow the
    narrow curved valleys of car-following objectives (e.g. the trade-off
    between minimum gap and time headway). The simplex search is derivative
    free and never returns a point worse than ``x0``.

    Returns:
        ``(x, f, evaluations)``.
    """
    res = _scipy_minimize(fn, np.asarray(x0, dtype=float), method="Nelder-Mead",
                          bounds=list(zip(lower, upper)),
                          options={"maxfev": max_evals, "xatol": 1e-10, "fatol": 1e-12, "adaptive": True})
    x = np.clip(res.x, lower, upper)
    f = fn(x)
    if f < f0:
        return x, f, int(res.nfev) + 1
    return np.asarray(x0, dtype=float), f0, int(res.nfev) + 1
