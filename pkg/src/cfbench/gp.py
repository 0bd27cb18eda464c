"""Exact Gaussian process regression with a zero-mean prior on standardised data."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from . import kernels
from .errors import AllRestartsFailed, DimensionMismatch, SingularKernelMatrix, ValidationError
from .kernels import KernelConfig
from .preprocessing import Standardizer

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8
JITTER_LADDER = (1e-8, 1e-6, 1e-4)

# log-uniform ranges for restart sampling (standardised units)
START_RANGES = {"variance": (0.1, 10.0), "lengthscale": (0.1, 10.0), "alpha": (0.1, 10.0),
                "sigma_w2": (0.1, 10.0), "sigma_b2": (0.1, 10.0), "noise": (1e-3, 0.5)}
# box for L-BFGS-B, same units
OPT_BOUNDS = {"variance": (1e-4, 1e4), "lengthscale": (1e-3, 1e3), "alpha": (1e-3, 1e3),
              "sigma_w2": (1e-4, 1e4), "sigma_b2": (1e-4, 1e4), "noise": (NOISE_FLOOR, 10.0)}


@dataclass(frozen=True)
class GpModel:
    X_train: np.ndarray
    y_train: np.ndarray
    alpha: np.ndarray
    chol: np.ndarray
    kernel: KernelConfig
    noise: float
    standardizer: Standardizer
    jitter: float = 0.0

    @property
    def hyperparameters(self) -> dict:
        out = self.kernel.to_dict()
        out["noise"] = self.noise
        out["jitter"] = self.jitter
        return out


def _factor(K: np.ndarray, noise: float):
    n = len(K)
    for jitter in (0.0, *JITTER_LADDER):
        try:
            L = np.linalg.cholesky(K + (noise + jitter) * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        if jitter:
            log.warning("Cholesky needed jitter %.0e", jitter)
        return L, jitter
    raise SingularKernelMatrix(f"K + sigma_y^2 I not positive definite even with jitter {JITTER_LADDER[-1]}")


def fit(X, y, kernel: KernelConfig, noise: float, standardize: bool = True) -> GpModel:
    """Condition a GP on ``(X, y)``.

    ``noise`` is the observation variance in standardised target units and is
    floored at ``1e-8``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionMismatch(f"X {X.shape} and y {y.shape} are inconsistent")
    if len(y) < 1 or not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("GP training data must be non-empty and finite")
    st = Standardizer.fit(X, y, enabled=standardize)
    Xs = st.transform_x(X)
    ys = st.transform_y(y)
    noise = max(float(noise), NOISE_FLOOR)
    L, jitter = _factor(kernels.gram(kernel, Xs), noise)
    alpha = linalg.cho_solve((L, True), ys)
    return GpModel(Xs, ys, alpha, L, kernel, noise, st, jitter)


def _test_inputs(model: GpModel, Xstar) -> np.ndarray:
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    if Xstar.shape[1] != model.X_train.shape[1]:
        raise DimensionMismatch(f"test points have {Xstar.shape[1]} features, model has {model.X_train.shape[1]}")
    return model.standardizer.transform_x(Xstar)


def predict_mean(model: GpModel, Xstar) -> np.ndarray:
    Ks = kernels.gram(model.kernel, _test_inputs(model, Xstar), model.X_train)
    return model.standardizer.inverse_y(Ks @ model.alpha)


def predict_cov(model: GpModel, Xstar) -> np.ndarray:
    """Posterior covariance of the latent function (noise excluded), target units."""
    Xs = _test_inputs(model, Xstar)
    Kxs = kernels.gram(model.kernel, model.X_train, Xs)
    v = linalg.solve_triangular(model.chol, Kxs, lower=True)
    cov = kernels.gram(model.kernel, Xs) - v.T @ v
    cov = 0.5 * (cov + cov.T) * model.standardizer.y_std**2
    d = np.diag(cov).copy()
    d[(d < 0) & (d >= -1e-8)] = 0.0
    np.fill_diagonal(cov, d)
    return cov


def log_marginal_likelihood(model: GpModel) -> tuple[float, np.ndarray]:
    """Log evidence of the standardised targets and its gradient.

    The gradient is taken with respect to ``[kernel log-hyperparameters...,
    log noise]``.
    """
    y, a, L = model.y_train, model.alpha, model.chol
    n = len(y)
    value = -0.5 * y @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2.0 * np.pi)
    K_inv = linalg.cho_solve((L, True), np.eye(n))
    W = np.outer(a, a) - K_inv
    dKs = kernels.grad_log_hyperparams(model.kernel, model.X_train)
    grad = [0.5 * np.sum(W * dK) for dK in dKs]
    grad.append(0.5 * model.noise * np.trace(W))
    return float(value), np.array(grad)


def _names_to_ranges(cfg: KernelConfig, table: dict) -> list[tuple[float, float]]:
    out = []
    for name in cfg.param_names():
        key = "lengthscale" if name.startswith("lengthscale") else name
        out.append(table[key])
    out.append(table["noise"])
    return out


def default_kernel(kind: str, n_features: int, ard: bool = True) -> KernelConfig:
    kind = kernels.canonical_kind(kind)
    return KernelConfig(kind, lengthscales=(1.0,) * (n_features if ard else 1))


def optimize_hyperparams(X, y, kind: str, restarts: int = 3, seed: int = 0,
                         standardize: bool = True, ard: bool = True, max_iter: int = 200) -> GpModel:
    """Maximum-likelihood hyperparameters via L-BFGS-B from random log-uniform starts.

    Start points are drawn sequentially from one seeded generator, so a run with
    more restarts tries a superset of the starts of a run with fewer.
    """
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    template = default_kernel(kind, X.shape[1], ard)
    st = Standardizer.fit(X, y, enabled=standardize)
    Xs, ys = st.transform_x(X), st.transform_y(y)
    log_bounds = [(np.log(lo), np.log(hi)) for lo, hi in _names_to_ranges(template, OPT_BOUNDS)]
    start_ranges = _names_to_ranges(template, START_RANGES)
    rng = np.random.default_rng(seed)

    def build(theta):
        return fit(Xs, ys, template.with_log_params(theta[:-1]), float(np.exp(theta[-1])), standardize=False)

    def neg_lml(theta):
        try:
            m = build(theta)
        except SingularKernelMatrix:
            return 1e25, np.zeros_like(theta)
        val, grad = log_marginal_likelihood(m)
        return -val, -grad

    best_theta, best_val = None, np.inf
    for r in range(restarts):
        theta0 = np.array([rng.uniform(np.log(lo), np.log(hi)) for lo, hi in start_ranges])
        try:
            build(theta0)
        except SingularKernelMatrix:
            log.info("restart %d: singular at start", r)
            continue
        res = optimize.minimize(neg_lml, theta0, jac=True, method="L-BFGS-B", bounds=log_bounds,
                                options={"maxiter": max_iter})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_theta = float(res.fun), res.x
    if best_theta is None:
        raise AllRestartsFailed(f"all {restarts} restarts hit a singular kernel matrix")
    m = build(best_theta)
    # re-attach the outer standardisation so predictions come back in target units
    return GpModel(m.X_train, m.y_train, m.alpha, m.chol, m.kernel, m.noise, st, m.jitter)
