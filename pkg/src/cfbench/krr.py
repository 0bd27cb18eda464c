"""Kernel ridge regression with blocked k-fold grid search."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from . import kernels
from .errors import DimensionMismatch, SingularKernelMatrix, ValidationError
from .kernels import KernelConfig
from .preprocessing import Standardizer

DEFAULT_LAMBDAS = tuple(np.logspace(-6, 2, 9))
DEFAULT_LENGTHSCALES = tuple(np.logspace(-1, 2, 7))


@dataclass(frozen=True)
class KrrModel:
    X_train: np.ndarray
    weights: np.ndarray
    kernel: KernelConfig
    lam: float
    standardizer: Standardizer


def fit(X, y, kernel: KernelConfig, lam: float, standardize: bool = True) -> KrrModel:
    """Dual weights ``(K + lam I)^-1 y`` on standardised data."""
    if not lam > 0:
        raise ValidationError(f"regularisation must be positive, got {lam}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise DimensionMismatch(f"X {X.shape} and y {y.shape} are inconsistent")
    st = Standardizer.fit(X, y, enabled=standardize)
    Xs = st.transform_x(X)
    K = kernels.gram(kernel, Xs)
    try:
        c = linalg.cho_factor(K + lam * np.eye(len(K)), lower=True)
    except linalg.LinAlgError:
        raise SingularKernelMatrix(f"K + {lam:g} I is not positive definite") from None
    w = linalg.cho_solve(c, st.transform_y(y))
    if not np.all(np.isfinite(w)):
        raise SingularKernelMatrix("non-finite dual weights")
    return KrrModel(Xs, w, kernel, float(lam), st)


def predict(model: KrrModel, Xstar) -> np.ndarray:
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    if Xstar.shape[1] != model.X_train.shape[1]:
        raise DimensionMismatch(f"test points have {Xstar.shape[1]} features, model has {model.X_train.shape[1]}")
    Ks = kernels.gram(model.kernel, model.standardizer.transform_x(Xstar), model.X_train)
    return model.standardizer.inverse_y(Ks @ model.weights)


def grid_kernel(kind: str, lengthscale: float) -> KernelConfig:
    """Kernel for one grid cell.

    Unit variance. The MLP kernel has no lengthscale, so the grid value sets
    its weight variance to ``1 / lengthscale**2``.
    """
    kind = kernels.canonical_kind(kind)
    if kind == "MLP":
        return KernelConfig(kind, sigma_w2=1.0 / lengthscale**2)
    return KernelConfig(kind, lengthscales=(lengthscale,))


def blocked_folds(n: int, k_folds: int) -> list[np.ndarray]:
    """Contiguous validation blocks (no shuffling: samples are serially correlated)."""
    return [b for b in np.array_split(np.arange(n), k_folds) if len(b)]


@dataclass(frozen=True)
class CvRow:
    kernel: str
    lam: float
    lengthscale: float
    cv_mse: float


def grid_search_cv(
    X,
    y,
    kernel_kinds: Sequence[str] = kernels.KERNEL_KINDS,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    lengthscales: Sequence[float] = DEFAULT_LENGTHSCALES,
    k_folds: int = 5,
    standardize: bool = True,
) -> tuple[KrrModel, list[CvRow]]:
    """Pick (kernel, lambda, lengthscale) by mean validation MSE, then refit on all data.

    Each fold standardises on its own training part. For a fixed kernel and
    fold, all lambdas share one eigendecomposition. Ties go to the larger
    lambda, then the larger lengthscale.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if k_folds < 2:
        raise ValidationError("k_folds must be >= 2")
    if not (kernel_kinds and len(lambdas) and len(lengthscales)):
        raise ValidationError("grids must be non-empty")
    if len(y) < k_folds:
        raise ValidationError(f"{len(y)} samples cannot be split into {k_folds} folds")
    lambdas = np.asarray(lambdas, dtype=float)
    folds = blocked_folds(len(y), k_folds)

    table: list[CvRow] = []
    for kind in kernel_kinds:
        for ell in lengthscales:
            cfg = grid_kernel(kind, float(ell))
            fold_mse = np.zeros(len(lambdas))
            for val_idx in folds:
                train_idx = np.setdiff1d(np.arange(len(y)), val_idx)
                st = Standardizer.fit(X[train_idx], y[train_idx], enabled=standardize)
                Xt, Xv = st.transform_x(X[train_idx]), st.transform_x(X[val_idx])
                yt = st.transform_y(y[train_idx])
                evals, Q = np.linalg.eigh(kernels.gram(cfg, Xt))
                evals = np.maximum(evals, 0.0)
                proj = Q.T @ yt
                Kv = kernels.gram(cfg, Xv, Xt) @ Q
                for j, lam in enumerate(lambdas):
                    pred = st.inverse_y(Kv @ (proj / (evals + lam)))
                    fold_mse[j] += np.mean((pred - y[val_idx]) ** 2)
            for j, lam in enumerate(lambdas):
                table.append(CvRow(cfg.kind, float(lam), float(ell), float(fold_mse[j] / len(folds))))

    best = min(table, key=lambda r: (r.cv_mse if np.isfinite(r.cv_mse) else np.inf, -r.lam, -r.lengthscale))
    model = fit(X, y, grid_kernel(best.kernel, best.lengthscale), best.lam, standardize=standardize)
    return model, table


def write_cv_table(rows: Sequence[CvRow], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kernel", "lambda", "lengthscale", "cv_mse"])
        for r in rows:
            w.writerow([r.kernel, repr(r.lam), repr(r.lengthscale), repr(r.cv_mse)])


__all__ = ["KrrModel", "fit", "predict", "grid_search_cv", "grid_kernel", "CvRow", "write_cv_table",
           "DEFAULT_LAMBDAS", "DEFAULT_LENGTHSCALES"]
