"""Covariance functions with analytic gradients in log-hyperparameter space.

Stationary kernels share the ARD scaled distance
``r = sqrt(sum_i (x_i - y_i)^2 / l_i^2)`` and have the form ``sigma^2 * g(r)``.
The rational quadratic uses ``(1 + r^2 / 2) ** -alpha`` (no ``alpha`` inside the
bracket). The MLP (arc-sine) kernel is non-stationary and ignores lengthscales.

Hyperparameter vector order (all in log space):

* stationary: ``[variance, l_1, ..., l_m]`` plus ``alpha`` for the rational quadratic
* MLP: ``[variance, sigma_w2, sigma_b2]``
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, ValidationError

KERNEL_KINDS = ("RBF", "Exponential", "RationalQuadratic", "MLP", "Matern32", "Matern52")
STATIONARY = ("RBF", "Exponential", "RationalQuadratic", "Matern32", "Matern52")

_ALIASES = {k.lower(): k for k in KERNEL_KINDS}
_ALIASES.update({"rq": "RationalQuadratic", "exp": "Exponential", "matern": "Matern52",
                 "arcsine": "MLP", "matern3/2": "Matern32", "matern5/2": "Matern52"})

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)


def canonical_kind(kind: str) -> str:
    try:
        return _ALIASES[str(kind).strip().lower()]
    except KeyError:
        raise ValidationError(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}") from None


@dataclass(frozen=True)
class KernelConfig:
    kind: str
    variance: float = 1.0
    lengthscales: tuple[float, ...] = (1.0,)
    alpha: float = 1.0
    sigma_w2: float = 1.0
    sigma_b2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if not self.variance > 0 or not all(v > 0 for v in ls) or not ls:
            raise ValidationError("variance and lengthscales must be positive")
        if not (self.alpha > 0 and self.sigma_w2 > 0 and self.sigma_b2 > 0):
            raise ValidationError("alpha, sigma_w2 and sigma_b2 must be positive")

    @property
    def stationary(self) -> bool:
        return self.kind in STATIONARY

    def param_names(self) -> list[str]:
        if not self.stationary:
            return ["variance", "sigma_w2", "sigma_b2"]
        names = ["variance"] + [f"lengthscale_{i}" for i in range(len(self.lengthscales))]
        if self.kind == "RationalQuadratic":
            names.append("alpha")
        return names

    def log_params(self) -> np.ndarray:
        if not self.stationary:
            vals = [self.variance, self.sigma_w2, self.sigma_b2]
        else:
            vals = [self.variance, *self.lengthscales]
            if self.kind == "RationalQuadratic":
                vals.append(self.alpha)
        return np.log(np.array(vals, dtype=float))

    def with_log_params(self, theta) -> "KernelConfig":
        vals = np.exp(np.asarray(theta, dtype=float))
        if len(vals) != len(self.param_names()):
            raise ValidationError(f"{self.kind} takes {len(self.param_names())} hyperparameters, got {len(vals)}")
        if not self.stationary:
            return replace(self, variance=vals[0], sigma_w2=vals[1], sigma_b2=vals[2])
        m = len(self.lengthscales)
        out = replace(self, variance=vals[0], lengthscales=tuple(vals[1:1 + m]))
        if self.kind == "RationalQuadratic":
            out = replace(out, alpha=vals[1 + m])
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "variance": self.variance, "lengthscales": list(self.lengthscales),
                "alpha": self.alpha, "sigma_w2": self.sigma_w2, "sigma_b2": self.sigma_b2}

    @classmethod
    def from_dict(cls, d) -> "KernelConfig":
        return cls(**dict(d))


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D feature array, got shape {X.shape}")
    return X


def _check_dims(cfg: KernelConfig, X, Y):
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"feature dims differ: {X.shape[1]} vs {Y.shape[1]}")
    if cfg.stationary and len(cfg.lengthscales) not in (1, X.shape[1]):
        raise DimensionMismatch(f"{len(cfg.lengthscales)} lengthscales for {X.shape[1]}-D inputs")


def _scaled_sq_diffs(cfg: KernelConfig, X, Y) -> np.ndarray:
    """(N, M, d) array of (x_i - y_i)^2 / l_i^2."""
    ls = np.asarray(cfg.lengthscales)
    diff = X[:, None, :] - Y[None, :, :]
    return diff**2 / ls**2


def _shape(kind: str, r, alpha):
    if kind == "RBF":
        return np.exp(-0.5 * r**2)
    if kind == "Exponential":
        return np.exp(-r)
    if kind == "RationalQuadratic":
        return (1.0 + 0.5 * r**2) ** (-alpha)
    if kind == "Matern32":
        return (1.0 + SQRT3 * r) * np.exp(-SQRT3 * r)
    return (1.0 + SQRT5 * r + 5.0 / 3.0 * r**2) * np.exp(-SQRT5 * r)


def _shape_deriv_over_r(kind: str, r, alpha):
    """g'(r) / r, continuous at r = 0 except for the exponential kernel."""
    if kind == "RBF":
        return -np.exp(-0.5 * r**2)
    if kind == "Exponential":
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, -np.exp(-r) / r, 0.0)
    if kind == "RationalQuadratic":
        return -alpha * (1.0 + 0.5 * r**2) ** (-alpha - 1.0)
    if kind == "Matern32":
        return -3.0 * np.exp(-SQRT3 * r)
    return -5.0 / 3.0 * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)


def _mlp_parts(cfg: KernelConfig, X, Y):
    dot = X @ Y.T
    ax = cfg.sigma_w2 * np.sum(X**2, axis=1) + cfg.sigma_b2 + 1.0
    ay = cfg.sigma_w2 * np.sum(Y**2, axis=1) + cfg.sigma_b2 + 1.0
    denom = np.sqrt(np.outer(ax, ay))
    z = (cfg.sigma_w2 * dot + cfg.sigma_b2) / denom
    return dot, ax, ay, denom, np.clip(z, -1.0, 1.0)


def gram(cfg: KernelConfig, X, Y=None) -> np.ndarray:
    """Kernel matrix between the rows of ``X`` and ``Y`` (``Y`` defaults to ``X``)."""
    X = _as_2d(X)
    Y = X if Y is None else _as_2d(Y)
    _check_dims(cfg, X, Y)
    if not cfg.stationary:
        z = _mlp_parts(cfg, X, Y)[4]
        return cfg.variance * (2.0 / np.pi) * np.arcsin(z)
    r = np.sqrt(np.sum(_scaled_sq_diffs(cfg, X, Y), axis=2))
    return cfg.variance * _shape(cfg.kind, r, cfg.alpha)


def eval(cfg: KernelConfig, x, y) -> float:  # noqa: A001 - mirrors k(x, y)
    """Single kernel value ``k(x, y)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise DimensionMismatch(f"point dims differ: {x.shape} vs {y.shape}")
    return float(gram(cfg, x[None, :], y[None, :])[0, 0])


def grad_log_hyperparams(cfg: KernelConfig, X) -> list[np.ndarray]:
    """dK/d(log theta) for every hyperparameter, ordered as :meth:`KernelConfig.log_params`."""
    X = _as_2d(X)
    _check_dims(cfg, X, X)
    K = gram(cfg, X)
    grads = [K.copy()]
    if not cfg.stationary:
        dot, ax, ay, denom, z = _mlp_parts(cfg, X, X)
        sq = np.sum(X**2, axis=1)
        scale = cfg.variance * (2.0 / np.pi) / np.sqrt(np.maximum(1.0 - z**2, 1e-300))
        dz_dw = dot / denom - 0.5 * z * (sq[:, None] / ax[:, None] + sq[None, :] / ay[None, :])
        dz_db = 1.0 / denom - 0.5 * z * (1.0 / ax[:, None] + 1.0 / ay[None, :])
        grads.append(scale * dz_dw * cfg.sigma_w2)
        grads.append(scale * dz_db * cfg.sigma_b2)
        return grads

    sq = _scaled_sq_diffs(cfg, X, X)
    r = np.sqrt(np.sum(sq, axis=2))
    h = cfg.variance * _shape_deriv_over_r(cfg.kind, r, cfg.alpha)
    if len(cfg.lengthscales) == 1:
        # dr/dlog l = -r for a shared lengthscale, so dK/dlog l = -g'(r) r
        grads.append(-h * r**2)
    else:
        for i in range(sq.shape[2]):
            grads.append(-h * sq[:, :, i])
    if cfg.kind == "RationalQuadratic":
        base = 1.0 + 0.5 * r**2
        grads.append(-cfg.variance * cfg.alpha * np.log(base) * base ** (-cfg.alpha))
    return grads
