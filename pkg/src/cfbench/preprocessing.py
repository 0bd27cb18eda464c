"""Feature/target standardisation shared by the GP, KRR and LSTM learners."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @classmethod
    def fit(cls, X, y=None, enabled: bool = True) -> "Standardizer":
        """Column statistics of ``X`` (any leading shape, last axis = features).

        Zero-variance columns get unit scale. ``enabled=False`` returns the
        identity transform.
        """
        X = np.asarray(X, dtype=float)
        d = X.shape[-1]
        if not enabled:
            return cls(np.zeros(d), np.ones(d))
        flat = X.reshape(-1, d)
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        y_mean, y_std = 0.0, 1.0
        if y is not None:
            y = np.asarray(y, dtype=float)
            y_mean = float(y.mean())
            y_std = float(y.std()) if y.std() > 0 else 1.0
        return cls(mean, std, y_mean, y_std)

    def transform_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def inverse_y(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["x_mean"], dtype=float), np.asarray(d["x_std"], dtype=float),
                   float(d["y_mean"]), float(d["y_std"]))
