"""Stacked LSTM regressor (sequence in, one real out) written directly in numpy.

Gate blocks inside every stacked weight matrix are ordered ``i, f, g, o``
(input, forget, candidate cell, output), so ``W_x[0:H]`` is ``W_ii``,
``W_x[H:2H]`` is ``W_if`` and so on; ``W_h``, ``b_x`` and ``b_h`` follow the
same layout. All arithmetic is float64.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch, TooShort, ValidationError
from .preprocessing import Standardizer
from .trajectory import Trajectory, features, target_series

log = logging.getLogger(__name__)

GATES = ("i", "f", "g", "o")
TENSORS = ("W_x", "W_h", "b_x", "b_h")


@dataclass(frozen=True)
class LstmConfig:
    layers: int = 3
    hidden: int = 25
    window: int = 5
    input_dim: int = 3
    epochs: int = 50
    learning_rate: float = 0.05
    batch_size: int = 32
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.window < 1 or self.input_dim < 1:
            raise ValidationError("layers, hidden, window and input_dim must be >= 1")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("learning_rate >= 0, batch_size >= 1 and epochs >= 0 required")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "LstmConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown LSTM settings {sorted(unknown)}")
        return cls(**d)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LayerParams:
    W_x: np.ndarray  # (4H, in)
    W_h: np.ndarray  # (4H, H)
    b_x: np.ndarray  # (4H,)
    b_h: np.ndarray  # (4H,)

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]

    def gate(self, name: str) -> np.ndarray:
        """Per-gate slice by PyTorch-style name, e.g. ``"W_hf"`` or ``"b_ig"``."""
        kind, gate = name[:-1], name[-1]
        source = {"W_i": self.W_x, "W_h": self.W_h, "b_i": self.b_x, "b_h": self.b_h}[kind]
        k = GATES.index(gate)
        H = self.hidden
        return source[k * H:(k + 1) * H]


@dataclass
class LstmParams:
    layers: list[LayerParams]
    head_w: np.ndarray  # (H,)
    head_b: np.ndarray  # (1,)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for l, layer in enumerate(self.layers):
            out.extend((f"layer{l}.{n}", getattr(layer, n)) for n in TENSORS)
        out.append(("head_w", self.head_w))
        out.append(("head_b", self.head_b))
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.ravel() for _, t in self.tensors()])

    def from_vector(self, vec) -> "LstmParams":
        vec = np.asarray(vec, dtype=float)
        pos = 0
        arrays = []
        for _, t in self.tensors():
            arrays.append(vec[pos:pos + t.size].reshape(t.shape).copy())
            pos += t.size
        if pos != len(vec):
            raise ShapeMismatch(f"vector of length {len(vec)} does not match {pos} parameters")
        layers = [LayerParams(*arrays[4 * l:4 * l + 4]) for l in range(len(self.layers))]
        return LstmParams(layers, arrays[-2], arrays[-1])

    def copy(self) -> "LstmParams":
        return self.from_vector(self.to_vector())


def init_params(config: LstmConfig, rng=None) -> LstmParams:
    """Uniform(-k, k) initialisation with ``k = 1 / sqrt(hidden)``."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    H = config.hidden
    k = 1.0 / np.sqrt(H)
    layers = []
    for l in range(config.layers):
        n_in = config.input_dim if l == 0 else H
        layers.append(LayerParams(
            W_x=rng.uniform(-k, k, (4 * H, n_in)),
            W_h=rng.uniform(-k, k, (4 * H, H)),
            b_x=rng.uniform(-k, k, 4 * H),
            b_h=rng.uniform(-k, k, 4 * H),
        ))
    return LstmParams(layers, rng.uniform(-k, k, H), rng.uniform(-k, k, 1))


def zeros_like(params: LstmParams) -> LstmParams:
    return params.from_vector(np.zeros_like(params.to_vector()))


def cell_forward(x_t, h_prev, c_prev, layer: LayerParams):
    """One LSTM step for a batch: ``x_t`` (B, in), states (B, H)."""
    x_t = np.atleast_2d(x_t)
    h_prev = np.atleast_2d(h_prev)
    c_prev = np.atleast_2d(c_prev)
    H = layer.hidden
    if x_t.shape[1] != layer.W_x.shape[1] or h_prev.shape[1] != H or c_prev.shape != h_prev.shape:
        raise ShapeMismatch(f"input {x_t.shape} / state {h_prev.shape} do not fit layer with hidden={H}")
    z = x_t @ layer.W_x.T + layer.b_x + h_prev @ layer.W_h.T + layer.b_h
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, (x_t, h_prev, c_prev, i, f, g, o, tanh_c)


def _forward(X, params: LstmParams):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != params.layers[0].W_x.shape[1]:
        raise ShapeMismatch(f"expected (batch, window, {params.layers[0].W_x.shape[1]}) input, got {X.shape}")
    B, W, _ = X.shape
    seq = X
    caches = []
    for layer in params.layers:
        H = layer.hidden
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        out = np.empty((B, W, H))
        layer_cache = []
        for t in range(W):
            h, c, cache = cell_forward(seq[:, t], h, c, layer)
            out[:, t] = h
            layer_cache.append(cache)
        caches.append(layer_cache)
        seq = out
    h_last = seq[:, -1]
    pred = h_last @ params.head_w + params.head_b[0]
    return pred, (caches, h_last)


def forward(X, params: LstmParams) -> np.ndarray:
    """Predictions for a batch of windows ``(B, window, input_dim)``; a single
    ``(window, input_dim)`` window gives a length-1 array."""
    return _forward(X, params)[0]


def backward(X, y, params: LstmParams) -> tuple[LstmParams, float]:
    """Exact gradient of the batch-mean squared error by backpropagation through time."""
    y = np.asarray(y, dtype=float).ravel()
    pred, (caches, h_last) = _forward(X, params)
    if len(pred) != len(y):
        raise ShapeMismatch(f"{len(pred)} windows but {len(y)} targets")
    if len(y) == 0:
        raise ValidationError("empty batch")
    B = len(y)
    resid = pred - y
    loss = float(np.mean(resid**2))
    dpred = 2.0 * resid / B

    grads = zeros_like(params)
    grads.head_w[:] = h_last.T @ dpred
    grads.head_b[0] = dpred.sum()

    W = len(caches[0])
    H_top = params.layers[-1].hidden
    d_out = np.zeros((B, W, H_top))
    d_out[:, -1] = np.outer(dpred, params.head_w)

    for l in range(len(params.layers) - 1, -1, -1):
        layer, g_layer = params.layers[l], grads.layers[l]
        H = layer.hidden
        n_in = layer.W_x.shape[1]
        d_in = np.zeros((B, W, n_in))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(W - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, g, o, tanh_c = caches[l][t]
            dh = d_out[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tanh_c**2)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g**2),
                dh * tanh_c * o * (1.0 - o),
            ], axis=1)
            g_layer.W_x += dz.T @ x_t
            g_layer.W_h += dz.T @ h_prev
            db = dz.sum(axis=0)
            g_layer.b_x += db
            g_layer.b_h += db
            d_in[:, t] = dz @ layer.W_x
            dh_next = dz @ layer.W_h
            dc_next = dc * f
        d_out = d_in
    return grads, loss


# ---------------------------------------------------------------------------
# data


def make_windows(segment: Trajectory, target, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding windows of (follower speed, leader speed, spacing) and their labels.

    Window ``j`` covers steps ``j .. j+window-1``; its label is the target for
    the step after the window (see :func:`cfbench.trajectory.target_series`).
    """
    n = len(segment)
    if n <= window:
        raise TooShort(f"segment of length {n} yields no window of size {window}")
    feats = features(segment)
    labels = target_series(segment, target)
    m = n - window
    idx = np.arange(window)[None, :] + np.arange(m)[:, None]
    return feats[idx], labels[window - 1:window - 1 + m]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: LstmParams
    loss_history: list[float] = field(default_factory=list)


def _clip(grads: LstmParams, max_norm: float) -> np.ndarray:
    vec = grads.to_vector()
    norm = np.linalg.norm(vec)
    if max_norm > 0 and norm > max_norm:
        vec = vec * (max_norm / norm)
    return vec


def train(X, y, config: LstmConfig, params: LstmParams | None = None) -> TrainResult:
    """Minibatch SGD on already standardised windows.

    Batches are reshuffled every epoch from a generator seeded with
    ``config.seed``; the global gradient norm is clipped at ``config.clip_norm``.
    ``loss_history[e]`` is the full-data MSE after epoch ``e``.

    Raises:
        NonFiniteLoss: the loss became NaN or infinite.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if len(X) == 0:
        raise ValidationError("need at least one training window")
    rng = np.random.default_rng(config.seed)
    params = init_params(config, rng) if params is None else params.copy()
    theta = params.to_vector()
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            grads, loss = backward(X[idx], y[idx], params.from_vector(theta))
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} in epoch {epoch}")
            theta = theta - config.learning_rate * _clip(grads, config.clip_norm)
        full = float(np.mean((forward(X, params.from_vector(theta)) - y) ** 2))
        if not np.isfinite(full):
            raise NonFiniteLoss(f"loss became {full} after epoch {epoch}")
        history.append(full)
    return TrainResult(params.from_vector(theta), history)


@dataclass
class LstmModel:
    """Trained network plus the scaling learned from its training windows."""

    params: LstmParams
    standardizer: Standardizer
    config: LstmConfig
    loss_history: list[float] = field(default_factory=list)

    def predict(self, windows) -> np.ndarray:
        Xs = self.standardizer.transform_x(windows)
        return self.standardizer.inverse_y(forward(Xs, self.params))


def fit(segment: Trajectory, target, config: LstmConfig, standardize: bool = True) -> LstmModel:
    """Window the training segment, standardise on it and train."""
    X, y = make_windows(segment, target, config.window)
    st = Standardizer.fit(X, y, enabled=standardize)
    res = train(st.transform_x(X), st.transform_y(y), config)
    log.info("LSTM trained: final loss %.4g", res.loss_history[-1] if res.loss_history else float("nan"))
    return LstmModel(res.params, st, config, res.loss_history)


# ---------------------------------------------------------------------------
# serialisation: flat little-endian float64 dump + JSON shape manifest


def save_params(params: LstmParams, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest, offset = [], 0
    for name, t in params.tensors():
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.size
    params.to_vector().astype("<f8").tofile(path.with_suffix(".bin"))
    path.with_suffix(".json").write_text(json.dumps({"dtype": "<f8", "tensors": manifest}, indent=1))


def load_params(path) -> LstmParams:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())["tensors"]
    flat = np.fromfile(path.with_suffix(".bin"), dtype="<f8").astype(float)
    arrays = {}
    for m in manifest:
        size = int(np.prod(m["shape"]))
        arrays[m["name"]] = flat[m["offset"]:m["offset"] + size].reshape(m["shape"])
    n_layers = sum(1 for m in manifest if m["name"].endswith(".W_x"))
    layers = [LayerParams(*(arrays[f"layer{l}.{n}"] for n in TENSORS)) for l in range(n_layers)]
    return LstmParams(layers, arrays["head_w"], arrays["head_b"])


def config_to_dict(config: LstmConfig) -> dict:
    return asdict(config)
