"""Classical car-following models: IDM, Gipps and the two FVDM variants.

Every acceleration function is written with numpy ufuncs so that the same code
evaluates one state or a whole GA population at once (fields of the state and
the parameter dataclass may be scalars or broadcastable arrays).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Mapping

import numpy as np

from .errors import NonPositiveSpacing, UnknownModelKind, ValidationError


@dataclass(frozen=True)
class CfState:
    """Follower state seen by a model.

    ``dv`` follows the package convention ``v_follower - v_leader``.
    """

    v: float
    s: float
    dv: float
    v_leader: float


class _Params:
    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls) if f.name != "variant")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=float)

    def as_dict(self) -> dict:
        return {n: float(getattr(self, n)) for n in self.names()}


@dataclass(frozen=True)
class IdmParams(_Params):
    a_max: float
    V_max: float
    delta: float
    s0: float
    T: float
    b: float


@dataclass(frozen=True)
class GippsParams(_Params):
    a_max: float
    V_max: float
    tau: float
    theta: float
    b: float
    b_hat: float
    s0: float


@dataclass(frozen=True)
class FvdmParams(_Params):
    K1: float
    K2: float
    V_max: float
    s0: float
    T: float
    variant: str = "CTH"


def _check_spacing(s):
    if np.any(np.asarray(s) <= 0):
        raise NonPositiveSpacing(f"spacing must be positive, got min {np.min(s)}")


def idm_accel(state: CfState, p: IdmParams):
    """IDM acceleration.

    The desired gap grows when the follower is faster than its leader
    (``dv > 0``).
    """
    _check_spacing(state.s)
    v = state.v
    s_star = p.s0 + p.T * v + v * state.dv / (2.0 * np.sqrt(p.a_max * p.b))
    return p.a_max * (1.0 - np.power(v / p.V_max, p.delta) - (s_star / state.s) ** 2)


def gipps_accel(state: CfState, p: GippsParams):
    """Gipps speed update recast as an acceleration.

    A negative braking radicand is clamped to zero so the emergency regime
    yields the strongest braking branch instead of NaN.
    """
    _check_spacing(state.s)
    v = state.v
    ratio = v / p.V_max
    free = v + 2.5 * p.a_max * p.tau * (1.0 - ratio) * np.sqrt(np.maximum(0.025 + ratio, 0.0))
    lag = p.tau / 2.0 + p.theta
    radicand = p.b**2 * lag**2 + p.b * (2.0 * (state.s - p.s0) - p.tau * v + state.v_leader**2 / p.b_hat)
    brake = -p.b * lag + np.sqrt(np.maximum(radicand, 0.0))
    return (np.minimum(free, brake) - v) / p.tau


def fvdm_desired_speed(s, p: FvdmParams):
    """Optimal-velocity function; constant time headway or cosine (sigmoid) form."""
    s = np.asarray(s, dtype=float)
    span = p.T * p.V_max
    frac = np.clip((s - p.s0) / span, 0.0, 1.0)
    if str(p.variant).upper() in ("CTH",):
        out = frac * p.V_max
    elif str(p.variant).upper() in ("SIGMOID", "SIG"):
        out = p.V_max / 2.0 * (1.0 - np.cos(np.pi * frac))
    else:
        raise UnknownModelKind(f"unknown FVDM variant {p.variant!r}")
    return out if out.ndim else float(out)


def fvdm_accel(state: CfState, p: FvdmParams):
    """Full velocity difference model; a faster leader adds positive acceleration."""
    rel_speed = -np.asarray(state.dv)  # v_leader - v_follower
    return p.K1 * (fvdm_desired_speed(state.s, p) - state.v) + p.K2 * rel_speed


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class ClassicalModel:
    name: str
    params_cls: type
    accel_fn: Callable
    bounds: Mapping[str, tuple[float, float]]
    variant: str | None = None

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.params_cls.names()

    def params_from_array(self, values) -> _Params:
        """Build a params object; ``values`` may be (n,) or (P, n)."""
        values = np.asarray(values, dtype=float)
        cols = values.T if values.ndim == 2 else values
        if len(cols) != len(self.param_names):
            raise ValidationError(
                f"{self.name} expects {len(self.param_names)} parameters, got {len(cols)}"
            )
        kwargs = {n: (c if values.ndim == 2 else float(c)) for n, c in zip(self.param_names, cols)}
        if self.variant is not None:
            kwargs["variant"] = self.variant
        return self.params_cls(**kwargs)

    def accel(self, state: CfState, p) -> np.ndarray:
        return self.accel_fn(state, p)


_COMMON = {
    "a_max": (0.1, 5.0),
    "V_max": (1.0, 45.0),
    "T": (0.1, 5.0),
    "s0": (0.1, 10.0),
}

_MODELS = {
    "IDM": ClassicalModel(
        "IDM", IdmParams, idm_accel,
        {"a_max": _COMMON["a_max"], "V_max": _COMMON["V_max"], "delta": (1.0, 10.0),
         "s0": _COMMON["s0"], "T": _COMMON["T"], "b": (0.1, 5.0)},
    ),
    "GIPPS": ClassicalModel(
        "Gipps", GippsParams, gipps_accel,
        {"a_max": _COMMON["a_max"], "V_max": _COMMON["V_max"], "tau": (0.1, 3.0),
         "theta": (0.01, 2.0), "b": (0.5, 8.0), "b_hat": (0.5, 8.0), "s0": _COMMON["s0"]},
    ),
    "FVDM-CTH": ClassicalModel(
        "FVDM-CTH", FvdmParams, fvdm_accel,
        {"K1": (0.01, 3.0), "K2": (0.01, 3.0), "V_max": _COMMON["V_max"],
         "s0": _COMMON["s0"], "T": _COMMON["T"]},
        variant="CTH",
    ),
    "FVDM-SIGMOID": ClassicalModel(
        "FVDM-SIGMOID", FvdmParams, fvdm_accel,
        {"K1": (0.01, 3.0), "K2": (0.01, 3.0), "V_max": _COMMON["V_max"],
         "s0": _COMMON["s0"], "T": _COMMON["T"]},
        variant="SIGMOID",
    ),
}
_ALIASES = {"FVDM-SIG": "FVDM-SIGMOID", "FVDM_CTH": "FVDM-CTH", "FVDM_SIGMOID": "FVDM-SIGMOID"}

CLASSICAL_MODELS = tuple(m.name for m in _MODELS.values())


def canonical_key(model_kind) -> str:
    key = str(model_kind).strip().upper()
    key = _ALIASES.get(key, key)
    if key not in _MODELS:
        raise UnknownModelKind(f"{model_kind!r} is not a classical model ({', '.join(CLASSICAL_MODELS)})")
    return key


def is_classical(model_kind) -> bool:
    try:
        canonical_key(model_kind)
    except UnknownModelKind:
        return False
    return True


def get_model(model_kind) -> ClassicalModel:
    if isinstance(model_kind, ClassicalModel):
        return model_kind
    return _MODELS[canonical_key(model_kind)]


def param_bounds(model_kind, overrides: Mapping[str, tuple[float, float]] | None = None) -> dict:
    """Search box per parameter, in the model's parameter order."""
    model = get_model(model_kind)
    box = dict(model.bounds)
    for name, (lo, hi) in (overrides or {}).items():
        if name not in box:
            raise ValidationError(f"{model.name} has no parameter {name!r}")
        if not (np.isfinite(lo) and np.isfinite(hi) and 0 < lo < hi):
            raise ValidationError(f"bad bounds for {name}: ({lo}, {hi})")
        box[name] = (float(lo), float(hi))
    return {n: box[n] for n in model.param_names}


def coerce_params(model_kind, params):
    """Accept a params dataclass, a name->value mapping or a flat sequence."""
    model = get_model(model_kind)
    if isinstance(params, model.params_cls):
        return params
    if isinstance(params, Mapping):
        missing = [n for n in model.param_names if n not in params]
        if missing:
            raise ValidationError(f"{model.name} params missing {missing}")
        return model.params_from_array([params[n] for n in model.param_names])
    return model.params_from_array(params)


def accel_function(model_kind, params) -> Callable[[CfState], float]:
    """Close a model over fixed parameters, giving a ``CfState -> a`` callable."""
    model = get_model(model_kind)
    p = coerce_params(model, params)
    return lambda state: model.accel(state, p)


EXAMPLE_PARAMS = {
    "IDM": IdmParams(a_max=1.0, V_max=10.0, delta=4.0, s0=2.0, T=1.0, b=1.0),
    "GIPPS": GippsParams(a_max=2.0, V_max=10.0, tau=1.0, theta=0.5, b=3.0, b_hat=3.0, s0=2.0),
    "FVDM-CTH": FvdmParams(K1=0.5, K2=0.3, V_max=10.0, s0=2.0, T=1.0, variant="CTH"),
    "FVDM-SIGMOID": FvdmParams(K1=0.5, K2=0.3, V_max=10.0, s0=2.0, T=1.0, variant="SIGMOID"),
}
