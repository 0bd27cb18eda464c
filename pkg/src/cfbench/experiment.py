"""Dataset x model x target grid: fit, roll out on the test segment, score, persist.

Every cell gets its own seed derived from a SHA-256 hash of
``(master_seed, dataset, model, target)``, so a cell's rows depend only on its
key and the configuration, never on execution order or worker count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy
from scipy.stats import rankdata

from . import __version__, classical, gp, kernels, krr, lstm
from .errors import AllRestartsFailed, CfBenchError, ConfigError, ValidationError
from .evaluation import (MODEL_ORDER, VARIABLES, ResultsRow, ResultsTable, RolloutScore, build_results_table,
                         evaluate_rollout, rows_for_cell)
from .ga import GaConfig, calibrate
from .kernels import KernelConfig
from .lstm import LstmConfig
from .preprocessing import Standardizer
from .rollout import RolloutResult, rollout_classical, rollout_predictor
from .trajectory import (LeaderProfile, SplitSpec, TargetKind, Trajectory, features, load_csv, split,
                         synthesize, target_series)

log = logging.getLogger(__name__)

DATA_DRIVEN = ("GP", "KRR", "LSTM")
PRESETS = {"example": classical.EXAMPLE_PARAMS}
PRESET_ALIASES = {"paper-example": "example", "default": "example"}


def canonical_model(name) -> str:
    """Display name used in results tables (``"idm"`` -> ``"IDM"``, ``"fvdm-sig"`` -> ``"FVDM-SIGMOID"``)."""
    text = str(name).strip().upper()
    if text in DATA_DRIVEN:
        return text
    try:
        return classical.get_model(text).name
    except ValidationError:
        raise ConfigError(f"unknown model {name!r}; expected one of {MODEL_ORDER}", key="models") from None


def preset_params(model_kind, preset: str = "example"):
    name = PRESET_ALIASES.get(preset, preset)
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}", key="preset")
    return PRESETS[name][classical.canonical_key(model_kind)]


# ---------------------------------------------------------------------------
# configuration


def _check_keys(d: Mapping, allowed: Sequence[str], where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}", key=f"{where}.{unknown[0]}")


@dataclass(frozen=True)
class SyntheticSpec:
    model: str = "IDM"
    preset: str | None = "example"
    params: Mapping[str, float] | None = None
    # leader slower than the example desired speeds, so the follower interacts with it
    leader: Mapping[str, Any] = field(default_factory=lambda: {"base_speed": 7.0, "amplitude": 2.0, "omega": 0.3})
    initial_gap: float = 20.0
    duration: float = 60.0
    dt: float = 0.1
    noise_std: float = 0.0
    measurement_std: float = 0.0
    seed: int = 0
    leader_length: float = 5.0
    initial_speed: float | None = None

    def build(self) -> Trajectory:
        params = self.params if self.params is not None else preset_params(self.model, self.preset or "example")
        return synthesize(LeaderProfile.from_dict(self.leader), self.model, params, self.initial_gap,
                          self.duration, dt=self.dt, seed=self.seed, noise_std=self.noise_std,
                          leader_length=self.leader_length, initial_speed=self.initial_speed,
                          measurement_std=self.measurement_std)


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    csv: str | None = None
    column_map: Mapping[str, str] | None = None
    leader_length: float | None = None
    dt: float | None = None
    synthetic: SyntheticSpec | None = None

    @classmethod
    def from_dict(cls, d: Mapping, index: int) -> "DatasetSpec":
        where = f"datasets[{index}]"
        if not isinstance(d, Mapping) or "name" not in d:
            raise ConfigError(f"{where} must be an object with a name", key=where)
        _check_keys(d, ("name", "csv", "column_map", "leader_length", "dt", "synthetic"), where)
        if ("csv" in d) == ("synthetic" in d):
            raise ConfigError(f"{where} needs exactly one of 'csv' or 'synthetic'", key=where)
        syn = None
        if "synthetic" in d:
            raw = dict(d["synthetic"])
            _check_keys(raw, SyntheticSpec.__dataclass_fields__, f"{where}.synthetic")
            syn = SyntheticSpec(**raw)
            canonical_model(syn.model)
        return cls(str(d["name"]), d.get("csv"), d.get("column_map"), d.get("leader_length"), d.get("dt"), syn)

    def load(self, base_dir: str | Path = ".") -> Trajectory:
        if self.synthetic is not None:
            return self.synthetic.build()
        path = Path(self.csv)
        if not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"dataset {self.name!r}: file {path} not found", key="datasets.csv")
        return load_csv(path, self.column_map, self.leader_length, self.dt)

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.synthetic is not None:
            d["synthetic"] = asdict(self.synthetic)
        else:
            d.update({"csv": self.csv, "column_map": self.column_map, "leader_length": self.leader_length,
                      "dt": self.dt})
        return d


@dataclass(frozen=True)
class GpSettings:
    kernels: tuple[str, ...] = kernels.KERNEL_KINDS
    restarts: int = 3
    max_iter: int = 200
    max_train_points: int = 400
    ard: bool = True


@dataclass(frozen=True)
class KrrSettings:
    kernels: tuple[str, ...] = kernels.KERNEL_KINDS
    lambdas: tuple[float, ...] = krr.DEFAULT_LAMBDAS
    lengthscales: tuple[float, ...] = krr.DEFAULT_LENGTHSCALES
    k_folds: int = 5
    max_train_points: int = 600


def _settings(cls, raw, where: str):
    raw = dict(raw or {})
    _check_keys(raw, cls.__dataclass_fields__, where)
    for k, v in list(raw.items()):
        if isinstance(v, list):
            raw[k] = tuple(v)
    try:
        obj = cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}", key=where) from None
    return obj


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetSpec, ...]
    models: tuple[str, ...] = MODEL_ORDER
    targets: tuple[str, ...] = VARIABLES
    split: SplitSpec = SplitSpec()
    master_seed: int = 0
    workers: int = 1
    ga: GaConfig = GaConfig()
    bounds: Mapping[str, Mapping[str, tuple[float, float]]] = field(default_factory=dict)
    gp: GpSettings = GpSettings()
    krr: KrrSettings = KrrSettings()
    lstm: LstmConfig = LstmConfig()
    base_dir: str = "."

    KEYS = ("datasets", "models", "targets", "split", "master_seed", "workers", "ga", "bounds", "gp", "krr", "lstm")

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: str | Path = ".") -> "ExperimentConfig":
        if not isinstance(d, Mapping):
            raise ConfigError("config must be a JSON object", key="<root>")
        _check_keys(d, cls.KEYS, "config")
        raw_ds = d.get("datasets")
        if not raw_ds:
            raise ConfigError("at least one dataset is required", key="datasets")
        datasets = tuple(DatasetSpec.from_dict(x, i) for i, x in enumerate(raw_ds))
        names = [ds.name for ds in datasets]
        if len(set(names)) != len(names):
            raise ConfigError("dataset names must be unique", key="datasets.name")
        models = tuple(canonical_model(m) for m in d.get("models", MODEL_ORDER))
        try:
            targets = tuple(str(TargetKind.parse(t)) for t in d.get("targets", VARIABLES))
        except ValidationError as exc:
            raise ConfigError(str(exc), key="targets") from None
        if not models:
            raise ConfigError("at least one model is required", key="models")
        if not targets:
            raise ConfigError("at least one target is required", key="targets")
        if len(set(models)) != len(models) or len(set(targets)) != len(targets):
            raise ConfigError("models and targets must not repeat", key="models")
        split_raw = dict(d.get("split") or {})
        _check_keys(split_raw, ("train_fraction",), "split")
        try:
            split_spec = SplitSpec(**split_raw)
            ga_cfg = GaConfig.from_dict(d.get("ga"))
            lstm_cfg = LstmConfig.from_dict(d.get("lstm"))
        except ValidationError as exc:
            raise ConfigError(str(exc), key="split/ga/lstm") from None
        bounds = {}
        for model_name, box in dict(d.get("bounds") or {}).items():
            key = canonical_model(model_name)
            if key in DATA_DRIVEN:
                raise ConfigError(f"bounds given for non-classical model {model_name}", key="bounds")
            try:
                classical.param_bounds(key, box)
            except ValidationError as exc:
                raise ConfigError(str(exc), key=f"bounds.{model_name}") from None
            bounds[key] = {k: tuple(map(float, v)) for k, v in box.items()}
        gp_set = _settings(GpSettings, d.get("gp"), "gp")
        krr_set = _settings(KrrSettings, d.get("krr"), "krr")
        for kind in (*gp_set.kernels, *krr_set.kernels):
            try:
                kernels.canonical_kind(kind)
            except ValidationError as exc:
                raise ConfigError(str(exc), key="gp.kernels/krr.kernels") from None
        workers = int(d.get("workers", 1))
        if workers < 1:
            raise ConfigError("workers must be >= 1", key="workers")
        return cls(datasets, models, targets, split_spec, int(d.get("master_seed", 0)), workers, ga_cfg,
                   bounds, gp_set, krr_set, lstm_cfg, str(base_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found", key="--config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}", key="--config") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "datasets": [ds.to_dict() for ds in self.datasets],
            "models": list(self.models),
            "targets": list(self.targets),
            "split": asdict(self.split),
            "master_seed": self.master_seed,
            "workers": self.workers,
            "ga": self.ga.to_dict(),
            "bounds": {k: {n: list(v) for n, v in box.items()} for k, box in self.bounds.items()},
            "gp": _jsonable(asdict(self.gp)),
            "krr": _jsonable(asdict(self.krr)),
            "lstm": asdict(self.lstm),
        }

    def dataset(self, name: str) -> DatasetSpec:
        for ds in self.datasets:
            if ds.name == name:
                return ds
        raise ConfigError(f"unknown dataset {name!r}; configured: {[d.name for d in self.datasets]}", key="--dataset")

    def cells(self) -> list[tuple[str, str, str]]:
        return [(ds.name, m, t) for ds in self.datasets for m in self.models for t in self.targets]


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def cell_seed(master_seed: int, dataset: str, model: str, target: str) -> int:
    """Stable 31-bit seed from the cell key."""
    digest = hashlib.sha256(f"{master_seed}|{dataset}|{model}|{target}".encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


# ---------------------------------------------------------------------------
# data access

_DATA_CACHE: dict[str, Trajectory] = {}


def load_dataset(config: ExperimentConfig, name: str) -> Trajectory:
    spec = config.dataset(name)
    key = json.dumps([config.base_dir, spec.to_dict()], sort_keys=True, default=str)
    if key not in _DATA_CACHE:
        _DATA_CACHE[key] = spec.load(config.base_dir)
    return _DATA_CACHE[key]


def split_dataset(config: ExperimentConfig, name: str) -> tuple[Trajectory, Trajectory]:
    return split(load_dataset(config, name), config.split)


def _one_step_data(segment: Trajectory, target) -> tuple[np.ndarray, np.ndarray]:
    """Features at step k and the target for the step after k."""
    return features(segment)[:-1], target_series(segment, target)


def _subsample(X, y, max_points: int):
    if max_points <= 0 or len(y) <= max_points:
        return X, y
    idx = np.unique(np.round(np.linspace(0, len(y) - 1, max_points)).astype(int))
    return X[idx], y[idx]


# ---------------------------------------------------------------------------
# per-model fitting


@dataclass
class CellOutcome:
    key: tuple[str, str, str]
    seed: int
    rows: list[ResultsRow]
    artifact: str | None = None
    summary: dict = field(default_factory=dict)
    wall_time: float = 0.0
    error: str | None = None


class _Fitted:
    """A fitted model that can be rolled out and written to an artifact directory."""

    window = 1

    def rollout(self, target, test: Trajectory, history: Trajectory) -> RolloutResult:
        return rollout_predictor(self.predict_window, target, test, window=self.window, history=history)

    def predict_window(self, win: np.ndarray) -> float:
        raise NotImplementedError

    def save(self, cell_dir: Path) -> dict:
        raise NotImplementedError


class _ClassicalFit(_Fitted):
    def __init__(self, model: str, params: Mapping[str, float], extra: dict | None = None):
        self.model, self.params, self.extra = model, dict(params), extra or {}

    def rollout(self, target, test, history):
        return rollout_classical(classical.accel_function(self.model, self.params), test)

    def save(self, cell_dir):
        return {"kind": "classical", "model": self.model, "params": self.params, **self.extra}


class _GpFit(_Fitted):
    def __init__(self, model: gp.GpModel, extra: dict | None = None):
        self.model, self.extra = model, extra or {}

    def predict_window(self, win):
        return float(gp.predict_mean(self.model, win[-1:])[0])

    def save(self, cell_dir):
        m = self.model
        np.savez(cell_dir / "gp_model.npz", X_train=m.X_train, y_train=m.y_train, alpha=m.alpha, chol=m.chol)
        return {"kind": "GP", "kernel": m.kernel.to_dict(), "noise": m.noise, "jitter": m.jitter,
                "standardizer": m.standardizer.to_dict(), **self.extra}


class _KrrFit(_Fitted):
    def __init__(self, model: krr.KrrModel, extra: dict | None = None):
        self.model, self.extra = model, extra or {}

    def predict_window(self, win):
        return float(krr.predict(self.model, win[-1:])[0])

    def save(self, cell_dir):
        m = self.model
        np.savez(cell_dir / "krr_model.npz", X_train=m.X_train, weights=m.weights)
        return {"kind": "KRR", "kernel": m.kernel.to_dict(), "lambda": m.lam,
                "standardizer": m.standardizer.to_dict(), **self.extra}


class _LstmFit(_Fitted):
    def __init__(self, model: lstm.LstmModel):
        self.model = model
        self.window = model.config.window

    def predict_window(self, win):
        return float(self.model.predict(win[None])[0])

    def save(self, cell_dir):
        lstm.save_params(self.model.params, cell_dir / "lstm_params")
        return {"kind": "LSTM", "config": asdict(self.model.config), "standardizer": self.model.standardizer.to_dict(),
                "final_loss": self.model.loss_history[-1] if self.model.loss_history else None}


def _fit_classical(config: ExperimentConfig, model: str, train: Trajectory, target: str, seed: int) -> _ClassicalFit:
    res = calibrate(model, train, target, bounds=config.bounds.get(model), config=replace(config.ga, seed=seed))
    return _ClassicalFit(model, res.params_dict(), {"train_rmse": res.train_rmse, "generations": len(res.history),
                                                     "evaluations": res.evaluations, "ga_rmse": res.ga_rmse})


def _selection_score(sim: RolloutResult, truth: Trajectory) -> np.ndarray:
    """Per-variable RMSE for kernel ranking; truncated rollouts rank last."""
    score = evaluate_rollout(sim, truth)
    if score.diverged or score.collision:
        return np.full(3, np.inf)
    return np.array([score[v] for v in VARIABLES])


def _fit_gp(config: ExperimentConfig, train: Trajectory, target: str, seed: int) -> tuple[_GpFit, list[dict]]:
    """Fit each configured kernel by maximum likelihood, then keep the one whose
    free-simulation RMSEs on the training segment have the best mean rank."""
    st = config.gp
    X, y = _subsample(*_one_step_data(train, target), st.max_train_points)
    candidates, scores, table = [], [], []
    for kind in st.kernels:
        try:
            m = gp.optimize_hyperparams(X, y, kind, restarts=st.restarts, seed=seed, ard=st.ard,
                                        max_iter=st.max_iter)
        except AllRestartsFailed as exc:
            table.append({"kernel": kernels.canonical_kind(kind), "error": str(exc)})
            continue
        fit = _GpFit(m)
        sc = _selection_score(rollout_predictor(fit.predict_window, target, train), train)
        candidates.append(fit)
        scores.append(sc)
        table.append({"kernel": m.kernel.kind, "lml": gp.log_marginal_likelihood(m)[0],
                      **{f"train_rmse_{v}": float(x) for v, x in zip(VARIABLES, sc)}})
    if not candidates:
        raise AllRestartsFailed("no GP kernel could be fitted")
    S = np.array(scores)
    ranks = np.column_stack([rankdata(S[:, j], method="average") for j in range(S.shape[1])])
    mean_rank = ranks.mean(axis=1)
    best = int(np.argmin(mean_rank))  # argmin keeps the first kernel on ties
    fitted = [r for r in table if "error" not in r]
    for r, mr in zip(fitted, mean_rank):
        r["mean_rank"] = float(mr)
    candidates[best].extra = {"selected_from": [r["kernel"] for r in fitted], "mean_rank": float(mean_rank[best])}
    return candidates[best], table


def _fit_krr(config: ExperimentConfig, train: Trajectory, target: str) -> tuple[_KrrFit, list]:
    st = config.krr
    X, y = _subsample(*_one_step_data(train, target), st.max_train_points)
    model, table = krr.grid_search_cv(X, y, st.kernels, st.lambdas, st.lengthscales, k_folds=st.k_folds)
    best = min(table, key=lambda r: (r.cv_mse if np.isfinite(r.cv_mse) else np.inf, -r.lam, -r.lengthscale))
    return _KrrFit(model, {"cv_mse": best.cv_mse, "lengthscale": best.lengthscale}), table


def _fit_lstm(config: ExperimentConfig, train: Trajectory, target: str, seed: int) -> _LstmFit:
    return _LstmFit(lstm.fit(train, target, replace(config.lstm, seed=seed)))


# ---------------------------------------------------------------------------
# artifacts


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(_jsonable(obj), sort_keys=True, default=str).encode()).hexdigest()


def _model_settings(config: ExperimentConfig, model: str) -> dict:
    if model == "GP":
        return _jsonable(asdict(config.gp))
    if model == "KRR":
        return _jsonable(asdict(config.krr))
    if model == "LSTM":
        return asdict(config.lstm)
    return {"ga": config.ga.to_dict(), "bounds": {k: list(v) for k, v in config.bounds.get(model, {}).items()}}


def _cell_digest(config: ExperimentConfig, key, seed: int) -> str:
    ds, model, target = key
    return _digest({"key": list(key), "seed": seed, "dataset": config.dataset(ds).to_dict(),
                    "split": asdict(config.split), "settings": _model_settings(config, model)})


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _register(tmp: Path, final: Path) -> None:
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


# ---------------------------------------------------------------------------
# cells and grids


def run_cell(config: ExperimentConfig, key: tuple[str, str, str], out_dir: str | Path | None = None) -> CellOutcome:
    """Fit, roll out on the test segment and score one grid cell.

    With ``out_dir`` the fitted model, its rollout and a ``cell.json`` summary
    go to ``out_dir/cells/<content hash>``. Errors propagate with the cell key
    prepended to their message.
    """
    dataset, model, target = key[0], canonical_model(key[1]), str(TargetKind.parse(key[2]))
    key = (dataset, model, target)
    seed = cell_seed(config.master_seed, *key)
    t_start = time.perf_counter()
    try:
        train, test = split_dataset(config, dataset)
        tables: dict[str, list] = {}
        if model == "GP":
            fit, tables["gp_kernels"] = _fit_gp(config, train, target, seed)
        elif model == "KRR":
            fit, cv = _fit_krr(config, train, target)
            tables["cv_table"] = cv
        elif model == "LSTM":
            fit = _fit_lstm(config, train, target, seed)
        else:
            fit = _fit_classical(config, model, train, target, seed)
        sim = fit.rollout(target, test, train)
        score = evaluate_rollout(sim, test)
    except CfBenchError as exc:
        exc.args = (f"cell {key}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
        exc.cell_key = key
        raise
    rows = rows_for_cell(dataset, model, target, score)
    summary = {"rmse": {v: score[v] for v in VARIABLES}, "steps": score.steps, "diverged": score.diverged,
               "collision": score.collision}
    artifact = None
    if out_dir is not None:
        cells = Path(out_dir) / "cells"
        cells.mkdir(parents=True, exist_ok=True)
        name = _cell_digest(config, key, seed)[:16]
        tmp = cells / f".tmp-{name}-{os.getpid()}"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir()
        fitted = fit.save(tmp)
        sim.to_csv(tmp / "rollout.csv")
        if "cv_table" in tables:
            krr.write_cv_table(tables["cv_table"], tmp / "cv_table.csv")
        if "gp_kernels" in tables:
            _write_json(tmp / "gp_kernels.json", tables["gp_kernels"])
        _write_json(tmp / "cell.json", {"dataset": dataset, "model": model, "target": target, "seed": seed,
                                        "fitted": fitted, **summary})
        _register(tmp, cells / name)
        artifact = f"cells/{name}"
    return CellOutcome(key, seed, rows, artifact, summary, time.perf_counter() - t_start)


def _run_cell_safe(args) -> CellOutcome:
    config, key, out_dir = args
    t_start = time.perf_counter()
    try:
        return run_cell(config, key, out_dir)
    except Exception as exc:  # noqa: BLE001 - a failed cell becomes diverged rows
        log.warning("cell %s failed: %s", key, exc)
        key = (key[0], canonical_model(key[1]), str(TargetKind.parse(key[2])))
        return CellOutcome(key, cell_seed(config.master_seed, *key), rows_for_cell(*key, None),
                           wall_time=time.perf_counter() - t_start, error=f"{type(exc).__name__}: {exc}")


def run_grid(config: ExperimentConfig, out_dir: str | Path, workers: int | None = None) -> tuple[ResultsTable, dict]:
    """Run every cell once and write ``results.csv``, ``manifest.json`` and ``cells/``.

    Failed cells are recorded as NaN rows flagged diverged; the grid itself
    only fails on configuration or data-loading errors.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = config.workers if workers is None else int(workers)
    if workers < 1:
        raise ConfigError("workers must be >= 1", key="workers")
    for ds in config.datasets:
        split_dataset(config, ds.name)  # fail fast on unloadable data
    jobs = [(config, key, str(out_dir)) for key in config.cells()]
    if workers == 1 or len(jobs) == 1:
        outcomes = [_run_cell_safe(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell_safe, jobs))
    table = build_results_table(outcomes)
    table.to_csv(out_dir / "results.csv")
    manifest = {
        "cfbench_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "master_seed": config.master_seed,
        "workers": workers,
        "config": config.to_dict(),
        "cells": [{"dataset": o.key[0], "model": o.key[1], "target": o.key[2], "seed": o.seed,
                   "artifact": o.artifact, "error": o.error, "wall_time_s": round(o.wall_time, 3)}
                  for o in outcomes],
    }
    _write_json(out_dir / "manifest.json", manifest)
    return table, manifest


# ---------------------------------------------------------------------------
# re-evaluation from saved artifacts


def load_fitted(cell_dir: str | Path) -> tuple[_Fitted, dict]:
    """Rebuild the fitted model stored in an artifact directory."""
    cell_dir = Path(cell_dir)
    info_path = cell_dir / "cell.json"
    if not info_path.exists():
        raise ValidationError(f"{cell_dir} is not a cell artifact directory (no cell.json)")
    info = json.loads(info_path.read_text(encoding="utf-8"))
    f = info["fitted"]
    kind = f["kind"]
    if kind == "classical":
        return _ClassicalFit(f["model"], f["params"]), info
    st = Standardizer.from_dict(f["standardizer"])
    kernel = KernelConfig.from_dict(f["kernel"]) if "kernel" in f else None
    if kind == "GP":
        z = np.load(cell_dir / "gp_model.npz")
        return _GpFit(gp.GpModel(z["X_train"], z["y_train"], z["alpha"], z["chol"], kernel, f["noise"], st,
                                 f["jitter"])), info
    if kind == "KRR":
        z = np.load(cell_dir / "krr_model.npz")
        return _KrrFit(krr.KrrModel(z["X_train"], z["weights"], kernel, f["lambda"], st)), info
    if kind == "LSTM":
        params = lstm.load_params(cell_dir / "lstm_params")
        return _LstmFit(lstm.LstmModel(params, st, LstmConfig(**f["config"]))), info
    raise ValidationError(f"unknown fitted model kind {kind!r} in {info_path}")


def evaluate_artifact(config: ExperimentConfig, cell_dir: str | Path) -> tuple[RolloutScore, RolloutResult, dict]:
    """Roll a saved model out again on its dataset's test segment."""
    fit, info = load_fitted(cell_dir)
    train, test = split_dataset(config, info["dataset"])
    sim = fit.rollout(info["target"], test, train)
    return evaluate_rollout(sim, test), sim, info


__all__ = ["ExperimentConfig", "DatasetSpec", "SyntheticSpec", "GpSettings", "KrrSettings", "CellOutcome",
           "run_cell", "run_grid", "cell_seed", "canonical_model", "preset_params", "load_dataset",
           "split_dataset", "load_fitted", "evaluate_artifact", "DATA_DRIVEN", "PRESETS"]
