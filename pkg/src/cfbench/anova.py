"""Linear-model ANOVA over the results grid with treatment-coded factors.

Coefficient t-tests give one p-value per factor level (and per interaction
cell); a drop-one-group F test per factor is reported alongside. The t and F
distribution functions are evaluated through a regularized incomplete beta
function computed with a Lentz continued fraction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidDof, PerfectCollinearity, SingleLevelFactor, TooFewRows, ValidationError
from .evaluation import VARIABLES, ResultsRow, ResultsTable

FACTORS = ("Dataset", "Model", "Target")
SIGNIFICANCE = 0.05
ZERO_RESIDUAL = 1e-12

_FACTOR_ATTR = {"Dataset": "dataset", "Model": "model", "Target": "target"}


# ---------------------------------------------------------------------------
# distribution functions


def _beta_cf(a: float, b: float, x: float, eps: float = 1e-16, max_iter: int = 20000) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if not (a > 0 and b > 0):
        raise ValidationError("betainc needs a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"betainc argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # use the expansion that converges fastest, flipping via the symmetry I_x(a,b) = 1 - I_{1-x}(b,a)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _check_dof(*dofs):
    for d in dofs:
        if not (math.isfinite(d) and d >= 1):
            raise InvalidDof(f"degrees of freedom must be finite and >= 1, got {d}")


def _t_tail(x: float, dof: float) -> float:
    """``P(|T| >= |x|)``; for small ``|x|`` the complementary argument avoids rounding ``dof/(dof+x^2)`` to 1."""
    x2 = x * x
    if x2 < dof:
        return 1.0 - betainc(0.5, 0.5 * dof, x2 / (dof + x2))
    return betainc(0.5 * dof, 0.5, dof / (dof + x2))


def t_cdf(x: float, dof: float) -> float:
    """Student-t distribution function."""
    _check_dof(dof)
    if math.isnan(x):
        return float("nan")
    if math.isinf(x):
        return 1.0 if x > 0 else 0.0
    return 0.5 + math.copysign(0.5 * (1.0 - _t_tail(x, dof)), x)


def t_two_sided_p(t: float, dof: float) -> float:
    """``P(|T| >= |t|)``, computed from the tail directly to keep small p-values accurate."""
    _check_dof(dof)
    if math.isinf(t):
        return 0.0
    return _t_tail(t, dof)


def f_cdf(x: float, d1: float, d2: float) -> float:
    """Fisher F distribution function."""
    _check_dof(d1, d2)
    if math.isnan(x):
        return float("nan")
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return betainc(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail ``1 - f_cdf``, evaluated without cancellation."""
    _check_dof(d1, d2)
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return betainc(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x))


# ---------------------------------------------------------------------------
# design matrix


@dataclass(frozen=True)
class Design:
    matrix: np.ndarray          # (n, p) including the intercept column
    labels: list[str]           # one per column; first is "Intercept"
    groups: dict[str, list[int]]  # term group -> column indices
    column_factor: list[str]    # factor (or "A:B") per column


def _levels(rows: Sequence[ResultsRow], factor: str) -> list[str]:
    return sorted({getattr(rows_i, _FACTOR_ATTR[factor]) for rows_i in rows})


def _canonical_factor(name: str) -> str:
    for f in FACTORS:
        if str(name).strip().lower() in (f.lower(), _FACTOR_ATTR[f], f.lower()[:4]):
            return f
    raise ValidationError(f"unknown factor {name!r}; expected one of {FACTORS}")


def parse_interaction(spec) -> tuple[str, str] | None:
    """``"model,target"`` or a 2-sequence -> canonical factor pair."""
    if spec is None or spec == "":
        return None
    parts = spec.split(",") if isinstance(spec, str) else list(spec)
    if len(parts) != 2:
        raise ValidationError(f"interaction must name exactly two factors, got {spec!r}")
    a, b = (_canonical_factor(p) for p in parts)
    if a == b:
        raise ValidationError("interaction factors must differ")
    return a, b


def dummy_encode(rows: Sequence[ResultsRow], factors: Sequence[str] = FACTORS,
                 interaction: tuple[str, str] | None = None) -> Design:
    """Treatment coding with the alphabetically first level of each factor as reference.

    Main-effect columns are labelled by their level name. Interaction columns
    are products of main-effect columns labelled ``"LevelA-LevelB"``. If two
    factors share a level name, main-effect labels become ``"Factor=level"``.

    Raises:
        SingleLevelFactor: an included factor has only one level.
    """
    rows = list(rows)
    factors = [_canonical_factor(f) for f in factors]
    interaction = parse_interaction(interaction)
    if interaction:
        for f in interaction:
            if f not in factors:
                factors.append(f)
    n = len(rows)
    levels = {}
    for f in factors:
        levels[f] = _levels(rows, f)
        if len(levels[f]) < 2:
            raise SingleLevelFactor(f"factor {f} has a single level {levels[f]}")
    all_levels = [lv for f in factors for lv in levels[f][1:]]
    qualify = len(set(all_levels)) != len(all_levels)

    cols = [np.ones(n)]
    labels = ["Intercept"]
    col_factor = ["Intercept"]
    groups: dict[str, list[int]] = {}
    main_cols: dict[str, list[tuple[str, np.ndarray]]] = {}
    for f in factors:
        values = [getattr(r, _FACTOR_ATTR[f]) for r in rows]
        main_cols[f] = []
        for lv in levels[f][1:]:
            col = np.array([1.0 if v == lv else 0.0 for v in values])
            groups.setdefault(f, []).append(len(cols))
            cols.append(col)
            labels.append(f"{f}={lv}" if qualify else lv)
            col_factor.append(f)
            main_cols[f].append((lv, col))
    if interaction:
        fa, fb = interaction
        key = f"{fa}:{fb}"
        for la, ca in main_cols[fa]:
            for lb, cb in main_cols[fb]:
                groups.setdefault(key, []).append(len(cols))
                cols.append(ca * cb)
                labels.append(f"{la}-{lb}")
                col_factor.append(key)
    return Design(np.column_stack(cols), labels, groups, col_factor)


# ---------------------------------------------------------------------------
# OLS


@dataclass(frozen=True)
class AnovaTerm:
    label: str
    factor: str
    coefficient: float
    std_error: float
    t_value: float
    p_value: float

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE


@dataclass(frozen=True)
class FactorTest:
    factor: str
    df_num: int
    df_den: int
    f_value: float
    p_value: float


@dataclass
class AnovaTable:
    terms: list[AnovaTerm]
    dependent: str
    formula: str
    df_resid: int
    r_squared: float
    fitted: np.ndarray
    factor_tests: list[FactorTest] = field(default_factory=list)
    n_obs: int = 0

    def term(self, label: str) -> AnovaTerm:
        for t in self.terms:
            if t.label == label:
                return t
        raise KeyError(label)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["term", "factor", "coefficient", "std_error", "t_value", "p_value", "significant"])
            for t in self.terms:
                w.writerow([t.label, t.factor, repr(t.coefficient), repr(t.std_error), repr(t.t_value),
                            repr(t.p_value), int(t.significant)])

    def factor_tests_to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["factor", "df_num", "df_den", "F", "p_value"])
            for ft in self.factor_tests:
                w.writerow([ft.factor, ft.df_num, ft.df_den, repr(ft.f_value), repr(ft.p_value)])


def _qr_solve(X: np.ndarray, y: np.ndarray):
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.size and diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise PerfectCollinearity("design matrix is rank deficient")
    beta = np.linalg.solve(R, Q.T @ y)
    return beta, R


def _rss(X, y) -> float:
    beta, _ = _qr_solve(X, y)
    r = y - X @ beta
    return float(r @ r)


def ols_fit(X, y, labels: Sequence[str] | None = None, groups: dict[str, list[int]] | None = None,
            dependent: str = "y", column_factor: Sequence[str] | None = None, formula: str = "") -> AnovaTable:
    """Least squares by QR with coefficient t-tests (two-sided, ``n - p`` dof).

    If the residual variance is below ``1e-12`` the t statistics are
    undefined; p is then 0 for non-zero coefficients and 1 for zero ones.
    ``groups`` adds an F test per named column group, comparing the full
    model with the model that drops those columns.

    Raises:
        TooFewRows: fewer than ``p + 1`` observations.
        PerfectCollinearity: the design is not of full column rank.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if len(y) != n:
        raise ValidationError(f"design has {n} rows but y has {len(y)}")
    if n < p + 1:
        raise TooFewRows(f"{n} observations for {p} coefficients")
    labels = list(labels) if labels is not None else [f"x{j}" for j in range(p)]
    column_factor = list(column_factor) if column_factor is not None else [""] * p
    beta, R = _qr_solve(X, y)
    fitted = X @ beta
    resid = y - fitted
    df = n - p
    rss = float(resid @ resid)
    sigma2 = rss / df
    R_inv = np.linalg.solve(R, np.eye(p))
    se = np.sqrt(sigma2 * np.sum(R_inv**2, axis=1))
    scale = max(1.0, float(np.max(np.abs(y))))

    terms = []
    for j in range(p):
        if sigma2 < ZERO_RESIDUAL:
            nonzero = abs(beta[j]) > 1e-9 * scale
            t_val = math.copysign(math.inf, beta[j]) if nonzero else 0.0
            p_val = 0.0 if nonzero else 1.0
        else:
            t_val = float(beta[j] / se[j])
            p_val = t_two_sided_p(t_val, df)
        terms.append(AnovaTerm(labels[j], column_factor[j], float(beta[j]), float(se[j]), t_val, p_val))

    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0

    tests = []
    for name, idx in (groups or {}).items():
        keep = [j for j in range(p) if j not in set(idx)]
        rss_red = _rss(X[:, keep], y)
        q = len(idx)
        gain = max(rss_red - rss, 0.0)
        if sigma2 < ZERO_RESIDUAL:
            nonzero = gain > 1e-9 * max(tss, 1.0)
            f_val, p_val = (math.inf, 0.0) if nonzero else (0.0, 1.0)
        else:
            f_val = (gain / q) / sigma2
            p_val = f_sf(f_val, q, df)
        tests.append(FactorTest(name, q, df, f_val, p_val))

    return AnovaTable(terms, dependent, formula, df, r2, fitted, tests, n)


# ---------------------------------------------------------------------------
# grid-level entry point


def parse_dependent(dependent) -> str:
    """``"rmse_s"``, ``"RMSE(s)"`` or ``"s"`` -> ``"s"``."""
    text = str(dependent).strip().lower().replace("rmse", "").strip("_()[] ")
    if text not in VARIABLES:
        raise ValidationError(f"dependent must name one of {VARIABLES}, got {dependent!r}")
    return text


def run_anova(results: ResultsTable, dependent, interaction=None, factors: Sequence[str] | None = None,
              log: bool = False, exclude_diverged: bool = False) -> AnovaTable:
    """Fit main effects (plus at most one interaction) to one RMSE variable.

    Rows whose RMSE is not finite are always dropped. ``factors=None`` uses
    every factor with at least two levels in the selected rows; an explicit
    list is used as given. ``log=True`` analyses ``ln(RMSE)`` (zero RMSE is
    clipped at ``1e-12`` first).
    """
    var = parse_dependent(dependent)
    rows = [r for r in results.select(var) if math.isfinite(r.rmse)]
    if exclude_diverged:
        rows = [r for r in rows if not (r.diverged or r.collision)]
    if not rows:
        raise TooFewRows(f"no usable rows for RMSE({var})")
    inter = parse_interaction(interaction)
    if factors is None:
        factors = [f for f in FACTORS if len(_levels(rows, f)) >= 2]
    design = dummy_encode(rows, factors, inter)
    y = np.array([r.rmse for r in rows])
    if log:
        y = np.log(np.maximum(y, 1e-12))
    dep_label = f"log RMSE({var})" if log else f"RMSE({var})"
    used = [f for f in FACTORS if f in design.groups]
    formula = f"{dep_label} ~ " + " + ".join(used + ([f"{inter[0]}:{inter[1]}"] if inter else []))
    return ols_fit(design.matrix, y, design.labels, design.groups, dep_label, design.column_factor, formula)


__all__ = ["betainc", "t_cdf", "t_two_sided_p", "f_cdf", "f_sf", "dummy_encode", "Design", "ols_fit",
           "AnovaTable", "AnovaTerm", "FactorTest", "run_anova", "parse_dependent", "parse_interaction",
           "FACTORS", "SIGNIFICANCE"]
