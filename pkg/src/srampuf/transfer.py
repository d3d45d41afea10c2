"""Logistic maps from SD to the start-up probability SUP1, and their fits.

Two model families are provided.  :class:`SingleLogistic` is
``a / (1 + exp(-k sd))``.  :class:`DoubleLogistic` mixes two unit-height
logistics with weights ``m`` and ``1 - m``, so it passes through (0, 0.5) and
saturates at 0 and 1 by construction.

Fits pair a population of SD values with a population of SUP1 values by
rank (smallest SD with smallest SUP1, and so on) and minimise the squared
residual over the pairs with a Nelder-Mead simplex in an unconstrained
reparameterisation (``log k``, ``logit m``).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .errors import MalformedError, NoConvergenceError, SizeMismatchError, UnreachableError
from .variation import exceedance

DOUBLE_STARTS = ((0.2, 100.0, 2000.0), (0.5, 50.0, 500.0), (0.1, 200.0, 5000.0),
                 (0.3, 150.0, 1000.0))
SINGLE_START = 100.0
HISTOGRAM_BINS = 100
INVERT_TOLERANCE = 1e-5
TABLE_COLUMNS = ("probability", "sd_th_volts", "percentage_of_cells")


@dataclass(frozen=True)
class SingleLogistic:
    k: float
    a: float = 1.0

    def __post_init__(self):
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ValueError(f"k must be positive, got {self.k}")
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")

    def __call__(self, sd):
        return eval_single(self, sd)

    def to_dict(self) -> dict:
        return {"type": "single", "a": self.a, "k": self.k}


@dataclass(frozen=True)
class DoubleLogistic:
    m: float
    k1: float
    k2: float

    def __post_init__(self):
        if not 0 < self.m < 1:
            raise ValueError(f"m must lie in (0, 1), got {self.m}")
        if not (self.k1 > 0 and self.k2 > 0 and math.isfinite(self.k1) and math.isfinite(self.k2)):
            raise ValueError("k1 and k2 must be positive")

    def __call__(self, sd):
        return eval_double(self, sd)

    def canonical(self) -> "DoubleLogistic":
        """Same curve with the components ordered so that k1 <= k2."""
        if self.k1 <= self.k2:
            return self
        return DoubleLogistic(1.0 - self.m, self.k2, self.k1)

    def to_dict(self) -> dict:
        return {"type": "double", "m": self.m, "k1": self.k1, "k2": self.k2}


# Reference parameter sets used as CLI defaults.
REFERENCE_SINGLE = SingleLogistic(k=195.4)
REFERENCE_DOUBLE = DoubleLogistic(m=0.158, k1=101.2, k2=2348.0)


@dataclass(frozen=True)
class FitResult:
    model: SingleLogistic | DoubleLogistic
    residual: float
    iterations: int
    converged: bool
    flat: bool = False

    def to_dict(self) -> dict:
        d = self.model.to_dict()
        d["residual"] = self.residual
        return d


def _ret(x, out):
    return float(out) if np.ndim(x) == 0 else out


def eval_single(model: SingleLogistic, sd):
    """``a / (1 + exp(-k sd))``; saturates without overflow."""
    x = np.asarray(sd, dtype=float)
    return _ret(sd, model.a * expit(model.k * x))


def eval_double(model: DoubleLogistic, sd):
    x = np.asarray(sd, dtype=float)
    return _ret(sd, model.m * expit(model.k1 * x) + (1.0 - model.m) * expit(model.k2 * x))


def evaluate(model, sd):
    if isinstance(model, DoubleLogistic):
        return eval_double(model, sd)
    return eval_single(model, sd)


def slope_at_zero(model) -> float:
    """d SUP1 / d SD at SD = 0, in 1/V."""
    if isinstance(model, SingleLogistic):
        return model.a * model.k / 4.0
    return (model.m * model.k1 + (1.0 - model.m) * model.k2) / 4.0


def quantile_pairs(sd_samples, sup_samples) -> np.ndarray:
    """Rank-by-rank pairing of two equally sized samples, shape (n, 2)."""
    sd = np.asarray(sd_samples, dtype=float).ravel()
    sup = np.asarray(sup_samples, dtype=float).ravel()
    if sd.size != sup.size:
        raise SizeMismatchError(f"{sd.size} SD samples but {sup.size} SUP samples")
    return np.column_stack([np.sort(sd), np.sort(sup)])


def _as_pairs(pairs) -> np.ndarray:
    p = np.asarray(pairs, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError("pairs must have shape (n, 2)")
    return p


def _histogram_loss(pred, target_freq):
    counts, _ = np.histogram(pred, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    return float(np.sum((counts / pred.size - target_freq) ** 2))


def _objective(kind, pairs, objective):
    x, y = pairs[:, 0], pairs[:, 1]
    if objective == "pairs":
        def loss(pred):
            return float(np.sum((pred - y) ** 2))
    elif objective == "histogram":
        target, _ = np.histogram(y, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
        target = target / y.size

        def loss(pred):
            return _histogram_loss(pred, target)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    if kind == "single":
        return lambda th: loss(expit(math.exp(th[0]) * x))

    def f(th):
        m = expit(th[0])
        return loss(m * expit(math.exp(th[1]) * x) + (1.0 - m) * expit(math.exp(th[2]) * x))
    return f


def _is_flat(f, theta, value) -> bool:
    scale = max(abs(value), 1e-300)
    for d in np.eye(len(theta)):
        for step in (-1.0, 1.0):
            if abs(f(theta + step * d) - value) > 1e-12 * scale + 1e-300:
                return False
    return True


def fit_single(pairs, k0: float = SINGLE_START, objective: str = "pairs",
               max_iter: int = 2000) -> FitResult:
    """Least-squares ``k`` of a unit-height single logistic.

    When the residual does not depend on ``k`` (for example a lone pair at
    (0, 0.5)) the result is returned with ``flat=True`` and
    ``converged=False`` instead of raising.
    """
    pairs = _as_pairs(pairs)
    if len(pairs) < 1:
        raise ValueError("need at least one pair")
    f = _objective("single", pairs, objective)
    res = minimize(f, [math.log(k0)], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": max_iter})
    theta = np.asarray(res.x, dtype=float)
    value = float(res.fun)
    if _is_flat(f, theta, value):
        return FitResult(SingleLogistic(k=math.exp(theta[0])), value, int(res.nit), False, True)
    if not res.success:
        raise NoConvergenceError(f"single-logistic fit: {res.message}")
    return FitResult(SingleLogistic(k=math.exp(theta[0])), value, int(res.nit), True)


def fit_double(pairs, starts=DOUBLE_STARTS, objective: str = "pairs",
               max_iter: int = 4000) -> FitResult:
    """Least-squares two-component logistic, best of several simplex starts.

    The result is put in canonical order (``k1 <= k2``).
    """
    pairs = _as_pairs(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least three pairs")
    f = _objective("double", pairs, objective)
    best = None
    iterations = 0
    for m0, k10, k20 in starts:
        th0 = [float(logit(m0)), math.log(k10), math.log(k20)]
        res = minimize(f, th0, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": max_iter,
                                "maxfev": 2 * max_iter})
        iterations += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res
    if not best.success:
        raise NoConvergenceError(f"double-logistic fit: {best.message}")
    m = float(expit(best.x[0]))
    m = min(max(m, np.nextafter(0.0, 1.0)), np.nextafter(1.0, 0.0))
    model = DoubleLogistic(m, math.exp(best.x[1]), math.exp(best.x[2])).canonical()
    return FitResult(model, float(best.fun), iterations, True)


def invert_threshold(model, p: float, vdd: float = 1.2,
                     tol: float = INVERT_TOLERANCE) -> float:
    """SD at which the model reaches probability ``p`` (bisection on [0, vdd])."""
    if not 0.5 < p < 1.0:
        raise ValueError(f"p must lie in (0.5, 1), got {p}")
    if evaluate(model, vdd) < p:
        raise UnreachableError(f"model stays below {p} on [0, {vdd}] V")
    lo, hi = 0.0, float(vdd)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if evaluate(model, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def reliable_fraction(sd_records, model, p: float, vdd: float = 1.2) -> float:
    """Fraction of cells whose |SD| reaches the threshold for probability ``p``."""
    return exceedance(sd_records, invert_threshold(model, p, vdd))


def threshold_table(sd_records, model, probabilities=(0.99, 0.98, 0.95),
                    vdd: float = 1.2) -> list[tuple[float, float, float]]:
    """Rows of (p, SD threshold in V, percentage of cells), descending p."""
    rows = []
    for p in sorted(probabilities, reverse=True):
        th = invert_threshold(model, p, vdd)
        rows.append((float(p), th, 100.0 * exceedance(sd_records, th)))
    return rows


# --------------------------------------------------------------------------
# persistence


def write_model_json(result: FitResult | SingleLogistic | DoubleLogistic, path) -> Path:
    path = Path(path)
    d = result.to_dict()
    path.write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
    return path


def model_from_dict(d: dict):
    try:
        kind = d["type"]
        if kind == "single":
            return SingleLogistic(k=float(d["k"]), a=float(d.get("a", 1.0)))
        if kind == "double":
            return DoubleLogistic(float(d["m"]), float(d["k1"]), float(d["k2"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad model record ({exc})") from exc
    raise ValueError(f"unknown model type {kind!r}")


def read_model_json(path):
    path = Path(path)
    try:
        return model_from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise MalformedError(str(exc), path, exc.lineno) from exc
    except ValueError as exc:
        raise MalformedError(str(exc), path) from exc


def write_threshold_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for p, th, pct in rows:
            w.writerow([repr(p), repr(th), repr(pct)])
    return path


def read_pairs_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read two columns ``sd_volts,sup1`` (header required)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sd_volts", "sup1"]:
            raise MalformedError("expected header sd_volts,sup1", path, 1)
        sd, sup = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                a, b = float(row[0]), float(row[1])
            except (ValueError, IndexError) as exc:
                raise MalformedError(f"bad row ({exc})", path, lineno) from exc
            if not 0.0 <= b <= 1.0:
                raise MalformedError(f"sup1 = {b} outside [0, 1]", path, lineno)
            sd.append(a)
            sup.append(b)
    return np.array(sd), np.array(sup)
