"""Parametric and isotonic post-hoc calibrators for binary predictions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .core import BinaryDataset, DomainError, FormatError, clip_prob, logit, mean_loss, sigmoid


@dataclass(frozen=True)
class PlattModel:
    a: float
    b: float

    def predict(self, p):
        return sigmoid(self.a * logit(p) + self.b)

    def to_dict(self) -> dict:
        return {"variant": "platt", "params": {"a": self.a, "b": self.b}}


@dataclass(frozen=True)
class BetaModel:
    a: float
    b: float
    c: float

    def predict(self, p):
        pc = clip_prob(np.asarray(p, dtype=float))
        return sigmoid(self.c + self.a * np.log(pc) - self.b * np.log1p(-pc))

    def to_dict(self) -> dict:
        return {"variant": "beta", "params": {"a": self.a, "b": self.b, "c": self.c}}


@dataclass(frozen=True)
class TemperatureModel:
    t: float

    def predict(self, p):
        return sigmoid(logit(p) / self.t)

    def to_dict(self) -> dict:
        return {"variant": "temperature", "params": {"t": self.t}}


@dataclass(frozen=True)
class IsotonicModel:
    """Step function: ``levels[j]`` on ``[thresholds[j], thresholds[j + 1])``."""

    thresholds: np.ndarray
    levels: np.ndarray

    def predict(self, p):
        k = np.searchsorted(self.thresholds, np.asarray(p, dtype=float), side="right") - 1
        return self.levels[np.clip(k, 0, self.levels.size - 1)]

    def to_dict(self) -> dict:
        return {
            "variant": "isotonic",
            "params": {"thresholds": self.thresholds.tolist(), "levels": self.levels.tolist()},
        }


ScalerModel = PlattModel | BetaModel | TemperatureModel | IsotonicModel


def apply_scaler(model: ScalerModel, p):
    return model.predict(p)


def scaler_from_dict(obj: dict) -> ScalerModel:
    variant = obj.get("variant")
    params = obj.get("params", {})
    try:
        if variant == "platt":
            return PlattModel(float(params["a"]), float(params["b"]))
        if variant == "beta":
            return BetaModel(float(params["a"]), float(params["b"]), float(params["c"]))
        if variant == "temperature":
            return TemperatureModel(float(params["t"]))
        if variant == "isotonic":
            return IsotonicModel(
                np.asarray(params["thresholds"], float), np.asarray(params["levels"], float)
            )
    except KeyError as exc:
        raise FormatError(f"missing parameter {exc} for variant {variant!r}") from None
    raise FormatError(f"unknown scaler variant {variant!r}")


def _check_two_classes(dataset: BinaryDataset):
    if len(dataset) < 2:
        raise DomainError("need at least two instances to fit a scaler")
    if dataset.labels.min() == dataset.labels.max():
        raise DomainError(
            "all labels are equal; the log-loss fit degenerates (use isotonic or more data)"
        )


def _logreg_newton(X: np.ndarray, y: np.ndarray, max_iter: int = 1000, tol: float = 1e-8):
    """Damped Newton for mean log-loss of sigmoid(X @ w); returns w."""
    n, d = X.shape
    w = np.zeros(d)

    def objective(w):
        z = X @ w
        # log(1 + e^z) - y z, computed stably.
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    f = objective(w)
    for _ in range(max_iter):
        s = sigmoid(X @ w)
        grad = X.T @ (s - y) / n
        if np.linalg.norm(grad) < tol:
            break
        hess = (X * (s * (1.0 - s))[:, None]).T @ X / n
        hess[np.diag_indices(d)] += 1e-12
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        while t > 1e-12:
            w_new = w - t * step
            f_new = objective(w_new)
            if f_new <= f - 1e-4 * t * grad @ step:
                break
            t *= 0.5
        else:
            break
        w, f = w_new, f_new
    return w


def fit_platt(dataset: BinaryDataset) -> PlattModel:
    """Logistic regression of the labels on logit(p) with slope a >= 0.

    A negative unconstrained slope means the convex optimum lies on the face
    a = 0, where only the intercept is fitted.
    """
    _check_two_classes(dataset)
    X = np.column_stack([logit(dataset.predictions), np.ones(len(dataset))])
    y = dataset.labels.astype(float)
    a, b = _logreg_newton(X, y)
    if a < 0:
        a, b = 0.0, _logreg_newton(X[:, 1:], y)[0]
    return PlattModel(float(a), float(b))


def fit_beta(dataset: BinaryDataset) -> BetaModel:
    """Beta calibration with a, b >= 0.

    The constrained optimum is found exactly: the problem is convex, so it is
    the best feasible solution among the unconstrained optima of the faces
    where some of a, b are pinned to zero.
    """
    _check_two_classes(dataset)
    pc = clip_prob(dataset.predictions)
    feats = np.column_stack([np.log(pc), -np.log1p(-pc), np.ones(len(dataset))])
    y = dataset.labels.astype(float)
    best = None
    for pinned in itertools.chain.from_iterable(
        itertools.combinations((0, 1), r) for r in range(3)
    ):
        free = [j for j in range(3) if j not in pinned]
        w = np.zeros(3)
        w[free] = _logreg_newton(feats[:, free], y)
        if np.any(w[:2] < 0):
            continue
        z = feats @ w
        val = float(np.mean(np.logaddexp(0.0, z) - y * z))
        if best is None or val < best[0] - 1e-15:
            best = (val, w)
    a, b, c = best[1]
    return BetaModel(float(a), float(b), float(c))


def fit_temperature(dataset: BinaryDataset, t_min: float = 1e-2, t_max: float = 1e2) -> TemperatureModel:
    """Single temperature on logit(p): log-grid bracket then bounded Brent."""
    _check_two_classes(dataset)
    z = logit(dataset.predictions)
    y = dataset.labels

    def loss(log_t):
        return mean_loss("ce", sigmoid(z / np.exp(log_t)), y)

    grid = np.linspace(np.log(t_min), np.log(t_max), 81)
    vals = [loss(g) for g in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(loss, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7})
    log_t = res.x if res.fun <= vals[i] else grid[i]
    return TemperatureModel(float(np.exp(log_t)))


def pava(y, w=None) -> np.ndarray:
    """Weighted pool-adjacent-violators; returns the nondecreasing least-squares fit."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    means, weights, sizes = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        weights.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), weights.pop(), sizes.pop()
            wt = weights[-1] + w2
            means[-1] = (means[-1] * weights[-1] + m2 * w2) / wt
            weights[-1] = wt
            sizes[-1] += s2
    return np.repeat(means, sizes)


def fit_isotonic(dataset: BinaryDataset) -> IsotonicModel:
    """Isotonic regression of labels on predictions; tied predictions are pooled first."""
    thresholds, inverse = np.unique(dataset.predictions, return_inverse=True)
    counts = np.bincount(inverse)
    sums = np.bincount(inverse, weights=dataset.labels.astype(float))
    levels = pava(sums / counts, counts)
    return IsotonicModel(thresholds, np.clip(levels, 0.0, 1.0))
