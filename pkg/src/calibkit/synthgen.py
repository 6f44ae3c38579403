"""Synthetic data with a known true calibration map.

Calibrated probabilities ``c`` are drawn uniformly, labels are drawn from
them, and predictions are produced by a monotone distortion of ``c``: a base
shape mixed linearly with the identity. The true calibration map is the
inverse of that distortion.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BinaryDataset, DomainError, GroundTruthMap

SHAPES = ("square", "sqrt", "beta1", "beta2", "stairs")
SIMPSON_INTERVALS = 100_000
_REACH_TOL = 1e-6


def _beta_shape(x, a, b, c):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        odds = np.exp(c) * x**a / (1.0 - x) ** b
        out = 1.0 / (1.0 + 1.0 / odds)
    out = np.where(x <= 0.0, 0.0, out)
    return np.where(x >= 1.0, 1.0, out)


def _step(x):
    return x - np.sin(x)


def _stairs_helper(x):
    return _step(_step(3.0 * np.asarray(x, dtype=float) * np.pi)) / (3.0 * np.pi)


_BETA1 = (0.4, 0.45, 0.45 * np.log(0.6) - 0.4 * np.log(0.4))
_BETA2 = (2.0, 2.2, 2.2 * np.log(0.52) - 2.0 * np.log(0.48))


def shape_eval(shape: str, x):
    """Base shape g mapping a calibrated probability to a prediction."""
    x = np.asarray(x, dtype=float)
    if shape == "square":
        return x**2
    if shape == "sqrt":
        return np.sqrt(x)
    if shape == "beta1":
        return _beta_shape(x, *_BETA1)
    if shape == "beta2":
        return _beta_shape(x, *_BETA2)
    if shape == "stairs":
        return _stairs_helper(x + 1.0 / 3.0) - _stairs_helper(1.0 / 3.0)
    raise DomainError(f"unknown shape {shape!r}; expected one of {SHAPES}")


def mixing_map(shape: str, lam: float):
    """m(c) = (1 - lam) c + lam g(c)."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError("mixing weight must lie in [0, 1]")

    def m(c):
        c = np.asarray(c, dtype=float)
        if lam == 0.0:
            return c.copy()
        return (1.0 - lam) * c + lam * shape_eval(shape, c)

    return m


def simpson(f, a: float = 0.0, b: float = 1.0, intervals: int = SIMPSON_INTERVALS) -> float:
    """Composite Simpson rule with an even number of intervals."""
    if intervals % 2:
        intervals += 1
    x = np.linspace(a, b, intervals + 1)
    fx = f(x)
    h = (b - a) / intervals
    return float(h / 3.0 * (fx[0] + fx[-1] + 4.0 * fx[1:-1:2].sum() + 2.0 * fx[2:-1:2].sum()))


def shape_ce(shape: str) -> float:
    """Expected absolute calibration error of the full shape under uniform c."""
    return simpson(lambda c: np.abs(shape_eval(shape, c) - c))


def solve_mixing(shape: str, target_ce: float) -> float:
    """Mixing weight giving expected absolute calibration error ``target_ce``."""
    if target_ce < 0:
        raise DomainError("target calibration error must be nonnegative")
    full = shape_ce(shape)
    lam = target_ce / full
    if lam > 1.0 + _REACH_TOL:
        raise DomainError(
            f"target {target_ce} unreachable for shape {shape!r}; maximum is {full:.6f}"
        )
    return min(lam, 1.0)


def derivate_ce(shape: str, lam: float) -> float:
    m = mixing_map(shape, lam)
    return simpson(lambda c: np.abs(m(c) - c))


def true_map(shape: str, lam: float) -> GroundTruthMap:
    if lam == 0.0:
        return GroundTruthMap.identity()
    return GroundTruthMap.analytic(mixing_map(shape, lam), shape=shape, lam=lam)


def true_map_eval(gt: GroundTruthMap, p):
    return gt(p)


@dataclass(frozen=True)
class SyntheticDataset:
    data: BinaryDataset
    gt: GroundTruthMap
    c: np.ndarray
    shape: str
    lam: float

    def to_csv(self, path) -> None:
        write_csv(path, self.data.predictions, self.data.labels, self.c)


def sample_calibrated(n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Uniform calibrated probabilities and Bernoulli labels; depends on seed only."""
    if n < 1:
        raise DomainError("n must be positive")
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.0, 1.0, size=n)
    y = (rng.uniform(0.0, 1.0, size=n) < c).astype(np.int64)
    return c, y


def generate_dataset(shape: str, lam: float, n: int, seed) -> SyntheticDataset:
    """Same seed gives the same (c, y) for every shape and mixing weight."""
    shape_eval(shape, 0.5)  # validates the tag
    c, y = sample_calibrated(n, seed)
    p = np.clip(mixing_map(shape, lam)(c), 0.0, 1.0)
    return SyntheticDataset(BinaryDataset(p, y), true_map(shape, lam), c, shape, lam)


def write_csv(path, p_hat, labels, c_star=None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p_hat", "label"] + (["c_star"] if c_star is not None else []))
        if c_star is None:
            for p, y in zip(p_hat, labels):
                w.writerow([f"{p:.17g}", int(y)])
        else:
            for p, y, c in zip(p_hat, labels, c_star):
                w.writerow([f"{p:.17g}", int(y), f"{c:.17g}"])
