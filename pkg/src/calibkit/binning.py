"""Reliability diagrams, binned ECE, tilted-roof maps and bin-count selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import BinaryDataset, DomainError, LOSSES, mean_loss

# Right edge of the last bin, so that a prediction of exactly 1 is included.
EPS = 1e-9
SCHEMES = ("equal-width", "equal-size")
CV_TOLERANCE = 1e-3
DEFAULT_CV_CANDIDATES = tuple(range(1, 31))


@dataclass(frozen=True)
class Binning:
    boundaries: np.ndarray
    scheme: str = "explicit"

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise DomainError("a binning needs at least two boundaries")
        if b[0] != 0.0 or b[-1] <= 1.0 or np.any(np.diff(b) <= 0):
            raise DomainError("boundaries must increase strictly from 0 to beyond 1")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @property
    def n_bins(self) -> int:
        return self.boundaries.size - 1

    def assign(self, p) -> np.ndarray:
        """Bin index of each prediction (bins are half-open on the right)."""
        k = np.searchsorted(self.boundaries, np.asarray(p, dtype=float), side="right") - 1
        return np.clip(k, 0, self.n_bins - 1)


def _equal_size_boundaries(p_sorted: np.ndarray, b: int) -> np.ndarray:
    n = p_sorted.size
    sizes = np.full(b, n // b)
    sizes[: n % b] += 1
    cuts = np.cumsum(sizes)[:-1]
    left = p_sorted[cuts - 1]
    right = p_sorted[cuts]
    # Ties at a cut put the whole tie group in the upper bin; repeated cuts merge.
    inner = np.where(left < right, 0.5 * (left + right), right)
    # a cut at the smallest prediction would only create an empty first bin
    inner = inner[inner > p_sorted[0]]
    bounds = np.concatenate(([0.0], inner, [1.0 + EPS]))
    return np.unique(bounds)


def build_binning(data, scheme: str, b: int) -> Binning:
    """Equal-width or equal-size binning with ``b`` bins.

    Equal-size cuts follow ``numpy.array_split`` sizes (larger bins first) and
    sit halfway between neighbouring sorted predictions.
    """
    if b < 1:
        raise DomainError("number of bins must be positive")
    if scheme == "equal-width":
        bounds = np.linspace(0.0, 1.0, b + 1)
        bounds[-1] = 1.0 + EPS
        return Binning(bounds, scheme)
    if scheme == "equal-size":
        p = data.predictions if isinstance(data, BinaryDataset) else np.asarray(data, float)
        if b > p.size:
            raise DomainError(f"equal-size binning needs b <= n (got b={b}, n={p.size})")
        return Binning(_equal_size_boundaries(np.sort(p), b), scheme)
    raise DomainError(f"unknown binning scheme {scheme!r}; expected one of {SCHEMES}")


@dataclass(frozen=True)
class ReliabilityDiagram:
    binning: Binning
    counts: np.ndarray
    mean_pred: np.ndarray  # NaN in empty bins
    mean_label: np.ndarray  # NaN in empty bins

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def nonempty(self) -> np.ndarray:
        return self.counts > 0

    def records(self) -> list[dict]:
        tilted = tilted_roof_map(self)
        out = []
        for k in range(self.binning.n_bins):
            filled = bool(self.counts[k])
            out.append(
                {
                    "left": float(self.binning.boundaries[k]),
                    "right": float(self.binning.boundaries[k + 1]),
                    "count": int(self.counts[k]),
                    "mean_pred": float(self.mean_pred[k]) if filled else None,
                    "mean_label": float(self.mean_label[k]) if filled else None,
                    "tilted_height": float(tilted.heights[k]),
                }
            )
        return out


def reliability_diagram(dataset: BinaryDataset, binning: Binning) -> ReliabilityDiagram:
    k = binning.assign(dataset.predictions)
    nb = binning.n_bins
    counts = np.bincount(k, minlength=nb)
    sum_p = np.bincount(k, weights=dataset.predictions, minlength=nb)
    sum_y = np.bincount(k, weights=dataset.labels.astype(float), minlength=nb)
    lo = np.full(nb, np.inf)
    hi = np.full(nb, -np.inf)
    np.minimum.at(lo, k, dataset.predictions)
    np.maximum.at(hi, k, dataset.predictions)
    with np.errstate(invalid="ignore", divide="ignore"):
        # rounding can push the mean of tied values past a bin edge
        mean_p = np.where(counts > 0, np.clip(sum_p / counts, lo, hi), np.nan)
        mean_y = np.where(counts > 0, sum_y / counts, np.nan)
    return ReliabilityDiagram(binning, counts, mean_p, mean_y)


def ece_binned(diagram: ReliabilityDiagram, alpha: float = 1) -> float:
    """Bin-mass weighted mean of ``|mean_label - mean_pred|**alpha``."""
    m = diagram.nonempty
    gaps = np.abs(diagram.mean_label[m] - diagram.mean_pred[m]) ** alpha
    return float(np.sum(diagram.counts[m] * gaps) / diagram.n)


@dataclass(frozen=True)
class TiltedMap:
    """Piecewise map with slope 1 inside each bin: ``c(p) = H_k + (p - B_k)``."""

    binning: Binning
    heights: np.ndarray

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        k = self.binning.assign(p)
        return self.heights[k] + (p - self.binning.boundaries[k])

    @property
    def offsets(self) -> np.ndarray:
        return self.heights - self.binning.boundaries[:-1]


def tilted_roof_map(diagram: ReliabilityDiagram) -> TiltedMap:
    """Least-squares member of the slope-1 family for the diagram's binning.

    Each bin is shifted by its gap ``mean_label - mean_pred``; empty bins
    keep the identity.
    """
    left = diagram.binning.boundaries[:-1]
    gap = np.where(diagram.nonempty, diagram.mean_label - diagram.mean_pred, 0.0)
    return TiltedMap(diagram.binning, left + gap)


def _expected_abs_dev(center: float, mean: float, sd: float, n_points: int = 10_000) -> float:
    # E|center - R| for R ~ N(mean, sd^2) by the trapezoidal rule on mean +- 5 sd.
    # Normalised by the integrated mass so the truncated tails do not bias it downwards.
    x = np.linspace(mean - 5.0 * sd, mean + 5.0 * sd, n_points)
    pdf = np.exp(-0.5 * ((x - mean) / sd) ** 2)
    return float(np.trapezoid(np.abs(center - x) * pdf, x) / np.trapezoid(pdf, x))


def debias_ece(diagram: ReliabilityDiagram) -> float:
    """ECE (alpha = 1) minus a Gaussian estimate of its per-bin upward bias.

    The bias of bin k is ``E|p_k - R_k| - |p_k - y_k|`` with
    ``R_k ~ N(y_k, y_k (1 - y_k) / n_k)``. The result is not clipped at zero.
    """
    raw = ece_binned(diagram, 1)
    n = diagram.n
    bias = 0.0
    for k in np.flatnonzero(diagram.nonempty):
        nk = diagram.counts[k]
        yk = diagram.mean_label[k]
        pk = diagram.mean_pred[k]
        sd = np.sqrt(yk * (1.0 - yk) / nk)
        if sd == 0.0:
            continue
        bias += nk / n * (_expected_abs_dev(pk, yk, sd) - abs(pk - yk))
    return raw - bias


def is_monotone(diagram: ReliabilityDiagram) -> bool:
    y = diagram.mean_label[diagram.nonempty]
    return bool(np.all(np.diff(y) >= 0))


def sweep_select(dataset: BinaryDataset, scheme: str = "equal-size") -> int:
    """Largest bin count in 1..n whose reliability diagram is nondecreasing."""
    n = len(dataset)
    best = 1
    if scheme == "equal-size":
        order = np.argsort(dataset.predictions, kind="stable")
        p_sorted = dataset.predictions[order]
        cum_y = np.concatenate(([0.0], np.cumsum(dataset.labels[order])))
        # Bins are contiguous runs of the sorted data, so prefix sums give bin means.
        for b in range(2, n + 1):
            bounds = _equal_size_boundaries(p_sorted, b)
            edges = np.searchsorted(p_sorted, bounds[1:-1], side="left")
            edges = np.concatenate(([0], edges, [n]))
            cnt = np.diff(edges)
            keep = cnt > 0
            means = np.diff(cum_y[edges])[keep] / cnt[keep]
            if np.all(np.diff(means) >= 0):
                best = b
        return best
    if scheme == "equal-width":
        for b in range(2, n + 1):
            if is_monotone(reliability_diagram(dataset, build_binning(dataset, scheme, b))):
                best = b
        return best
    raise DomainError(f"unknown binning scheme {scheme!r}")


def fold_indices(n: int, folds: int, seed) -> list[np.ndarray]:
    """Seeded shuffle split into ``folds`` near-equal parts."""
    if n < folds:
        raise DomainError(f"need at least {folds} rows for {folds}-fold CV (got {n})")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def select_with_tolerance(losses: dict, rel_tol: float = CV_TOLERANCE) -> int:
    """Smallest candidate whose loss is within ``rel_tol`` of the minimum."""
    if not losses:
        raise DomainError("no candidates")
    best = min(losses.values())
    return min(k for k, v in losses.items() if v <= (1.0 + rel_tol) * best)


def cv_bin_losses(
    dataset: BinaryDataset,
    scheme: str = "equal-size",
    candidates: Iterable[int] = DEFAULT_CV_CANDIDATES,
    folds: int = 10,
    loss: str = "mse",
    seed=0,
) -> dict[int, float]:
    """Mean held-out loss of the tilted-roof map for each candidate bin count."""
    if loss not in LOSSES:
        raise DomainError(f"unknown loss {loss!r}")
    candidates = sorted(set(int(b) for b in candidates))
    if not candidates:
        raise DomainError("no candidate bin counts")
    parts = fold_indices(len(dataset), folds, seed)
    n = len(dataset)
    out = {}
    for b in candidates:
        total = 0.0
        for i, test_idx in enumerate(parts):
            train_idx = np.concatenate([parts[j] for j in range(folds) if j != i])
            train = dataset.subset(train_idx)
            bb = min(b, len(train)) if scheme == "equal-size" else b
            fitted = tilted_roof_map(reliability_diagram(train, build_binning(train, scheme, bb)))
            held = dataset.subset(test_idx)
            total += mean_loss(loss, fitted(held.predictions), held.labels) * len(held)
        out[b] = total / n
    return out


def cv_select_bins(
    dataset: BinaryDataset,
    scheme: str = "equal-size",
    candidates: Iterable[int] = DEFAULT_CV_CANDIDATES,
    folds: int = 10,
    loss: str = "mse",
    seed=0,
) -> int:
    losses = cv_bin_losses(dataset, scheme, candidates, folds, loss, seed)
    return select_with_tolerance(losses)
