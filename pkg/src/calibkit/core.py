"""Shared types, losses, Bregman divergences and calibration-error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# All log / logit computations clip probabilities to this distance from {0, 1}.
CLIP = 1e-6

LOSSES = ("mse", "ce")
BREGMAN_KINDS = ("squared", "entropy")


class DomainError(ValueError):
    """Input is well-formed but outside the domain of the operation."""


class FormatError(ValueError):
    """Input data violates a structural requirement (shape, range, labels)."""


def clip_prob(p, eps: float = CLIP):
    return np.clip(p, eps, 1.0 - eps)


def logit(p, eps: float = CLIP):
    p = clip_prob(np.asarray(p, dtype=float), eps)
    return np.log(p) - np.log1p(-p)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BinaryDataset:
    """Paired predictions in [0, 1] and labels in {0, 1}."""

    predictions: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.predictions, dtype=float).ravel()
        y_raw = np.asarray(self.labels).ravel()
        if p.shape != y_raw.shape:
            raise FormatError(
                f"predictions and labels differ in length ({p.size} vs {y_raw.size})"
            )
        if p.size == 0:
            raise FormatError("dataset must contain at least one instance")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise FormatError("predictions must lie in [0, 1]")
        if not np.all((y_raw == 0) | (y_raw == 1)):
            raise FormatError("labels must be exactly 0 or 1")
        p.setflags(write=False)
        y = y_raw.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.predictions.size

    def subset(self, idx) -> "BinaryDataset":
        return BinaryDataset(self.predictions[idx], self.labels[idx])


def invert_monotone(forward: Callable[[np.ndarray], np.ndarray], values, tol: float = 1e-12):
    """Vectorised bisection for ``forward(c) = value`` on c in [0, 1].

    ``forward`` must be nondecreasing with ``forward(0) = 0`` and ``forward(1) = 1``.
    """
    v = np.asarray(values, dtype=float)
    lo = np.zeros_like(v)
    hi = np.ones_like(v)
    # 45 halvings take the bracket below 1e-13.
    n_iter = int(np.ceil(np.log2(1.0 / tol))) + 2
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = forward(mid) < v
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GroundTruthMap:
    """An evaluable true calibration map c*.

    ``kind`` is ``"analytic"`` (the inverse of a monotone forward map c -> p_hat,
    evaluated by bisection), ``"stepwise"`` (constant value per half-open
    segment) or ``"callable"`` (an arbitrary map, clipped to [0, 1]).
    """

    kind: str
    forward: Callable | None = None
    boundaries: np.ndarray | None = None
    values: np.ndarray | None = None
    fn: Callable | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def identity(cls) -> "GroundTruthMap":
        return cls(kind="analytic", forward=lambda c: c, meta={"identity": True})

    @classmethod
    def analytic(cls, forward: Callable, **meta) -> "GroundTruthMap":
        return cls(kind="analytic", forward=forward, meta=meta)

    @classmethod
    def stepwise(cls, boundaries, values) -> "GroundTruthMap":
        b = np.asarray(boundaries, dtype=float)
        v = np.asarray(values, dtype=float)
        if b.ndim != 1 or v.size != b.size - 1:
            raise FormatError("stepwise map needs len(values) == len(boundaries) - 1")
        if b[0] != 0.0 or b[-1] <= 1.0 or np.any(np.diff(b) <= 0):
            raise FormatError("stepwise boundaries must increase strictly from 0 to beyond 1")
        return cls(kind="stepwise", boundaries=b, values=np.clip(v, 0.0, 1.0))

    @classmethod
    def from_callable(cls, fn: Callable, **meta) -> "GroundTruthMap":
        return cls(kind="callable", fn=fn, meta=meta)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "analytic":
            if self.meta.get("identity"):
                out = p.copy()
            else:
                out = invert_monotone(self.forward, p)
        elif self.kind == "stepwise":
            k = np.searchsorted(self.boundaries, p, side="right") - 1
            k = np.clip(k, 0, self.values.size - 1)
            out = self.values[k]
        elif self.kind == "callable":
            out = np.asarray(self.fn(p), dtype=float)
        else:
            raise DomainError(f"unknown ground-truth kind {self.kind!r}")
        return np.clip(out, 0.0, 1.0)


def true_ce(dataset: BinaryDataset, gt: Callable, alpha: float = 1) -> float:
    """Mean of ``|c*(p_i) - p_i|**alpha`` over the dataset's predictions."""
    if len(dataset) == 0:
        raise DomainError("empty dataset")
    p = dataset.predictions
    return float(np.mean(np.abs(np.asarray(gt(p)) - p) ** alpha))


def loss_eval(kind: str, prediction, label):
    """Pointwise Brier (``"mse"``) or log-loss (``"ce"``); vectorised."""
    p = np.asarray(prediction, dtype=float)
    y = np.asarray(label, dtype=float)
    if kind == "mse":
        return (p - y) ** 2
    if kind == "ce":
        pc = clip_prob(p)
        return -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    raise DomainError(f"unknown loss {kind!r}; expected one of {LOSSES}")


def mean_loss(kind: str, prediction, label) -> float:
    return float(np.mean(loss_eval(kind, prediction, label)))


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def bregman(kind: str, p, q):
    """Bregman divergence d(p, q) = phi(q) - phi(p) - (q - p) phi'(p).

    ``p`` is the prediction and ``q`` the reference. ``"squared"`` uses
    phi(x) = x**2, ``"entropy"`` the negative binary entropy.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if kind == "squared":
        return (q - p) ** 2
    if kind == "entropy":
        if np.any((p <= 0.0) | (p >= 1.0)):
            raise DomainError("entropy divergence needs p strictly inside (0, 1)")
        phi_q = _xlogx(q) + _xlogx(1.0 - q)
        phi_p = p * np.log(p) + (1.0 - p) * np.log1p(-p)
        dphi_p = np.log(p) - np.log1p(-p)
        return phi_q - phi_p - (q - p) * dphi_p
    raise DomainError(f"unknown Bregman kind {kind!r}; expected one of {BREGMAN_KINDS}")


def cmee(c_hat: Callable, gt: Callable, points, alpha: float = 1) -> float:
    """Calibration map estimation error: mean ``|c_hat(p) - c*(p)|**alpha``.

    ``points`` is a :class:`BinaryDataset` or an array of predictions.
    """
    p = points.predictions if isinstance(points, BinaryDataset) else np.asarray(points, float)
    if p.size == 0:
        raise DomainError("no evaluation points")
    return float(np.mean(np.abs(np.asarray(c_hat(p)) - np.asarray(gt(p))) ** alpha))


def cmee_ceac_decomposition(weights, c_star, c_hat, kind: str = "squared"):
    """Exact CMEE, CEAC and tie term on a finite distribution of predictions.

    ``weights[j]`` is the probability mass of the j-th distinct prediction,
    ``c_star[j]`` its true calibration map value and ``c_hat[j]`` the
    calibrator output. Predictions sharing a calibrator output are grouped
    to obtain the true calibration map of the recalibrated model.

    Returns ``(cmee, ceac, tie_term)``; ``cmee == ceac + tie_term``.
    """
    w = np.asarray(weights, dtype=float)
    cs = np.asarray(c_star, dtype=float)
    ch = np.asarray(c_hat, dtype=float)
    w = w / w.sum()
    groups, inverse = np.unique(ch, return_inverse=True)
    mass = np.bincount(inverse, weights=w, minlength=groups.size)
    c_star_after = np.bincount(inverse, weights=w * cs, minlength=groups.size) / mass
    c_after = c_star_after[inverse]
    cmee_val = float(np.sum(w * bregman(kind, ch, cs)))
    ceac_val = float(np.sum(w * bregman(kind, ch, c_after)))
    tie = float(np.sum(w * bregman(kind, c_after, cs)))
    return cmee_val, ceac_val, tie


def reduce_multiclass(probs, labels, mode: str | tuple = "confidence") -> BinaryDataset:
    """Reduce a multi-class problem to a binary one.

    ``mode`` is ``"confidence"`` or ``("ovr", k)`` / ``"ovr:k"``. Confidence
    ties are broken towards the lowest class index.
    """
    P = np.asarray(probs, dtype=float)
    y = np.asarray(labels)
    if P.ndim != 2 or P.shape[0] != y.size:
        raise FormatError("probs must be an (n, K) matrix matching the labels")
    bad = np.flatnonzero(np.abs(P.sum(axis=1) - 1.0) > 1e-6)
    if bad.size:
        raise FormatError(f"row {bad[0]} does not sum to 1 (sum={P[bad[0]].sum():.8g})")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise FormatError("labels must be class indices")
        y = y.astype(np.int64)
    K = P.shape[1]
    if y.size and (y.min() < 0 or y.max() >= K):
        raise FormatError(f"labels must be class indices in [0, {K - 1}]")

    if isinstance(mode, str) and mode.startswith("ovr:"):
        mode = ("ovr", int(mode.split(":", 1)[1]))
    if mode == "confidence":
        top = np.argmax(P, axis=1)  # first maximum, i.e. lowest index on ties
        return BinaryDataset(P[np.arange(P.shape[0]), top], (y == top).astype(int))
    if isinstance(mode, Sequence) and len(mode) == 2 and mode[0] == "ovr":
        k = int(mode[1])
        if not 0 <= k < K:
            raise DomainError(f"class {k} out of range for {K} classes")
        return BinaryDataset(P[:, k], (y == k).astype(int))
    raise DomainError(f"unknown reduction {mode!r}")
