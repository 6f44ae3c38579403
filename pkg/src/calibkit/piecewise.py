"""Continuous piecewise-linear calibration maps (PL) and their logit-logit variant (PL3).

A model with ``b`` segments holds ``b`` boundary logits and ``b + 1`` height
parameters. Segment widths are the softmax of the boundary logits and the
knots are their cumulative sum, with the outer knots pinned to 0 and 1. In
probability space the heights pass through the logistic function; in logit
space inputs and knots are mapped through the logit, heights are used raw
and the logistic is applied to the interpolated output.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _pl_kernels
from .binning import fold_indices, select_with_tolerance
from .core import CLIP, BinaryDataset, DomainError, LOSSES, clip_prob, logit, mean_loss, sigmoid

SPACES = ("probability", "logit")
# Identity heights at the pinned knots 0 and 1 need a logit that is finite but
# whose logistic is within 1e-9 of the endpoint.
_HEIGHT_CLIP = 1e-12
_MIN_WIDTH = 1e-300


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ce"
    max_epochs: int = 1500
    patience: int = 20
    lr: float = 0.01
    batch_cap: int = 512
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise DomainError(f"unknown loss {self.loss!r}")
        if min(self.max_epochs, self.patience, self.batch_cap) <= 0 or self.lr <= 0:
            raise DomainError("training settings must be positive")
        if self.patience >= self.max_epochs:
            raise DomainError("patience must be smaller than max_epochs")

    def batch_size(self, n: int) -> int:
        # min(n/4, 512): 250 for 1000 points, 512 for 10000 points.
        return max(1, min(n // 4, self.batch_cap))


@dataclass(frozen=True)
class PLModel:
    space: str
    theta_b: np.ndarray
    theta_h: np.ndarray

    def __post_init__(self):
        if self.space not in SPACES:
            raise DomainError(f"unknown space {self.space!r}; expected one of {SPACES}")
        tb = np.array(self.theta_b, dtype=float)
        th = np.array(self.theta_h, dtype=float)
        if tb.ndim != 1 or tb.size < 1 or th.shape != (tb.size + 1,):
            raise DomainError("need b boundary logits and b + 1 height parameters")
        tb.setflags(write=False)
        th.setflags(write=False)
        object.__setattr__(self, "theta_b", tb)
        object.__setattr__(self, "theta_h", th)

    @property
    def b(self) -> int:
        return self.theta_b.size

    @property
    def n_degrees_of_freedom(self) -> int:
        # softmax has one redundant direction: b - 1 interior knots + b + 1 heights
        return 2 * self.b

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.theta_b, self.theta_h])

    def with_params(self, params) -> "PLModel":
        params = np.asarray(params, dtype=float)
        return replace(self, theta_b=params[: self.b], theta_h=params[self.b :])

    def knots_probability(self) -> np.ndarray:
        return _layout(self.space, self.theta_b, self.theta_h)[0]

    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        """Knot positions and heights in the working space."""
        _, x_knots, _, heights, _ = _layout(self.space, self.theta_b, self.theta_h)
        return x_knots, heights

    def __call__(self, p):
        return pl_forward(self, p)

    def to_dict(self) -> dict:
        return {
            "space": self.space,
            "b": self.b,
            "theta_B": self.theta_b.tolist(),
            "theta_H": self.theta_h.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PLModel":
        return cls(obj["space"], obj["theta_B"], obj["theta_H"])


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def _layout(space: str, theta_b: np.ndarray, theta_h: np.ndarray):
    """Knots and heights with their local derivatives.

    Returns ``(q, x_knots, dx_dq, heights, dh_dtheta)`` where ``q`` are the
    knots in probability space.
    """
    b = theta_b.size
    s = _softmax(theta_b)
    q = np.empty(b + 1)
    q[0] = 0.0
    q[1:b] = np.cumsum(s)[: b - 1]
    q[b] = 1.0
    if space == "probability":
        x_knots = q
        dx_dq = np.ones(b + 1)
        heights = sigmoid(theta_h)
        dh = heights * (1.0 - heights)
    else:
        qc = clip_prob(q)
        x_knots = np.log(qc) - np.log1p(-qc)
        dx_dq = np.where((q > CLIP) & (q < 1.0 - CLIP), 1.0 / (qc * (1.0 - qc)), 0.0)
        heights = theta_h
        dh = np.ones(b + 1)
    return q, x_knots, dx_dq, np.atleast_1d(heights), np.atleast_1d(dh)


def _to_working(space: str, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p if space == "probability" else logit(p)


def _interpolate(x_knots, heights, x):
    b = x_knots.size - 1
    k = np.searchsorted(x_knots[1:b], x, side="right")
    left = x_knots[k]
    width = np.maximum(x_knots[k + 1] - left, _MIN_WIDTH)
    t = (x - left) / width
    h_left = heights[k]
    dh = heights[k + 1] - h_left
    return h_left + dh * t, k, t, width, dh


def pl_forward(model: PLModel, p):
    """Evaluate the calibration map at predictions ``p``."""
    _, x_knots, _, heights, _ = _layout(model.space, model.theta_b, model.theta_h)
    out, *_ = _interpolate(x_knots, heights, _to_working(model.space, p))
    if model.space == "logit":
        out = sigmoid(out)
    return out


def _loss_and_grad(space, theta_b, theta_h, x, y, loss):
    """Mean loss over (x, y) in working space and its gradient."""
    b = theta_b.size
    q, x_knots, dx_dq, heights, dh_dth = _layout(space, theta_b, theta_h)
    w_out, k, t, width, dh = _interpolate(x_knots, heights, x)
    out = sigmoid(w_out) if space == "logit" else w_out
    n = x.size

    if loss == "mse":
        diff = out - y
        value = float(np.mean(diff * diff))
        g = 2.0 * diff
    else:
        oc = clip_prob(out)
        value = float(-np.mean(y * np.log(oc) + (1.0 - y) * np.log1p(-oc)))
        inside = (out > CLIP) & (out < 1.0 - CLIP)
        if space == "logit":
            g = np.where(inside, out - y, 0.0)
        else:
            g = np.where(inside, (oc - y) / (oc * (1.0 - oc)), 0.0)
    if space == "logit" and loss == "mse":
        g = g * out * (1.0 - out)
    g = g / n

    g_heights = np.bincount(k, weights=g * (1.0 - t), minlength=b + 1)
    g_heights += np.bincount(k + 1, weights=g * t, minlength=b + 1)

    slope_term = g * dh / width
    g_knots = np.bincount(k, weights=slope_term * (t - 1.0), minlength=b + 1)
    g_knots -= np.bincount(k + 1, weights=slope_term * t, minlength=b + 1)
    g_q = g_knots * dx_dq
    g_q[0] = 0.0
    g_q[b] = 0.0
    # q_i = sum_{j<i} s_j  =>  dq_i/dtheta_m = s_m [m < i] - s_m q_i
    s = _softmax(theta_b)
    suffix = np.cumsum(g_q[::-1])[::-1]  # suffix[i] = sum_{j >= i} g_q[j]
    g_theta_b = s * (suffix[1 : b + 1] - np.dot(g_q, q))
    g_theta_h = g_heights * dh_dth
    return value, np.concatenate([g_theta_b, g_theta_h])


def pl_loss(model: PLModel, batch: BinaryDataset, loss: str) -> float:
    return mean_loss(loss, pl_forward(model, batch.predictions), batch.labels)


def pl_gradient(model: PLModel, batch: BinaryDataset, loss: str) -> np.ndarray:
    """Gradient of the mean batch loss w.r.t. ``(theta_b, theta_h)``.

    Segment membership is held fixed, so the gradient flows through the
    interpolation weights, the knot positions and the heights only.
    """
    if len(batch) == 0:
        raise DomainError("empty batch")
    x = _to_working(model.space, batch.predictions)
    _, grad = _loss_and_grad(
        model.space, model.theta_b, model.theta_h, x, batch.labels.astype(float), loss
    )
    return grad


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(state: AdamState, params, grad, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(new_state, new_params)``."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if state.m.shape != params.shape or grad.shape != params.shape:
        raise DomainError("Adam state, parameters and gradient must have equal shapes")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return AdamState(m, v, t), params - lr * m_hat / (np.sqrt(v_hat) + eps)


def identity_model(p_train, b: int, space: str) -> PLModel:
    """Model representing the identity with equal-count segments on ``p_train``."""
    if b < 1:
        raise DomainError("need at least one segment")
    p = np.sort(np.asarray(p_train, dtype=float))
    if b == 1 or p.size == 0:
        widths = np.full(b, 1.0 / b)
    else:
        inner = np.quantile(p, np.arange(1, b) / b)
        widths = np.diff(np.concatenate(([0.0], inner, [1.0])))
    widths = np.maximum(widths, 1e-6)
    theta_b = np.log(widths / widths.sum())
    q, x_knots, *_ = _layout(space, theta_b, np.zeros(b + 1))
    if space == "probability":
        theta_h = logit(q, eps=_HEIGHT_CLIP)
    else:
        theta_h = x_knots.copy()
    return PLModel(space, theta_b, theta_h)


def train_pl(dataset: BinaryDataset, b: int, space: str, config: TrainConfig = TrainConfig()) -> PLModel:
    """Minibatch Adam from the identity map with early stopping on the training loss.

    Returns the parameters of the epoch with the lowest full training loss
    (the identity initialisation counts as epoch 0).
    """
    if space not in SPACES:
        raise DomainError(f"unknown space {space!r}")
    model = identity_model(dataset.predictions, b, space)
    x = np.ascontiguousarray(_to_working(space, dataset.predictions))
    y = dataset.labels.astype(float)
    best_params, _, _ = _pl_kernels.train_loop(
        space == "logit",
        config.loss == "ce",
        np.ascontiguousarray(model.params),
        x,
        y,
        config.batch_size(x.size),
        config.max_epochs,
        config.patience,
        config.lr,
        config.beta1,
        config.beta2,
        config.eps,
        int(config.seed) % 2**32,
    )
    return model.with_params(best_params)


@dataclass(frozen=True)
class PLEnsemble:
    space: str
    chosen_b: int
    models: tuple
    loss: str = "ce"
    seed: int = 0
    cv_losses: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.models:
            raise DomainError("empty ensemble")
        if any(m.space != self.space or m.b != self.chosen_b for m in self.models):
            raise DomainError("all ensemble members must share space and segment count")

    def __call__(self, p):
        return pl_ensemble_predict(self, p)

    def to_dict(self) -> dict:
        return {
            "kind": "pl_ensemble",
            "space": self.space,
            "chosen_b": self.chosen_b,
            "seed": self.seed,
            "loss": self.loss,
            "cv_losses": {str(k): v for k, v in self.cv_losses.items()},
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PLEnsemble":
        return cls(
            space=obj["space"],
            chosen_b=int(obj["chosen_b"]),
            models=tuple(PLModel.from_dict(m) for m in obj["models"]),
            loss=obj.get("loss", "ce"),
            seed=int(obj.get("seed", 0)),
            cv_losses={int(k): float(v) for k, v in obj.get("cv_losses", {}).items()},
        )


def pl_ensemble_predict(ensemble: PLEnsemble, p):
    return np.mean([pl_forward(m, p) for m in ensemble.models], axis=0)


def default_candidates(n: int) -> tuple[int, ...]:
    return tuple(range(1, 7)) if n <= 1000 else tuple(range(1, 17))


def _member_seed(seed: int, b: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, b, fold]).generate_state(1)[0])


def pl_cv_fit(
    dataset: BinaryDataset,
    space: str = "probability",
    loss: str = "ce",
    seed: int = 0,
    candidates: Sequence[int] | None = None,
    folds: int = 10,
    config: TrainConfig | None = None,
) -> PLEnsemble:
    """Choose the segment count by k-fold CV and keep the k fold models.

    The smallest segment count within 0.1% of the best held-out loss wins.
    """
    n = len(dataset)
    if n < folds:
        raise DomainError(f"PL cross-validation needs at least {folds} rows (got {n})")
    candidates = sorted(set(candidates or default_candidates(n)))
    base = config or TrainConfig(loss=loss)
    base = replace(base, loss=loss)
    parts = fold_indices(n, folds, seed)

    cv_losses: dict[int, float] = {}
    fold_models: dict[int, list[PLModel]] = {}
    for b in candidates:
        total = 0.0
        members = []
        for i, test_idx in enumerate(parts):
            train_idx = np.concatenate([parts[j] for j in range(folds) if j != i])
            cfg = replace(base, seed=_member_seed(seed, b, i))
            model = train_pl(dataset.subset(train_idx), b, space, cfg)
            held = dataset.subset(test_idx)
            total += pl_loss(model, held, loss) * len(held)
            members.append(model)
        cv_losses[b] = total / n
        fold_models[b] = members
    chosen = select_with_tolerance(cv_losses)
    return PLEnsemble(space, chosen, tuple(fold_models[chosen]), loss, seed, cv_losses)
