"""Scoring calibration evaluators against a known or estimated true calibration map."""

from __future__ import annotations

import csv
import io
import json
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import binning as bn
from . import piecewise as pw
from . import scalers as sc
from . import synthgen as sg
from .core import BinaryDataset, DomainError, FormatError, GroundTruthMap

METHODS = (
    "es", "ew", "es_sweep", "ew_sweep", "es_cv", "ew_cv",
    "pl", "pl3", "platt", "beta", "isotonic", "temperature",
)
GT_METHODS = ("isotonic", "eq100-flat", "eq100-slope1")
_SCHEME = {"es": "equal-size", "ew": "equal-width"}


@dataclass(frozen=True)
class EvaluatorSpec:
    """A fit-on-the-test evaluator.

    ``bins`` is used by ``es``/``ew``; ``loss`` by ``pl``/``pl3`` (fitting
    loss) and ``*_cv`` (held-out loss); ``candidates`` overrides the CV grid.
    """

    method: str
    bins: int | None = None
    loss: str | None = None
    candidates: tuple | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        if self.method in ("es", "ew") and (self.bins is None or self.bins < 1):
            raise DomainError(f"method {self.method!r} needs a positive bin count")
        if self.candidates is not None:
            object.__setattr__(self, "candidates", tuple(int(c) for c in self.candidates))

    @property
    def fit_loss(self) -> str:
        if self.loss:
            return self.loss
        return "mse" if self.method.endswith("_cv") else "ce"

    @property
    def label(self) -> str:
        m = self.method
        if m in ("es", "ew"):
            return f"{m.upper()}{self.bins}"
        if m.endswith("_sweep") or m.endswith("_cv"):
            head, tail = m.split("_")
            return f"{head.upper()}_{tail}"
        if m in ("pl", "pl3"):
            return f"{m.upper()}_{self.fit_loss}"
        return m

    @classmethod
    def parse(cls, text: str) -> "EvaluatorSpec":
        """Parse tags such as ``es15``, ``es:15``, ``ES_sweep``, ``pl3:mse``, ``platt``."""
        t = text.strip().lower()
        m = re.fullmatch(r"(es|ew)[:_]?(\d+)", t)
        if m:
            return cls(m.group(1), bins=int(m.group(2)))
        m = re.fullmatch(r"(pl3?)(?:[:_](ce|mse))?", t)
        if m:
            return cls(m.group(1), loss=m.group(2) or "ce")
        if t in METHODS:
            return cls(t)
        raise DomainError(f"unknown evaluator {text!r}; valid: {', '.join(METHODS)}")

    @classmethod
    def from_obj(cls, obj) -> "EvaluatorSpec":
        if isinstance(obj, str):
            return cls.parse(obj)
        if isinstance(obj, dict):
            return cls(
                obj["method"], obj.get("bins"), obj.get("loss"),
                tuple(obj["candidates"]) if obj.get("candidates") else None,
            )
        raise FormatError(f"cannot read evaluator from {obj!r}")


@dataclass
class FitResult:
    spec: EvaluatorSpec
    c_hat: Callable
    ece_fit: float
    ece_debiased: float | None = None
    chosen_b: int | None = None
    diagram: bn.ReliabilityDiagram | None = None
    model: object = None


def _binned(spec, dataset, scheme, b, alpha):
    if scheme == "equal-size":
        b = min(b, len(dataset))
    diagram = bn.reliability_diagram(dataset, bn.build_binning(dataset, scheme, b))
    tilted = bn.tilted_roof_map(diagram)
    p = dataset.predictions
    ece = float(np.mean(np.abs(tilted(p) - p) ** alpha))
    deb = bn.debias_ece(diagram) if alpha == 1 else None
    return FitResult(spec, tilted, ece, deb, b, diagram, tilted)


def fit_on_test_ece(spec: EvaluatorSpec, dataset: BinaryDataset, alpha: float = 1, seed: int = 0) -> FitResult:
    """Fit the evaluator's map family on ``dataset`` and measure its distance to the identity."""
    m = spec.method
    p = dataset.predictions
    if m in ("es", "ew"):
        return _binned(spec, dataset, _SCHEME[m], spec.bins, alpha)
    if m.endswith("_sweep"):
        scheme = _SCHEME[m.split("_")[0]]
        return _binned(spec, dataset, scheme, bn.sweep_select(dataset, scheme), alpha)
    if m.endswith("_cv"):
        scheme = _SCHEME[m.split("_")[0]]
        cands = spec.candidates or bn.DEFAULT_CV_CANDIDATES
        b = bn.cv_select_bins(dataset, scheme, cands, 10, spec.fit_loss, seed)
        return _binned(spec, dataset, scheme, b, alpha)
    if m in ("pl", "pl3"):
        space = "probability" if m == "pl" else "logit"
        ens = pw.pl_cv_fit(dataset, space, spec.fit_loss, seed, spec.candidates)
        return FitResult(spec, ens, float(np.mean(np.abs(ens(p) - p) ** alpha)),
                         chosen_b=ens.chosen_b, model=ens)
    fitter = {
        "platt": sc.fit_platt,
        "beta": sc.fit_beta,
        "isotonic": sc.fit_isotonic,
        "temperature": sc.fit_temperature,
    }[m]
    model = fitter(dataset)
    return FitResult(spec, model.predict, float(np.mean(np.abs(model.predict(p) - p) ** alpha)),
                     model=model)


def estimate_ground_truth(holdout: BinaryDataset, method: str = "isotonic") -> GroundTruthMap:
    """Estimate c* from a large holdout by isotonic regression or 100 equal-size bins."""
    if len(holdout) == 0:
        raise DomainError("empty holdout")
    if method == "isotonic":
        iso = sc.fit_isotonic(holdout)
        # the first level also covers predictions below the smallest threshold
        bounds = np.concatenate(([0.0], iso.thresholds[1:], [1.0 + bn.EPS]))
        return GroundTruthMap.stepwise(bounds, iso.levels)
    if method in ("eq100-flat", "eq100-slope1"):
        b = min(100, len(holdout))
        diagram = bn.reliability_diagram(holdout, bn.build_binning(holdout, "equal-size", b))
        if method == "eq100-flat":
            left = diagram.binning.boundaries[:-1]
            values = np.where(diagram.nonempty, diagram.mean_label, left)
            return GroundTruthMap.stepwise(diagram.binning.boundaries, values)
        return GroundTruthMap.from_callable(bn.tilted_roof_map(diagram), method=method)
    raise DomainError(f"unknown ground-truth method {method!r}; valid: {', '.join(GT_METHODS)}")


def evaluate_evaluator(
    spec: EvaluatorSpec,
    test: BinaryDataset,
    gt: Callable,
    big_eval: BinaryDataset,
    alpha: float = 1,
    seed: int = 0,
    gt_values: np.ndarray | None = None,
) -> dict:
    """One report row: map error on ``big_eval`` and calibration-error estimate error.

    ``gt_values`` may carry precomputed c*(p) on ``big_eval`` to skip re-evaluation.
    """
    fit = fit_on_test_ece(spec, test, alpha, seed)
    p = big_eval.predictions
    cstar = np.asarray(gt(p) if gt_values is None else gt_values, dtype=float)
    chat = np.asarray(fit.c_hat(p), dtype=float)
    ece_true = float(np.mean(np.abs(cstar - p) ** alpha))
    return {
        "evaluator": spec.label,
        "ece_fit": fit.ece_fit,
        "ece_debiased": fit.ece_debiased,
        "chosen_b": fit.chosen_b,
        "cmee_abs": float(np.mean(np.abs(chat - cstar))),
        "cmee_sq": float(np.mean((chat - cstar) ** 2)),
        "ece_true": ece_true,
        "abs_ece_err": abs(fit.ece_fit - ece_true),
    }


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rank(a, b) -> float:
    """Pearson correlation of the average ranks of ``a`` and ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("spearman needs two vectors of equal length")
    if a.size < 2:
        raise DomainError("spearman needs at least two observations")
    ra, rb = average_ranks(a), average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.sum(ra * ra) * np.sum(rb * rb))
    if denom == 0.0:
        raise DomainError("spearman is undefined for a constant vector")
    return float(np.clip(np.sum(ra * rb) / denom, -1.0, 1.0))


# ---------------------------------------------------------------------------
# benchmark orchestration


@dataclass(frozen=True)
class BenchmarkConfig:
    shapes: tuple
    targets: tuple
    sizes: tuple
    seeds: tuple
    evaluators: tuple
    alpha: float = 1
    eval_size: int = 100_000
    workers: int = 1

    def __post_init__(self):
        for name in ("shapes", "targets", "sizes", "seeds", "evaluators"):
            vals = getattr(self, name)
            if isinstance(vals, (str, bytes)) or not isinstance(vals, Sequence) or not vals:
                raise FormatError(f"config field {name!r} must be a non-empty list")
        for s in self.shapes:
            if s not in sg.SHAPES:
                raise FormatError(f"unknown shape {s!r}; valid: {', '.join(sg.SHAPES)}")
        specs = tuple(sorted({EvaluatorSpec.from_obj(e) for e in self.evaluators},
                             key=lambda e: e.label))
        object.__setattr__(self, "evaluators", specs)
        object.__setattr__(self, "shapes", tuple(sorted(set(self.shapes), key=sg.SHAPES.index)))
        object.__setattr__(self, "targets", tuple(sorted(set(float(t) for t in self.targets))))
        object.__setattr__(self, "sizes", tuple(sorted(set(int(n) for n in self.sizes))))
        object.__setattr__(self, "seeds", tuple(sorted(set(int(s) for s in self.seeds))))
        if min(self.sizes) < 1 or self.eval_size < 1:
            raise FormatError("sizes and eval_size must be positive")
        if self.alpha <= 0:
            raise FormatError("alpha must be positive")

    @property
    def labels(self) -> list[str]:
        return sorted({e.label for e in self.evaluators})

    @classmethod
    def from_dict(cls, obj: dict) -> "BenchmarkConfig":
        if not isinstance(obj, dict):
            raise FormatError("config must be a JSON object")
        required = ("shapes", "targets", "sizes", "seeds", "evaluators")
        missing = [k for k in required if k not in obj]
        if missing:
            raise FormatError(f"config is missing required fields: {', '.join(missing)}")
        unknown = set(obj) - set(required) - {"alpha", "eval_size", "workers"}
        if unknown:
            raise FormatError(f"unknown config fields: {', '.join(sorted(unknown))}")
        try:
            return cls(
                tuple(obj["shapes"]), tuple(obj["targets"]), tuple(obj["sizes"]),
                tuple(obj["seeds"]), tuple(obj["evaluators"]),
                float(obj.get("alpha", 1)), int(obj.get("eval_size", 100_000)),
                int(obj.get("workers", 1)),
            )
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed config: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["evaluators"] = [
            {k: v for k, v in asdict(e).items() if v is not None} for e in self.evaluators
        ]
        return d


ROW_FIELDS = (
    "shape", "target_ce", "lam", "n", "seed", "evaluator", "ece_fit", "ece_debiased",
    "chosen_b", "cmee_abs", "cmee_sq", "ece_true", "abs_ece_err", "error",
)


def _eval_seed(seed: int) -> list[int]:
    # distinct stream from the test data, shared by every mixing weight
    return [seed, 7919]


def _run_cell(args) -> list[dict]:
    shape, target, n, seed, specs, alpha, eval_size = args
    base = {"shape": shape, "target_ce": target, "n": n, "seed": seed}
    try:
        lam = sg.solve_mixing(shape, target)
        test = sg.generate_dataset(shape, lam, n, seed)
        big = sg.generate_dataset(shape, lam, eval_size, _eval_seed(seed))
    except Exception as exc:  # recorded per cell, the run continues
        return [dict(base, lam=None, evaluator=s.label, error=f"{type(exc).__name__}: {exc}")
                for s in specs]
    rows = []
    for spec in specs:
        row = dict(base, lam=lam, evaluator=spec.label)
        try:
            row.update(evaluate_evaluator(spec, test.data, test.gt, big.data, alpha, seed, big.c))
            row["error"] = None
        except Exception as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _max_workers(requested: int) -> int:
    cap = os.environ.get("CALIBKIT_THREADS")
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in ROW_FIELDS})
        return buf.getvalue()

    def to_json(self) -> str:
        nested: dict = {}
        for r in self.rows:
            node = nested
            for key in (r["shape"], repr(r["target_ce"]), str(r["n"]), str(r["seed"])):
                node = node.setdefault(key, {})
            node[r["evaluator"]] = {k: r.get(k) for k in ROW_FIELDS[5:] if k != "evaluator"}
        doc = {"config": self.config.to_dict(), "cells": nested, "summary": self.summary}
        return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return v


def _aggregate(rows: list[dict], labels: list[str], metric: str) -> dict:
    """Seed-mean per (shape, target, n) row, per-row ranks and average ranks."""
    groups: dict = {}
    for r in rows:
        if r.get("error") or r.get(metric) is None:
            continue
        key = (r["shape"], r["target_ce"], r["n"])
        groups.setdefault(key, {}).setdefault(r["evaluator"], []).append(r[metric])
    table = []
    rank_acc = {lab: [] for lab in labels}
    for key in sorted(groups, key=lambda k: (sg.SHAPES.index(k[0]), k[1], k[2])):
        means = {lab: float(np.mean(v)) for lab, v in groups[key].items()}
        present = [lab for lab in labels if lab in means]
        ranks = average_ranks([means[lab] for lab in present])
        row_ranks = dict(zip(present, ranks.tolist()))
        for lab in present:
            rank_acc[lab].append(row_ranks[lab])
        table.append({
            "shape": key[0], "target_ce": key[1], "n": key[2],
            "mean": means, "rank": row_ranks,
        })
    avg = {lab: float(np.mean(v)) for lab, v in rank_acc.items() if v}
    return {"rows": table, "avg_rank": avg}


def _spearman_summary(rows: list[dict], labels: list[str]) -> dict:
    """Rank correlation of ece_fit vs ece_true across mixing targets, per seed, then averaged."""
    groups: dict = {}
    for r in rows:
        if r.get("error"):
            continue
        key = (r["shape"], r["n"], r["evaluator"], r["seed"])
        groups.setdefault(key, []).append((r["target_ce"], r["ece_fit"], r["ece_true"]))
    per: dict = {}
    for (shape, n, lab, seed), vals in groups.items():
        if len(vals) < 2:
            continue
        vals.sort()
        try:
            rho = spearman_rank([v[1] for v in vals], [v[2] for v in vals])
        except DomainError:
            continue
        per.setdefault((shape, n), {}).setdefault(lab, []).append(rho)
    out = []
    for shape, n in sorted(per, key=lambda k: (sg.SHAPES.index(k[0]), k[1])):
        out.append({
            "shape": shape, "n": n,
            "spearman": {lab: float(np.mean(v)) for lab, v in sorted(per[(shape, n)].items())},
        })
    return {"rows": out}


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    """Evaluate every evaluator on every (shape, target, size, seed) cell."""
    specs = list(config.evaluators)
    jobs = [
        (shape, target, n, seed, specs, config.alpha, config.eval_size)
        for shape in config.shapes
        for target in config.targets
        for n in config.sizes
        for seed in config.seeds
    ]
    workers = _max_workers(config.workers)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = [r for cell in results for r in cell]
    rows.sort(key=lambda r: (sg.SHAPES.index(r["shape"]), r["target_ce"], r["n"], r["seed"],
                             r["evaluator"]))
    labels = config.labels
    summary = {
        "cmee_abs": _aggregate(rows, labels, "cmee_abs"),
        "abs_ece_err": _aggregate(rows, labels, "abs_ece_err"),
        "spearman": _spearman_summary(rows, labels),
        "failures": sum(1 for r in rows if r.get("error")),
    }
    return BenchmarkReport(config, rows, summary)
