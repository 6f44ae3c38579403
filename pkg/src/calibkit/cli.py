"""Command-line front end over CSV prediction files and JSON configs.

Exit codes: 0 success, 1 data or domain error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import harness as hs
from . import piecewise as pw
from . import scalers as sc
from . import synthgen as sg
from .core import BinaryDataset, DomainError, FormatError, reduce_multiclass

GRID_POINTS = 512
FIT_METHODS = ("platt", "beta", "temperature", "isotonic", "pl", "pl3")
GT_NONE = "none"


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


@dataclass(frozen=True)
class PredictionFile:
    data: BinaryDataset
    c_star: np.ndarray | None = None


def _parse_float(text: str, line: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise FormatError(f"line {line}: column {col!r}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise FormatError(f"line {line}: column {col!r}: non-finite value {text!r}")
    return v


def _parse_prob(text: str, line: int, col: str) -> float:
    v = _parse_float(text, line, col)
    if not 0.0 <= v <= 1.0:
        raise FormatError(f"line {line}: column {col!r}: probability {v!r} outside [0, 1]")
    return v


def _parse_class(text: str, line: int, k_max: int) -> int:
    t = text.strip()
    valid = "{0, 1}" if k_max == 2 else f"0..{k_max - 1}"
    if not t.isdigit() or int(t) >= k_max:
        raise FormatError(f"line {line}: column 'label': {text!r} is not in {valid}")
    return int(t)


def read_predictions(path, reduce: str | None = None) -> PredictionFile:
    """Parse a binary (``p_hat,label[,c_star]``) or multi-class (``p_0,..,label``) file."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("line 1: empty file (a header is required)")
    header = [h.strip() for h in rows[0]]
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if r and any(c.strip() for c in r)]
    if not body:
        raise FormatError("no data rows after the header")

    binary = header in (["p_hat", "label"], ["p_hat", "label", "c_star"])
    k = len(header) - 1
    multi = k >= 2 and header == [f"p_{j}" for j in range(k)] + ["label"]
    if not (binary or multi):
        raise FormatError(
            "line 1: header must be 'p_hat,label[,c_star]' or 'p_0,...,p_{K-1},label'"
        )
    for line, r in body:
        if len(r) != len(header):
            raise FormatError(f"line {line}: expected {len(header)} fields, found {len(r)}")

    if binary:
        if reduce is not None:
            raise UsageError("--reduce applies only to multi-class files")
        p = np.array([_parse_prob(r[0], ln, "p_hat") for ln, r in body])
        y = np.array([_parse_class(r[1], ln, 2) for ln, r in body])
        c = None
        if len(header) == 3:
            c = np.array([_parse_prob(r[2], ln, "c_star") for ln, r in body])
        return PredictionFile(BinaryDataset(p, y), c)

    if reduce is None:
        raise UsageError(
            f"file has {k} classes; pass --reduce confidence or --reduce ovr:<k>"
        )
    probs = np.empty((len(body), k))
    labels = np.empty(len(body), dtype=np.int64)
    for i, (ln, r) in enumerate(body):
        probs[i] = [_parse_prob(r[j], ln, header[j]) for j in range(k)]
        if abs(probs[i].sum() - 1.0) > 1e-6:
            raise FormatError(f"line {ln}: class probabilities sum to {probs[i].sum()!r}, not 1")
        labels[i] = _parse_class(r[k], ln, k)
    return PredictionFile(reduce_multiclass(probs, labels, reduce))


def _dump(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=1, allow_nan=False) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _spec_from_args(args) -> hs.EvaluatorSpec:
    tag = args.method.strip().lower()
    bins = getattr(args, "bins", None)
    loss = getattr(args, "loss", None)
    try:
        if tag in ("es", "ew"):
            if bins is None:
                raise UsageError(f"method {tag!r} needs --bins")
            return hs.EvaluatorSpec(tag, bins=bins)
        spec = hs.EvaluatorSpec.parse(tag)
        if loss is not None and (spec.method in ("pl", "pl3") or spec.method.endswith("_cv")):
            spec = hs.EvaluatorSpec(spec.method, spec.bins, loss)
        return spec
    except DomainError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    if args.shape not in sg.SHAPES:
        raise UsageError(f"unknown shape {args.shape!r}; valid: {', '.join(sg.SHAPES)}")
    lam = sg.solve_mixing(args.shape, args.target_ce)
    ds = sg.generate_dataset(args.shape, lam, args.n, args.seed)
    ds.to_csv(args.out)
    _dump({
        "shape": args.shape,
        "target_ce": args.target_ce,
        "lambda": lam,
        "analytic_ce": sg.derivate_ce(args.shape, lam) if lam > 0 else 0.0,
        "n": args.n,
        "seed": args.seed,
        "out": str(args.out),
    }, None)
    return 0


def _ground_truth(args, pf: PredictionFile):
    """Returns (gt callable, evaluation points, gt values at those points) or None."""
    if args.ground_truth == GT_NONE:
        return None
    if args.ground_truth:
        hold = read_predictions(args.ground_truth, args.reduce).data
        gt = hs.estimate_ground_truth(hold, args.gt_method)
        return gt, hold, None
    if pf.c_star is not None:
        return None, pf.data, pf.c_star
    return None


def cmd_eval(args) -> int:
    spec = _spec_from_args(args)
    pf = read_predictions(args.inp, args.reduce)
    gt = _ground_truth(args, pf)
    if gt is None:
        fit = hs.fit_on_test_ece(spec, pf.data, args.alpha, args.seed)
        out = {"method": spec.label, "ece_fit": fit.ece_fit}
        if fit.ece_debiased is not None:
            out["ece_debiased"] = fit.ece_debiased
        if fit.chosen_b is not None:
            out["chosen_b"] = fit.chosen_b
    else:
        fn, points, values = gt
        row = hs.evaluate_evaluator(spec, pf.data, fn, points, args.alpha, args.seed, values)
        out = {"method": spec.label}
        out.update({k: v for k, v in row.items() if k != "evaluator" and v is not None})
    out.update({"alpha": args.alpha, "seed": args.seed, "n": len(pf.data)})
    _dump(out, args.out)
    return 0


def cmd_diagram(args) -> int:
    spec = _spec_from_args(args)
    pf = read_predictions(args.inp, args.reduce)
    fit = hs.fit_on_test_ece(spec, pf.data, 1, args.seed)
    if fit.diagram is not None:
        records = fit.diagram.records()
    else:
        x = np.linspace(0.0, 1.0, GRID_POINTS)
        records = [{"x": float(a), "c_hat": float(c)} for a, c in zip(x, fit.c_hat(x))]
    _dump(records, args.out)
    return 0


def cmd_bench(args) -> int:
    try:
        obj = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    try:
        config = hs.BenchmarkConfig.from_dict(obj)
    except (FormatError, DomainError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    report = hs.run_benchmark(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json() + "\n")
    sys.stdout.write(json.dumps({
        "rows": len(report.rows),
        "failures": report.summary["failures"],
        "avg_rank_cmee_abs": report.summary["cmee_abs"]["avg_rank"],
    }, indent=1) + "\n")
    return 0


def cmd_fit(args) -> int:
    if args.method not in FIT_METHODS:
        raise UsageError(f"unknown method {args.method!r}; valid: {', '.join(FIT_METHODS)}")
    pf = read_predictions(args.inp, args.reduce)
    if args.method in ("pl", "pl3"):
        space = "probability" if args.method == "pl" else "logit"
        model = pw.pl_cv_fit(pf.data, space, args.loss or "ce", args.seed)
    else:
        model = {
            "platt": sc.fit_platt,
            "beta": sc.fit_beta,
            "temperature": sc.fit_temperature,
            "isotonic": sc.fit_isotonic,
        }[args.method](pf.data)
    _dump(model.to_dict(), args.out)
    return 0


def load_model(path):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise FormatError("model file must hold a JSON object")
    if obj.get("kind") == "pl_ensemble":
        try:
            return pw.PLEnsemble.from_dict(obj)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed ensemble: {exc}") from None
    return sc.scaler_from_dict(obj)


def cmd_apply(args) -> int:
    model = load_model(args.model)
    pf = read_predictions(args.inp, args.reduce)
    p = pf.data.predictions
    c = model(p) if callable(model) else model.predict(p)
    lines = ["p_hat,label,c_hat"]
    lines += [f"{a:.17g},{int(y)},{b:.17g}" for a, y, b in zip(p, pf.data.labels, c)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_input(p):
    p.add_argument("--in", dest="inp", required=True, help="prediction CSV")
    p.add_argument("--reduce", default=None, help="confidence | ovr:<k> (multi-class files)")
    p.add_argument("--seed", type=int, default=0)


def _add_method(p):
    p.add_argument("--method", required=True,
                   help="es | ew | es_sweep | ew_sweep | es_cv | ew_cv | pl | pl3 | "
                        "platt | beta | isotonic | temperature")
    p.add_argument("--bins", type=int, default=None, help="bin count for es/ew")
    p.add_argument("--loss", choices=("ce", "mse"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="calibkit", description="Fit-on-the-test calibration evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic prediction file")
    p.add_argument("--shape", required=True)
    p.add_argument("--target-ce", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="fit-on-the-test calibration error")
    _add_input(p)
    _add_method(p)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--ground-truth", default=None,
                   help="holdout CSV for ground-truth estimation, or 'none'")
    p.add_argument("--gt-method", choices=hs.GT_METHODS, default="isotonic")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagram", help="reliability diagram data as JSON")
    _add_input(p)
    _add_method(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_diagram)

    p = sub.add_parser("bench", help="run a benchmark config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fit", help="fit and save a calibrator")
    _add_input(p)
    p.add_argument("--method", required=True, help=" | ".join(FIT_METHODS))
    p.add_argument("--loss", choices=("ce", "mse"), default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("apply", help="apply a saved calibrator to a file")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--reduce", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_apply)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "alpha", 1.0) <= 0:
            raise UsageError("--alpha must be positive")
        return args.func(args)
    except UsageError as exc:
        print(f"calibkit: error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, FormatError, OSError) as exc:
        print(f"calibkit: error: {exc}", file=sys.stderr)
        return 1
