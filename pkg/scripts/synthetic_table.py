"""Desk-scale synthetic benchmark: mean CMEE of each evaluator per shape and size.

    python scripts/synthetic_table.py --sizes 1000 10000 --seeds 5 --out-dir runs/table
"""

import argparse
import json
from pathlib import Path

from calibkit.harness import BenchmarkConfig, run_benchmark
from calibkit.synthgen import SHAPES

DEFAULT_EVALUATORS = ["es15", "ew15", "es_sweep", "es_cv", "pl:ce", "pl3:ce",
                      "platt", "beta", "isotonic", "temperature"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shapes", nargs="+", default=list(SHAPES))
    ap.add_argument("--targets", nargs="+", type=float, default=[0.05, 0.10])
    ap.add_argument("--sizes", nargs="+", type=int, default=[1000, 10000])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--evaluators", nargs="+", default=DEFAULT_EVALUATORS)
    ap.add_argument("--eval-size", type=int, default=100_000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", type=Path, default=None)
    args = ap.parse_args(argv)

    config = BenchmarkConfig.from_dict(dict(
        shapes=args.shapes, targets=args.targets, sizes=args.sizes,
        seeds=list(range(args.seeds)), evaluators=args.evaluators,
        eval_size=args.eval_size, workers=args.workers,
    ))
    report = run_benchmark(config)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        report.to_csv(args.out_dir / "report.csv")
        report.to_json(args.out_dir / "report.json")

    block = report.summary["cmee_abs"]
    labels = config.labels
    width = max(len(s) for s in labels) + 2
    print(f"{'shape':8} {'target':>6} {'n':>7} " + "".join(f"{s:>{width}}" for s in labels))
    for row in block["rows"]:
        cells = "".join(f"{1000 * row['mean'][s]:>{width}.2f}" for s in labels)
        print(f"{row['shape']:8} {row['target_ce']:>6.3f} {row['n']:>7d} {cells}")
    print(f"{'avg rank':24}" + "".join(f"{block['avg_rank'][s]:>{width}.2f}" for s in labels))
    print("(CMEE x 1000, seed means; lower is better)")
    if report.summary["failures"]:
        print(json.dumps({"failures": report.summary["failures"]}))


if __name__ == "__main__":
    main()
