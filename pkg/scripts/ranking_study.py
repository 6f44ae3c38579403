"""Ranking study: how well each evaluator orders derivates by their true CE.

For every shape, size and seed the derivates at each target share labels; the
Spearman correlation between fitted and true ECE is averaged over seeds.

    python scripts/ranking_study.py --sizes 300 1000 --seeds 5
"""

import argparse

from calibkit.harness import BenchmarkConfig, run_benchmark
from calibkit.synthgen import SHAPES


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shapes", nargs="+", default=list(SHAPES))
    ap.add_argument("--targets", nargs="+", type=float,
                    default=[0.01, 0.02, 0.03, 0.04, 0.05, 0.06])
    ap.add_argument("--sizes", nargs="+", type=int, default=[300, 1000])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--evaluators", nargs="+",
                    default=["es15", "ew15", "es_sweep", "isotonic", "platt", "beta"])
    ap.add_argument("--eval-size", type=int, default=100_000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    config = BenchmarkConfig.from_dict(dict(
        shapes=args.shapes, targets=args.targets, sizes=args.sizes,
        seeds=list(range(args.seeds)), evaluators=args.evaluators,
        eval_size=args.eval_size, workers=args.workers,
    ))
    report = run_benchmark(config)
    labels = config.labels
    width = max(len(s) for s in labels) + 2
    rows = report.summary["spearman"]["rows"]
    print(f"{'shape':8} {'n':>7} " + "".join(f"{s:>{width}}" for s in labels))
    for row in rows:
        cells = "".join(f"{row['spearman'][s]:>{width}.3f}" for s in labels)
        print(f"{row['shape']:8} {row['n']:>7d} {cells}")
    means = {s: sum(r["spearman"][s] for r in rows) / len(rows) for s in labels}
    print(f"{'mean':16}" + "".join(f"{means[s]:>{width}.3f}" for s in labels))


if __name__ == "__main__":
    main()
