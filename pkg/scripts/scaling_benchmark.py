#!/usr/bin/env python3
"""Sample-size scaling benchmark on the 1-D synthetic function.

Sweeps training-set sizes for the chosen methods, recording accuracy and
wall-clock per cell to a resumable JSONL file plus a CSV summary. Dense
cells beyond the cap are recorded as refusals.

Usage:
    python scripts/scaling_benchmark.py --sizes 100 1000 10000 --out bench/
"""

import argparse
import os
import sys

from basisgp import evalbench
from basisgp.config import RunConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[100, 1000, 10000])
    parser.add_argument(
        "--methods", nargs="+", default=["dbk_exact", "dbk_svi", "dense_rbf"]
    )
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--rank", type=int, default=32)
    parser.add_argument("--max-iters", type=int, default=500)
    parser.add_argument("--max-epochs", type=int, default=20)
    parser.add_argument("--dense-cap", type=int, default=20000)
    parser.add_argument("--parallel", action="store_true")
    parser.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args()

    config = RunConfig(
        model="dbk_exact",
        rank=args.rank,
        hidden=[128, 128],
        max_iters=args.max_iters,
        max_epochs=args.max_epochs,
        eval_every=100,
        patience=None,
        dense_cap=args.dense_cap,
    )
    os.makedirs(args.out, exist_ok=True)
    rows = evalbench.run_scaling(
        args.sizes,
        args.methods,
        config,
        os.path.join(args.out, "results.jsonl"),
        seeds=tuple(args.seeds),
        parallel=args.parallel,
    )
    evalbench.summarize_csv(rows, os.path.join(args.out, "results.csv"))
    for row in rows:
        if row["status"] == "ok":
            print(
                "%-10s n=%-6d seed=%d rmse=%.4f nll=%+.3f train=%.1fs"
                % (row["method"], row["n"], row["seed"], row["rmse"],
                   row["nll"], row["wall_clock_train_s"])
            )
        else:
            print(
                "%-10s n=%-6d seed=%d %s: %s"
                % (row["method"], row["n"], row["seed"], row["status"],
                   row.get("reason", ""))
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
