"""Average RMSE of the posterior-mean precision for one or more simulation cells.

    python scripts/table_cell.py --p 30 --n 150 --q 2 --sparsity 0.9 --reps 5

Prints one row per cell plus the identity-matrix baseline on the same data.
"""
import argparse
import json

from spoutar.simgen import ScenarioSpec, run_benchmark

# reference averages for the 90% sparsity grid, shown side by side
REPORTED = {(30, 50, 2): 3.4017, (30, 100, 2): 3.7694, (30, 150, 2): 3.7674,
            (30, 50, 5): 3.5941, (30, 100, 5): 3.5906, (30, 150, 5): 3.6933,
            (30, 150, 8): 3.7011, (60, 150, 8): 2.7491, (60, 150, 2): 2.6933}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--p", type=int, nargs="+", default=[30])
    ap.add_argument("--n", type=int, nargs="+", default=[150])
    ap.add_argument("--q", type=int, nargs="+", default=[2])
    ap.add_argument("--sparsity", type=float, default=0.9)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--iters", type=int, default=10000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="write the full table here")
    args = ap.parse_args()

    grid = [ScenarioSpec(p=p, n=n, q=q, sparsity=args.sparsity, seed=args.seed)
            for p in args.p for n in args.n for q in args.q]
    cfg = {}
    if args.iters != 10000:
        it = args.iters
        cfg = dict(total_iters=it, burn_in=it // 2, ar_only_until=int(0.15 * it), thresholds_zero_until=int(0.25 * it))
    table = run_benchmark(grid, args.reps, cfg, args.workers)
    print(f"{'p':>4} {'n':>5} {'q':>3} {'rmse':>8} {'identity':>9} {'reported':>9}")
    for row in table["rows"]:
        ref = REPORTED.get((row["p"], row["n"], row["q"]))
        print(f"{row['p']:>4} {row['n']:>5} {row['q']:>3} {row['rmse']:>8.4f} {row['identity_rmse']:>9.4f} "
              f"{'' if ref is None else f'{ref:.4f}':>9}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(table, fh, indent=2, default=str)


if __name__ == "__main__":
    main()
