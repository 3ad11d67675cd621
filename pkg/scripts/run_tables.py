"""Flow vs KDE simulation studies on the four benchmark intensities.

    python scripts/run_tables.py --tables table1 table2 --reps 10 --layers 1 2 3 4 5
"""
import argparse
import logging

from flowintensity.experiments import TABLES, desk_budget, run_table
from flowintensity.simulate import get_intensity


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tables", nargs="+", default=sorted(TABLES), choices=sorted(TABLES))
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--layers", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--iters", type=int, default=None, help="default: desk budget for the dimension")
    ap.add_argument("--lr", type=float, default=None)
    ap.add_argument("--batch", type=int, default=None, help="minibatch size; 0 forces full batch")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    for name in args.tables:
        budget = desk_budget(get_intensity(TABLES[name]).dim, args.iters, args.lr, args.batch)
        result = run_table(name, reps=args.reps, seed=args.seed, layers=args.layers, budget=budget,
                           workers=args.workers)
        print(f"\n{name} ({args.reps} repetitions, mean count {sum(result.counts) / len(result.counts):.0f})")
        print(result.format())


if __name__ == "__main__":
    main()
