"""Convergence study for every manufactured problem; one CSV per problem."""
import argparse
from pathlib import Path

from pemcell.mms import PROBLEMS, mms_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", default="out/mms")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for problem in PROBLEMS:
        result = mms_study(problem, args.levels, threads=args.threads)
        result.write_csv(out / f"mms_{problem}.csv")
        print(f"{problem:10s} L2 order {result.order_l2:.3f}  H1 order {result.order_h1:.3f}")


if __name__ == "__main__":
    main()
