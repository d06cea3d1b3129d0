"""Normalised sup-moments of a stationary-rate OU process across decay rates."""

import argparse
import sys

from powergle import runner


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--etas", type=float, nargs="+", default=[1.0, 10.0, 100.0])
    ap.add_argument("--kappa", type=float, default=1.0)
    ap.add_argument("--q", type=float, default=2.0)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--n-traj", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    res = runner.run_sup_moment_scan(args.etas, args.kappa, args.q, args.T, args.n_traj, args.seed)
    sys.stdout.write(runner.csv_text(res.columns, res.rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
