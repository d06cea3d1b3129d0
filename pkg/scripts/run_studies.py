"""Run every canned study from configs/ and print a one-line summary of each.

Usage: python3 scripts/run_studies.py [--out results] [--threads 1] [--only NAME ...]
"""

import argparse
import sys
from pathlib import Path

from powergle import runner

ROOT = Path(__file__).resolve().parents[1]
STUDIES = {
    "small_mass": "small_mass.toml",
    "white_noise": "white_noise.toml",
    "msd_diffusive": "msd_diffusive.toml",
    "msd_subdiffusive": "msd_subdiffusive.toml",
    "fdt": "fdt.toml",
}


def summarize(name, res):
    if res.columns[0] in ("m", "eps"):
        meds = ", ".join(f"{a:g}: {b:.4g}" for a, b in zip(res.column(res.columns[0]),
                                                        res.column("median")))
        return f"{name}: median sup error by {res.columns[0]} -> {meds}"
    if "slope" in res.metadata:
        return f"{name}: slope {res.metadata['slope']:.4f} ± {res.metadata['slope_stderr']:.4f}"
    if "z" in res.columns:
        return f"{name}: max |z| = {abs(res.column('z')).max():.3f}"
    return name


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", choices=sorted(STUDIES))
    args = ap.parse_args(argv)
    for name in args.only or STUDIES:
        cfg = runner.load_config(ROOT / "configs" / STUDIES[name])
        res, wall = runner.timed(runner.RUNNERS[cfg.experiment], cfg, threads=args.threads)
        runner.write_outputs(res, args.out, name, wall)
        print(f"{summarize(name, res)}  [{wall:.1f} s]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
