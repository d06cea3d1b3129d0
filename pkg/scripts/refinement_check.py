"""Grid-bias check: median sup error at dt versus dt/2 on the same Brownian paths.

The coarse run merges pairs of fine noise steps exactly, so the only
difference between the two medians is the time-stepping error.
"""

import argparse
import sys
from pathlib import Path

from powergle import runner

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*",
                    default=[str(ROOT / "configs" / c) for c in ("small_mass.toml",
                                                                 "white_noise.toml")])
    ap.add_argument("--threshold", type=float, default=0.05)
    args = ap.parse_args(argv)
    worst = 0.0
    for path in args.configs:
        res = runner.run_refinement_check(runner.load_config(path))
        print(Path(path).name)
        sys.stdout.write(runner.csv_text(res.columns, res.rows))
        worst = max(worst, res.column("rel_change").max())
    print(f"largest relative change {worst:.4f} (threshold {args.threshold})")
    return 0 if worst < args.threshold else 1


if __name__ == "__main__":
    sys.exit(main())
