"""Command-line front end: kernel inspection, the experiments, and config validation.

Exit codes: 0 success, 2 invalid configuration or violated assumptions,
3 numerical blow-up beyond the abort threshold, 64 usage errors.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import runner
from .errors import BlowUpError, ConfigError, DivergenceError, DomainError, ExperimentError
from .kernel import KernelParams, kernel_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64

DEFAULT_T_GRID = "1e2,1e3,1e4"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="powergle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    k = sub.add_parser("kernel", help="tabulate K(t) and t^alpha K(t) as CSV on stdout")
    k.add_argument("--config", help="take alpha, beta and n_modes from this TOML file")
    k.add_argument("--alpha", type=float)
    k.add_argument("--beta", type=float)
    k.add_argument("--n-modes", type=int)
    k.add_argument("--t-grid", type=_floats, default=None,
                   help=f"comma-separated times (default {DEFAULT_T_GRID})")

    for name in runner.EXPERIMENTS:
        e = sub.add_parser(name, help=f"run the {name} experiment")
        e.add_argument("--config", required=True)
        e.add_argument("--out", default="results", help="output directory (default: results)")
        e.add_argument("--seed", type=_seed, help="master seed, overrides the config")
        e.add_argument("--threads", type=int, default=1,
                       help="worker threads; results do not depend on it")

    v = sub.add_parser("validate", help="check a config against the model assumptions")
    v.add_argument("--config")
    v.add_argument("--alpha", type=float)
    v.add_argument("--beta", type=float)
    v.add_argument("--s", type=float)
    return p


def _overrides(args, *names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _kernel(args) -> int:
    raw = runner.load_config(args.config).to_dict() if args.config else {}
    raw.update({"alpha": args.alpha, "beta": args.beta, "n_modes": args.n_modes}
               if args.config is None else _overrides(args, "alpha", "beta", "n_modes"))
    if raw.get("alpha") is None or raw.get("beta") is None:
        raise ConfigError("kernel needs --alpha and --beta (or --config)")
    params = KernelParams(raw["alpha"], raw["beta"], raw.get("n_modes"))
    grid = args.t_grid if args.t_grid is not None else _floats(DEFAULT_T_GRID)
    rows = kernel_table(params, np.asarray(grid, dtype=float))
    sys.stdout.write(runner.csv_text(["t", "K", "t_alpha_K"], rows.tolist()))
    return EXIT_OK


def _validate(args) -> int:
    if args.config:
        cfg = runner.load_config(args.config, **_overrides(args, "alpha", "beta", "s"))
    else:
        cfg = runner.config_from_dict(_overrides(args, "alpha", "beta", "s"))
    val = runner.validate_config(cfg)
    print(f"regime: {val.regime}")
    print(f"assumption4: {'holds' if val.assumption4 else 'fails'}")
    if val.assumption1 is not None:
        print(f"assumption1: holds (constant {val.assumption1.constant:.6g})")
    if val.assumption3 is not None:
        a3 = val.assumption3
        print(f"assumption3: {'holds (constant %.6g)' % a3.constant if a3.ok else 'fails'}")
    for note in val.notes:
        print(f"note: {note}")
    return EXIT_OK


def _experiment(args) -> int:
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg = runner.load_config(args.config, seed=args.seed)
    cfg.experiment = args.command
    result, wall = runner.timed(runner.RUNNERS[args.command], cfg, threads=args.threads)
    path = runner.write_outputs(result, args.out, args.command, wall)
    for note in result.metadata.get("notes", []):
        print(f"note: {note}", file=sys.stderr)
    print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "kernel":
            return _kernel(args)
        if args.command == "validate":
            return _validate(args)
        return _experiment(args)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, DivergenceError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUpError, ExperimentError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
