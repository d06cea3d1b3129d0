"""Experiment configuration, ensemble orchestration and the canned studies."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import rng as rngmod
from .analysis import (EnsembleStats, autocov, loglog_slope, msd_from_positions, ou_sup_moment,
                       sup_errors)
from .dynamics import (FULL, KINDS, SCALED, SMALL_MASS, WHITE_NOISE, CoupledNoiseGrid, FreeModes,
                       SystemSpec, coarsen, integrate, n_steps_for)
from .errors import ConfigError, ExperimentError
from .kernel import KernelParams, Regime, kernel_eval, validate_regime
from .model import potential_by_name, validate_dissipativity, validate_growth

EXPERIMENTS = ("small-mass", "white-noise", "msd", "fdt-check", "simulate")
MAX_ABORT_FRACTION = 0.01
PROBE = np.linspace(-10, 10, 401)


@dataclass
class ExperimentConfig:
    """Everything a study needs; loaded from a TOML file (see README for the schema)."""

    experiment: str = "small-mass"
    alpha: float = 2.0
    beta: float = 2.0
    n_modes: int | None = None
    s: float = 0.75
    potential: str = "quadratic"
    coefficients: list[float] | None = None
    gamma: float = 1.0
    m: float = 1.0
    m_list: list[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    eps_list: list[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    eps: float = 1.0
    system: str = FULL
    T: float = 1.0
    base_dt: float = 1e-2
    dt_divisor: float = 10.0
    n_trajectories: int = 100
    seed: int = 0
    cutoff_radius: float | None = None
    x0: float = 1.0
    v0: float = 0.0
    mode_init: str = "stationary"
    velocity_init: str = "fixed"
    q: float = 1.0
    dissipativity_n: float = 4.0
    lags: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    msd_window: list[float] = field(default_factory=lambda: [1e2, 1e3])
    msd_points: int = 41
    record_every: int = 1
    chunk_size: int = 128

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(self.alpha, self.beta, self.n_modes)

    @property
    def phi(self):
        return potential_by_name(self.potential, self.coefficients)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a TOML config; unknown keys are a configuration error."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} does not parse: {exc}") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return ExperimentConfig(**raw)


@dataclass
class Validation:
    regime: Regime
    assumption1: object
    assumption3: object | None
    assumption4: bool
    notes: list[str]


def validate_config(cfg: ExperimentConfig) -> Validation:
    """Check the config against the assumptions of the claimed experiment.

    Raises :class:`ConfigError` listing every violation.
    """
    bad: list[str] = []
    notes: list[str] = []
    if cfg.experiment not in EXPERIMENTS:
        bad.append(f"unknown experiment {cfg.experiment!r}")
    for name in ("gamma", "T", "base_dt", "dt_divisor", "m"):
        if not getattr(cfg, name) > 0 and not (name == "T" and getattr(cfg, name) == 0):
            bad.append(f"{name} must be positive")
    if cfg.n_trajectories < 1 or cfg.chunk_size < 1 or cfg.record_every < 1:
        bad.append("n_trajectories, chunk_size and record_every must be >= 1")
    if cfg.experiment == "small-mass" and (not cfg.m_list or min(cfg.m_list) <= 0):
        bad.append("m_list must be a nonempty list of positive masses")
    if cfg.experiment == "white-noise" and (not cfg.eps_list or min(cfg.eps_list) <= 0):
        bad.append("eps_list must be a nonempty list of positive values")
    if cfg.mode_init not in ("stationary", "zero"):
        bad.append("mode_init must be 'stationary' or 'zero'")
    if cfg.velocity_init not in ("fixed", "equilibrium"):
        bad.append("velocity_init must be 'fixed' or 'equilibrium'")
    if cfg.experiment == "simulate" and cfg.system not in KINDS:
        bad.append(f"system must be one of {KINDS}")

    rep = validate_regime(cfg.alpha, cfg.beta, cfg.s)
    if not rep.ok:
        bad.extend(f"Assumption 2: {v}" for v in rep.violations)
    needs_d = cfg.experiment == "white-noise" or (cfg.experiment == "simulate"
                                                  and cfg.system in (WHITE_NOISE, SCALED))
    if needs_d and rep.ok and rep.regime is not Regime.D:
        bad.append(f"Assumption 2 (D): white-noise limit needs the diffusive regime, got {rep.regime}")
    if cfg.n_modes is None and cfg.alpha * cfg.beta <= 1:
        bad.append("n_modes must be given when αβ ≤ 1")

    a1 = a3 = None
    try:
        phi = cfg.phi
    except ConfigError as exc:
        bad.append(str(exc))
        phi = None
    if phi is not None:
        if cfg.experiment == "msd":
            if phi.name != "free":
                bad.append("msd studies the force-free GLE: potential must be 'free'")
            notes.append("outside well-posedness assumptions: Φ≡0 is not coercive (Assumption 1)")
        else:
            a1 = validate_growth(phi, PROBE)
            if not a1.ok:
                bad.append(f"Assumption 1: {a1.message}")
        if cfg.experiment == "white-noise":
            a3 = validate_dissipativity(phi, cfg.dissipativity_n, PROBE)
            if not a3.ok:
                notes.append(f"Assumption 3 fails (n={cfg.dissipativity_n}); no L^q report")
            if not rep.assumption4:
                notes.append("Assumption 4 (α>2, (α−2)β>1) fails; no L^q report")
    if bad:
        raise ConfigError("; ".join(bad), bad)
    return Validation(rep.regime, a1, a3, rep.assumption4, notes)


def step_size(cfg: ExperimentConfig, m: float | None = None, eps: float | None = None,
              T: float | None = None) -> float:
    """``min(base_dt, m/divisor, eps/divisor)`` rounded down so the step divides T."""
    dt = cfg.base_dt
    if m is not None:
        dt = min(dt, m / cfg.dt_divisor)
    if eps is not None:
        dt = min(dt, eps / cfg.dt_divisor)
    T = cfg.T if T is None else T
    if T > 0:
        dt = T / math.ceil(T / dt - 1e-9)
    return dt


# -- ensemble machinery ---------------------------------------------------------

def noise_stream(seed: int, trajectories: Sequence[int], n_modes: int, dt: float, n_steps: int):
    """Yield consecutive noise grids block by block."""
    for start in range(0, n_steps, rngmod.BLOCK):
        stop = min(n_steps, start + rngmod.BLOCK)
        z = rngmod.noise_normals(seed, trajectories, n_modes, start, stop)
        yield CoupledNoiseGrid.from_normals(dt, z, start)


def initial_full_states(cfg: ExperimentConfig, params: KernelParams, trajectories,
                        m: float | None = None) -> np.ndarray:
    """Full-system initial states ``(B, 2 + N)``: fixed x0, velocity and modes per config."""
    n = params.n_modes
    draws = rngmod.initial_normals(cfg.seed, list(trajectories), n + 1)
    X = np.zeros((len(trajectories), 2 + n))
    X[:, 0] = cfg.x0
    if cfg.velocity_init == "equilibrium":
        X[:, 1] = draws[:, 0] / math.sqrt(m if m is not None else cfg.m)
    else:
        X[:, 1] = cfg.v0
    if cfg.mode_init == "stationary":
        X[:, 2:] = draws[:, 1:]
    return X


def run_chunked(cfg: ExperimentConfig, chunk_fn: Callable, threads: int = 1) -> list:
    """Apply `chunk_fn` to fixed-size trajectory chunks, returning results in chunk order.

    Chunk boundaries depend only on the config, so the output does not
    depend on `threads`.
    """
    ids = list(range(cfg.n_trajectories))
    chunks = [ids[i:i + cfg.chunk_size] for i in range(0, len(ids), cfg.chunk_size)]
    if threads <= 1:
        return [chunk_fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(chunk_fn, chunks))


def _check_aborts(n_aborted: int, n: int, label: str):
    if n_aborted > MAX_ABORT_FRACTION * n:
        raise ExperimentError(f"{label}: {n_aborted} of {n} trajectories blew up")


@dataclass
class StudyResult:
    columns: list[str]
    rows: list[list[float]]
    metadata: dict = field(default_factory=dict)
    extra_tables: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)


def _stats_row(st: EnsembleStats) -> list[float]:
    return [st.n, st.n_aborted, st.median, st.q25, st.q75, st.mean, st.se, st.median_se]


STAT_COLUMNS = ["n_trajectories", "n_aborted", "median", "q25", "q75", "mean", "se", "median_se"]


def _coupled_sup_errors(cfg, make_specs, init_fn, dt, n_steps, projection, threads,
                        coarse_rates=None):
    """Per-trajectory sup errors of a coupled pair of systems on shared noise.

    With `coarse_rates`, noise is drawn at ``dt/2`` and merged pairwise, so
    the run sees the same Brownian paths as a run at half the step.
    """
    a_spec, b_spec = make_specs()
    n_modes = a_spec.params.n_modes

    def noise(ids):
        if coarse_rates is None:
            return noise_stream(cfg.seed, ids, n_modes, dt, n_steps)
        return (coarsen(g, coarse_rates)
                for g in noise_stream(cfg.seed, ids, n_modes, dt / 2, 2 * n_steps))

    def chunk(ids):
        Xa, Xb = init_fn(ids)
        res = integrate([a_spec, b_spec], [Xa, Xb], noise(ids), n_steps)
        err = sup_errors(res.observations[0], res.observations[1], projection)
        err[(res.abort_step[0] >= 0) | (res.abort_step[1] >= 0)] = np.nan
        return err

    return np.concatenate(run_chunked(cfg, chunk, threads))


def _small_mass_errors(cfg, m, dt, threads=1, coarse=False):
    params, phi = cfg.kernel, cfg.phi
    n_steps = n_steps_for(cfg.T, dt)

    def specs():
        return (SystemSpec(FULL, cfg.gamma, phi, params, m=m, cutoff_radius=cfg.cutoff_radius),
                SystemSpec(SMALL_MASS, cfg.gamma, phi, params, cutoff_radius=cfg.cutoff_radius))

    def init(ids):
        X = initial_full_states(cfg, params, ids, m)
        U = np.column_stack([X[:, 0], X[:, 2:] - params.sqrt_c * X[:, :1]])
        return X, U

    return _coupled_sup_errors(cfg, specs, init, dt, n_steps, "position", threads,
                               params.lam if coarse else None)


def _white_noise_errors(cfg, eps, dt, threads=1, coarse=False):
    params, phi = cfg.kernel, cfg.phi
    n_steps = n_steps_for(cfg.T, dt)

    def specs():
        return (SystemSpec(SCALED, cfg.gamma, phi, params, m=cfg.m, eps=eps,
                           cutoff_radius=cfg.cutoff_radius),
                SystemSpec(WHITE_NOISE, cfg.gamma, phi, params, m=cfg.m,
                           cutoff_radius=cfg.cutoff_radius))

    def init(ids):
        X = initial_full_states(cfg, params, ids)
        return X, X[:, :2].copy()

    return _coupled_sup_errors(cfg, specs, init, dt, n_steps, "position+velocity", threads,
                               params.lam / eps if coarse else None)


def run_small_mass_study(cfg: ExperimentConfig, threads: int = 1) -> StudyResult:
    """Sup position error between the full GLE at each mass and the small-mass limit."""
    val = validate_config(cfg)
    rows = []
    for m in cfg.m_list:
        dt = step_size(cfg, m=m)
        err = _small_mass_errors(cfg, m, dt, threads)
        st = EnsembleStats.from_values(err)
        _check_aborts(st.n_aborted, err.size, f"m={m}")
        rows.append([m, dt, n_steps_for(cfg.T, dt)] + _stats_row(st))
    meta = _metadata(cfg, val, cfg.kernel)
    return StudyResult(["m", "dt", "n_steps"] + STAT_COLUMNS, rows, meta)


def run_white_noise_study(cfg: ExperimentConfig, threads: int = 1) -> StudyResult:
    """Sup of ``|x_eps - u| + |v_eps - p|`` between the scaled GLE and the white-noise limit.

    When the dissipativity and regularity assumptions hold, the mean of that
    sup raised to ``cfg.q`` is reported as well.
    """
    val = validate_config(cfg)
    lq = bool(val.assumption3 is not None and val.assumption3.ok and val.assumption4)
    rows = []
    for eps in cfg.eps_list:
        dt = step_size(cfg, m=cfg.m, eps=eps)
        err = _white_noise_errors(cfg, eps, dt, threads)
        st = EnsembleStats.from_values(err)
        _check_aborts(st.n_aborted, err.size, f"eps={eps}")
        if lq:
            lst = EnsembleStats.from_values(err ** cfg.q)
            lq_cols = [lst.mean, lst.se]
        else:
            lq_cols = [math.nan, math.nan]
        rows.append([eps, dt, n_steps_for(cfg.T, dt)] + _stats_row(st) + [cfg.q] + lq_cols)
    meta = _metadata(cfg, val, cfg.kernel)
    meta["lq_reported"] = lq
    return StudyResult(["eps", "dt", "n_steps"] + STAT_COLUMNS + ["q", "lq_mean", "lq_se"],
                       rows, meta)


def run_refinement_check(cfg: ExperimentConfig, threads: int = 1) -> StudyResult:
    """Relative change of the median sup error when the step is halved on the same paths."""
    validate_config(cfg)
    rows = []
    if cfg.experiment == "small-mass":
        values, errors = cfg.m_list, lambda v, dt, c: _small_mass_errors(cfg, v, dt, threads, c)
        step = lambda v: step_size(cfg, m=v)
    elif cfg.experiment == "white-noise":
        values, errors = cfg.eps_list, lambda v, dt, c: _white_noise_errors(cfg, v, dt, threads, c)
        step = lambda v: step_size(cfg, m=cfg.m, eps=v)
    else:
        raise ConfigError("refinement check applies to the small-mass and white-noise studies")
    for v in values:
        dt = step(v)
        coarse = float(np.nanmedian(errors(v, dt, True)))
        fine = float(np.nanmedian(errors(v, dt / 2, False)))
        rows.append([v, dt, coarse, fine, abs(coarse - fine) / fine])
    return StudyResult(["value", "dt", "median_dt", "median_half_dt", "rel_change"], rows)


def msd_lag_times(cfg: ExperimentConfig, dt: float) -> np.ndarray:
    """Log-spaced lag times on the step grid, always covering the fit window."""
    n_total = n_steps_for(cfg.T, dt)
    lo = max(1, int(round(min(10.0, cfg.msd_window[0]) / dt)))
    idx = np.unique(np.rint(np.geomspace(lo, n_total, cfg.msd_points)).astype(int))
    return idx * dt


def run_msd_study(cfg: ExperimentConfig, threads: int = 1) -> StudyResult:
    """Mean squared displacement of the force-free GLE and its log-log slope over the window."""
    val = validate_config(cfg)
    params = cfg.kernel
    dt = step_size(cfg, m=cfg.m)
    n_steps = n_steps_for(cfg.T, dt)
    spec = SystemSpec(FULL, cfg.gamma, cfg.phi, params, m=cfg.m)
    lags = msd_lag_times(cfg, dt)
    lag_idx = np.rint(lags / dt).astype(int)

    def chunk(ids):
        X = initial_full_states(cfg, params, ids, cfg.m)
        res = integrate([spec], [X], noise_stream(cfg.seed, ids, params.n_modes, dt, n_steps),
                        n_steps, observers=[lambda S: S[:, 0]])
        pos = res.observations[0].T
        pos[res.abort_step[0] >= 0] = np.nan
        return np.column_stack([pos[:, 0], pos[:, lag_idx]])

    pos = np.concatenate(run_chunked(cfg, chunk, threads))
    ok = np.isfinite(pos).all(axis=1)
    _check_aborts(int((~ok).sum()), pos.shape[0], "msd")
    times = np.concatenate([[0.0], lags])
    table = msd_from_positions(times, pos[ok], lags)
    meta = _metadata(cfg, val, params)
    meta["dt"] = dt
    fit_cols = ["slope", "stderr", "t_min", "t_max"]
    if pos[ok].shape[0] > 1:
        slope, se = loglog_slope(table[:, :2], cfg.msd_window)
    else:
        slope, se = math.nan, math.nan
    meta["slope"], meta["slope_stderr"] = slope, se
    fit = StudyResult(fit_cols, [[slope, se, cfg.msd_window[0], cfg.msd_window[1]]])
    return StudyResult(["t", "msd", "se"], table.tolist(), meta, {"msd_fit": fit})


def run_fdt_check(cfg: ExperimentConfig, threads: int = 1) -> StudyResult:
    """Autocovariance of the colored force against the kernel at the configured lags."""
    val = validate_config(cfg)
    params = cfg.kernel
    if not cfg.lags or max(cfg.lags) > cfg.T + 1e-12 or min(cfg.lags) < 0:
        raise ConfigError(f"lags must be nonempty and lie in [0, T={cfg.T}]")
    dt = step_size(cfg, m=cfg.m)
    n_steps = n_steps_for(cfg.T, dt)
    spec = SystemSpec(FULL, cfg.gamma, cfg.phi, params, m=cfg.m)
    free = FreeModes(params)
    lag_idx = np.rint(np.asarray(cfg.lags) / dt).astype(int)

    def chunk(ids):
        X = initial_full_states(cfg, params, ids, cfg.m)
        zeta = X[:, 2:].copy()
        res = integrate([spec, free], [X, zeta],
                        noise_stream(cfg.seed, ids, params.n_modes, dt, n_steps), n_steps,
                        observers=[lambda S: S[:, 0], lambda Z: -(Z * params.sqrt_c).sum(axis=1)])
        F = res.observations[1].T
        F[res.abort_step[0] >= 0] = np.nan
        return F[:, :lag_idx.max() + 1]

    F = np.concatenate(run_chunked(cfg, chunk, threads))
    ok = np.isfinite(F).all(axis=1)
    _check_aborts(int((~ok).sum()), F.shape[0], "fdt")
    lag_grid = lag_idx * dt
    cov = autocov(F[ok], dt, lag_grid)
    K = kernel_eval(params, lag_grid)
    rows = []
    for lag, (_, c, se), k in zip(lag_grid, cov, np.atleast_1d(K)):
        z = (c - k) / se if se > 0 else (0.0 if c == k else math.inf)
        rows.append([lag, c, k, se, z])
    meta = _metadata(cfg, val, params)
    meta["dt"] = dt
    return StudyResult(["lag", "cov", "kernel", "se", "z"], rows, meta)


def run_simulate(cfg: ExperimentConfig, threads: int = 1) -> StudyResult:
    """Plain trajectories of one system; rows ``(traj, t, position, velocity)``."""
    val = validate_config(cfg)
    params, phi = cfg.kernel, cfg.phi
    kind = cfg.system
    m = cfg.m if kind != SMALL_MASS else None
    eps = cfg.eps if kind == SCALED else None
    spec = SystemSpec(kind, cfg.gamma, phi, params, m=m, eps=eps, cutoff_radius=cfg.cutoff_radius)
    dt = step_size(cfg, m=m, eps=eps)
    n_steps = n_steps_for(cfg.T, dt)
    keep = np.arange(0, n_steps + 1, cfg.record_every)

    def chunk(ids):
        X = initial_full_states(cfg, params, ids, m)
        if kind == SMALL_MASS:
            X = np.column_stack([X[:, 0], X[:, 2:] - params.sqrt_c * X[:, :1]])
        elif kind == WHITE_NOISE:
            X = X[:, :2].copy()
        res = integrate([spec], [X], noise_stream(cfg.seed, ids, params.n_modes, dt, n_steps),
                        n_steps)
        obs = res.observations[0][keep]
        return ids, obs, res.abort_step[0]

    rows = []
    n_abort = 0
    for ids, obs, ab in run_chunked(cfg, chunk, threads):
        n_abort += int((ab >= 0).sum())
        for b, tid in enumerate(ids):
            for i, n in enumerate(keep):
                vel = obs[i, b, 1] if obs.shape[2] > 1 else math.nan
                rows.append([tid, n * dt, obs[i, b, 0], vel])
    _check_aborts(n_abort, cfg.n_trajectories, "simulate")
    meta = _metadata(cfg, val, params)
    meta.update(dt=dt, aborted=n_abort)
    return StudyResult(["traj", "t", "position", "velocity"], rows, meta)


def run_sup_moment_scan(etas=(1.0, 10.0, 100.0), kappa: float = 1.0, q: float = 2.0, T: float = 1.0,
                    n_traj: int = 10_000, seed: int = 0) -> StudyResult:
    """Normalised OU sup-moments ``E sup f**(2q) * eta**(q-1) / kappa**q`` across rates."""
    rows = []
    for eta in etas:
        est, se = ou_sup_moment(eta, kappa, q, T, n_traj, seed=seed)
        scale = eta ** (q - 1) / kappa ** q if kappa > 0 else 0.0
        rows.append([eta, est, se, est * scale, se * scale])
    return StudyResult(["eta", "sup_moment", "se", "normalized", "normalized_se"], rows,
                       {"kappa": kappa, "q": q, "T": T, "n_traj": n_traj, "seed": seed})


RUNNERS = {
    "small-mass": run_small_mass_study,
    "white-noise": run_white_noise_study,
    "msd": run_msd_study,
    "fdt-check": run_fdt_check,
    "simulate": run_simulate,
}


def _metadata(cfg: ExperimentConfig, val: Validation, params: KernelParams) -> dict:
    meta = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "n_modes": params.n_modes,
        "regime": str(val.regime),
        "assumption4": val.assumption4,
        "notes": list(val.notes),
    }
    if val.assumption1 is not None:
        meta["assumption1_constant"] = val.assumption1.constant
    if val.assumption3 is not None:
        meta["assumption3"] = {"ok": val.assumption3.ok, "constant": val.assumption3.constant,
                               "n": cfg.dissipativity_n}
    return meta


# -- output -------------------------------------------------------------------

def format_number(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def csv_text(columns: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_number(v) for v in r])
    return buf.getvalue()


def write_outputs(result: StudyResult, out_dir, name: str, wall_time: float | None = None) -> Path:
    """Write ``<name>.csv``, any extra tables, and a ``<name>.meta.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    path.write_text(csv_text(result.columns, result.rows))
    for extra, tab in result.extra_tables.items():
        (out / f"{extra}.csv").write_text(csv_text(tab.columns, tab.rows))
    meta = dict(result.metadata)
    if wall_time is not None:
        meta["wall_time_s"] = wall_time
    (out / f"{name}.meta.json").write_text(json.dumps(meta, indent=2, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
