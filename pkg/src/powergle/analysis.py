"""Estimators over trajectories and ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import rng as rngmod
from .errors import ConfigError, DomainError
from .kernel import KernelParams
from .model import LimitStateZM, PotentialSpec, lyapunov_zm


@dataclass(frozen=True)
class AbortRecord:
    step: int
    time: float


@dataclass
class Trajectory:
    """States of one system on a uniform time grid.

    ``states`` has shape ``(len(times), dim)``; column 0 is the position,
    column 1 the velocity for systems that carry one.
    """

    times: np.ndarray
    states: np.ndarray
    kind: str = ""
    aborted: AbortRecord | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.shape[0] != self.times.size:
            raise ValueError("states and times differ in length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def position(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def velocity(self) -> np.ndarray:
        return self.states[:, 1]


@dataclass
class EnsembleStats:
    """Summary of one scalar per trajectory; NaN entries count as aborted runs."""

    values: np.ndarray
    n: int
    n_aborted: int
    mean: float
    se: float
    q25: float
    median: float
    q75: float
    median_se: float
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, values) -> "EnsembleStats":
        v = np.asarray(values, dtype=float)
        ok = v[np.isfinite(v)]
        n = ok.size
        if n == 0:
            nan = math.nan
            return cls(v, 0, v.size, nan, nan, nan, nan, nan, nan)
        q25, med, q75 = np.quantile(ok, [0.25, 0.5, 0.75])
        std = float(np.std(ok, ddof=1)) if n > 1 else math.nan
        # normal-theory SE of the median with the IQR as a robust spread
        med_se = math.sqrt(math.pi / 2) * (q75 - q25) / 1.349 / math.sqrt(n) if n > 1 else math.nan
        return cls(v, n, v.size - n, float(np.mean(ok)), std / math.sqrt(n),
                   float(q25), float(med), float(q75), med_se)

    def ci95(self) -> tuple[float, float]:
        return self.mean - 1.96 * self.se, self.mean + 1.96 * self.se


PROJECTIONS = ("position", "velocity", "position+velocity")


def _project(states: np.ndarray, projection: str):
    if projection == "position":
        return states[..., :1]
    if projection == "velocity":
        return states[..., 1:2]
    if projection == "position+velocity":
        return states[..., :2]
    raise ConfigError(f"unknown projection {projection!r}; choose from {PROJECTIONS}")


def sup_errors(a: np.ndarray, b: np.ndarray, projection: str = "position") -> np.ndarray:
    """Batched sup-norm differences for observation arrays ``(n_t, B, k)``.

    With ``position+velocity`` the per-time error is ``|dx| + |dv|``.
    """
    d = np.abs(_project(a, projection) - _project(b, projection)).sum(axis=-1)
    return d.max(axis=0)


def sup_error(a: Trajectory, b: Trajectory, projection: str = "position") -> float:
    """Grid maximum of the selected absolute difference between two trajectories."""
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise ConfigError("trajectories live on different time grids")
    return float(sup_errors(a.states, b.states, projection))


def _lag_indices(times: np.ndarray, lag_times) -> np.ndarray:
    lag_times = np.atleast_1d(np.asarray(lag_times, dtype=float))
    if np.any(lag_times < times[0]) or np.any(lag_times > times[-1] * (1 + 1e-12) + 1e-12):
        raise DomainError("lag beyond trajectory length")
    idx = np.clip(np.searchsorted(times, lag_times), 1 if times.size > 1 else 0, times.size - 1)
    if times.size > 1:
        # nearest of the two neighbouring grid points
        idx = np.where(np.abs(times[idx - 1] - lag_times) <= np.abs(times[idx] - lag_times),
                       idx - 1, idx)
    tol = 1e-9 * max(1.0, float(np.abs(times).max()))
    if np.any(np.abs(times[idx] - lag_times) > tol):
        raise DomainError("lag times must lie on the trajectory grid")
    return idx


def msd_from_positions(times, positions, lag_times) -> np.ndarray:
    """Rows ``(t, mean squared displacement, SE)`` from positions ``(n_traj, n_t)``."""
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[0] == 0:
        raise ConfigError("msd needs a nonempty ensemble")
    idx = _lag_indices(np.asarray(times, dtype=float), lag_times)
    disp2 = (pos[:, idx] - pos[:, :1]) ** 2
    n = disp2.shape[0]
    se = disp2.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(idx.size, math.nan)
    return np.column_stack([np.asarray(times)[idx], disp2.mean(axis=0), se])


def msd(trajectories: Sequence[Trajectory], lag_times) -> np.ndarray:
    """Ensemble mean squared displacement ``E (x(t) - x(0))**2`` with standard errors."""
    if len(trajectories) == 0:
        raise ConfigError("msd needs a nonempty ensemble")
    times = trajectories[0].times
    pos = np.stack([t.position for t in trajectories])
    return msd_from_positions(times, pos, lag_times)


def loglog_slope(points, window) -> tuple[float, float]:
    """Least-squares slope of ``log y`` against ``log t`` within ``[t_min, t_max]``."""
    pts = np.asarray(points, dtype=float)
    t, y = pts[:, 0], pts[:, 1]
    sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 3:
        raise DomainError("need at least 3 points inside the fit window")
    if np.any(t[sel] <= 0) or np.any(y[sel] <= 0):
        raise DomainError("log-log fit needs positive values")
    fit = stats.linregress(np.log(t[sel]), np.log(y[sel]))
    return float(fit.slope), float(fit.stderr)


def autocov(series, dt: float, lags, centered: bool = True) -> np.ndarray:
    """Rows ``(lag, cov, SE)`` of ``Cov(F(0), F(lag))`` across an ensemble ``(n_traj, n_t)``.

    With ``centered=False`` the raw second moment ``E F(0) F(lag)`` is
    returned instead.
    """
    F = np.asarray(series, dtype=float)
    n, nt = F.shape
    lags = np.atleast_1d(np.asarray(lags, dtype=float))
    idx = np.rint(lags / dt).astype(int)
    if np.any(idx < 0) or np.any(idx >= nt):
        raise DomainError("lag beyond trajectory length")
    a = F[:, :1]
    b = F[:, idx]
    if centered:
        prod = (a - a.mean()) * (b - b.mean(axis=0))
        cov = prod.sum(axis=0) / (n - 1)
    else:
        prod = a * b
        cov = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(idx.size, math.nan)
    return np.column_stack([idx * dt, cov, se])


def exit_time(traj: Trajectory, R: float, which: str = "position", s: float | None = None):
    """First grid time where ``|position|`` (or the state norm) reaches `R`; None if never.

    ``which="norm"`` uses the weighted norm of the whole state with index `s`
    (modes weighted by ``k**(-2s)``); ``which="pair"`` uses ``sqrt(x**2 + v**2)``.
    """
    if which == "position":
        r = np.abs(traj.position)
    elif which == "pair":
        r = np.hypot(traj.states[:, 0], traj.states[:, 1])
    elif which == "norm":
        r = state_norms(traj, s if s is not None else 0.0)
    else:
        raise ConfigError(f"unknown exit selector {which!r}")
    hit = np.nonzero(r >= R)[0]
    return float(traj.times[hit[0]]) if hit.size else None


def first_exit_steps(values: np.ndarray, R: float) -> np.ndarray:
    """Batched exit index of ``|values|`` (shape (n_t, B)) from radius R; -1 if never."""
    hit = np.abs(values) >= R
    first = hit.argmax(axis=0)
    return np.where(hit.any(axis=0), first, -1)


def state_norms(traj: Trajectory, s: float) -> np.ndarray:
    """Weighted state norm along a trajectory.

    For full-system states ``(x, v, z)`` the mode block starts at column 2;
    for small-mass limit states ``(u, f)`` at column 1.
    """
    st = traj.states
    start = 1 if traj.kind == "SmallMassLimit" else min(2, st.shape[1])
    n = st.shape[1] - start
    w = np.arange(1, n + 1, dtype=float) ** (-2 * s)
    return np.sqrt((st[:, :start] ** 2).sum(axis=1) + (w * st[:, start:] ** 2).sum(axis=1))


def lyapunov_series(traj: Trajectory, phi: PotentialSpec, gamma: float,
                    params: KernelParams, s: float) -> np.ndarray:
    """Lyapunov function of the small-mass limit along a trajectory of that system."""
    return np.array([lyapunov_zm(LimitStateZM.from_array(x), phi, gamma, params, s)
                     for x in traj.states])


def ou_sup_moment(eta: float, kappa: float, q: float, T: float, n_traj: int,
                  dt: float | None = None, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo ``E sup_{t<=T} f(t)**(2q)`` with standard error.

    ``f(t) = sqrt(2 kappa) int_0^t exp(-eta (t - r)) dW(r)`` is simulated by
    exact OU transitions from ``f(0) = 0``. The default step resolves both
    ``T`` and the relaxation time ``1/eta``.
    """
    if not (eta > 0 and kappa >= 0 and q > 1 and T >= 0 and n_traj > 0):
        raise DomainError("need eta > 0, kappa >= 0, q > 1, T >= 0, n_traj > 0")
    if kappa == 0 or T == 0:
        return 0.0, 0.0
    if dt is None:
        dt = min(T / 1000, 0.01 / eta)
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    h = T / n
    decay = math.exp(-eta * h)
    sd = math.sqrt(kappa * -math.expm1(-2 * eta * h) / eta)
    gen = rngmod.auxiliary_generator(seed, int(round(1e6 * eta)) & 0xFFFFFFFF)
    f = np.zeros(n_traj)
    sup = np.zeros(n_traj)
    for _ in range(n):
        f = decay * f + sd * gen.standard_normal(n_traj)
        np.maximum(sup, np.abs(f), out=sup)
    vals = sup ** (2 * q)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_traj))
