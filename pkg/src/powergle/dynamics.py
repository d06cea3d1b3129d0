"""Integrators for the Markovian GLE, its two limits and the eps-scaled system.

All auxiliary modes are advanced exactly (Ornstein-Uhlenbeck transition with
the coupling source frozen over the step), and the mode force entering the
velocity equation uses the exact time integral of the mode over the step.
Position and velocity are advanced by explicit Euler-Maruyama.

Noise enters only through a :class:`CoupledNoiseGrid`, so two systems fed
the same grid are pathwise coupled: both consume the same Brownian increments
``dW_0..dW_N``, and the exponentially weighted integrals used by the exact
mode updates are built from those increments plus independent auxiliary
normals, with the exact joint covariance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .analysis import AbortRecord, Trajectory
from .errors import BlowUpError, ConfigError
from .kernel import KernelParams
from .model import LimitStateZM, PairState, PhaseState, PotentialSpec, cutoff_theta

FULL = "FullGLE"
SMALL_MASS = "SmallMassLimit"
SCALED = "ScaledGLE"
WHITE_NOISE = "WhiteNoiseLimit"
KINDS = (FULL, SMALL_MASS, SCALED, WHITE_NOISE)


# -- exact OU step constants ---------------------------------------------------

def _e1(y):
    """(1 - exp(-y)) / y"""
    y = np.asarray(y, dtype=float)
    safe = np.where(y > 0, y, 1.0)
    return np.where(y > 0, -np.expm1(-safe) / safe, 1.0)


def _e2(y):
    """(y - 1 + exp(-y)) / y**2"""
    y = np.asarray(y, dtype=float)
    small = y < 1e-2
    safe = np.where(small, 1.0, y)
    direct = (safe + np.expm1(-safe)) / safe ** 2
    series = 0.5 - y / 6 + y ** 2 / 24 - y ** 3 / 120 + y ** 4 / 720 - y ** 5 / 5040
    return np.where(small, series, direct)


def _resid(y):
    """(1 - exp(-2y)) - 2y e1(y)**2, the conditional variance factor of the weighted integral."""
    y = np.asarray(y, dtype=float)
    small = y < 2e-2
    safe = np.where(small, 1.0, y)
    direct = -np.expm1(-2 * safe) - 2 * safe * _e1(safe) ** 2
    series = (y ** 3 / 6 - y ** 4 / 6 + 17 * y ** 5 / 180 - 7 * y ** 6 / 180
              + 43 * y ** 7 / 3360 - 107 * y ** 8 / 30240)
    return np.maximum(np.where(small, series, direct), 0.0)


@dataclass(frozen=True)
class OUStep:
    """Per-mode constants of one exact step of ``dz = (-eta z + a) dt + sqrt(2 eta) dW``.

    With the source ``a`` frozen over a step of length ``h``::

        z(h)         = decay z + a phi1 + I
        int_0^h z dt = phi1 z + a phi2 + J

    where ``I = sqrt(2 eta) int_0^h exp(-eta (h - r)) dW(r)`` and
    ``J = (sqrt(2 eta) dW - I) / eta``. Given the increment ``dW`` and an
    independent standard normal ``xi``::

        I = i_dw dW + i_xi xi,    J = j_dw dW - j_xi xi
    """

    decay: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    i_dw: np.ndarray
    i_xi: np.ndarray
    j_dw: np.ndarray
    j_xi: np.ndarray

    @classmethod
    def build(cls, eta, h: float) -> "OUStep":
        eta = np.asarray(eta, dtype=float)
        y = eta * h
        e1, e2, b = _e1(y), _e2(y), np.sqrt(_resid(y))
        root = np.sqrt(2 * eta)
        return cls(
            decay=np.exp(-y),
            phi1=h * e1,
            phi2=h * h * e2,
            i_dw=root * e1,
            i_xi=b,
            j_dw=root * h * e2,
            j_xi=b / eta,
        )

    def integrals(self, dW, xi):
        return self.i_dw * dW + self.i_xi * xi, self.j_dw * dW - self.j_xi * xi


def paired_moments(eta: float, h: float) -> tuple[float, float, float]:
    """Closed-form ``(Var dW, Var I, Cov(dW, I))`` for rate `eta` and step `h`."""
    return h, -np.expm1(-2 * eta * h), np.sqrt(2 * eta) * -np.expm1(-eta * h) / eta


# -- noise --------------------------------------------------------------------

class NoiseColumn(NamedTuple):
    """Noise of one step: increments ``dW_0..dW_N`` and auxiliary normals."""

    dt: float
    dW: np.ndarray
    xi: np.ndarray

    @classmethod
    def zero(cls, dt: float, n_modes: int) -> "NoiseColumn":
        return cls(dt, np.zeros(n_modes + 1), np.zeros(n_modes + 1))


@dataclass
class CoupledNoiseGrid:
    """Shared Brownian increments for modes ``0..N`` on a uniform grid.

    ``increments`` and ``normals`` have layout ``(n_steps, n_traj, n_modes + 1)``;
    column 0 drives the velocity (or position) equation and column ``k`` mode
    ``k``. ``normals`` are the auxiliary standard normals from which the
    exponentially weighted integrals are built for any requested rate.
    ``start`` is the index of the first step, so a long run can be split into
    consecutive grids.
    """

    dt: float
    increments: np.ndarray
    normals: np.ndarray
    start: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.increments.ndim != 3 or self.increments.shape != self.normals.shape:
            raise ConfigError("increments and normals must share shape (steps, traj, modes+1)")

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_traj(self) -> int:
        return self.increments.shape[1]

    @property
    def n_modes(self) -> int:
        return self.increments.shape[2] - 1

    def paired_integrals(self, rates):
        """Weighted integrals ``I`` and step integrals ``J`` for modes ``1..N`` at `rates`."""
        ou = OUStep.build(rates, self.dt)
        return ou.integrals(self.increments[..., 1:], self.normals[..., 1:])

    def column(self, n: int, traj: int = 0) -> NoiseColumn:
        return NoiseColumn(self.dt, self.increments[n, traj], self.normals[n, traj])

    @classmethod
    def zeros(cls, dt: float, n_steps: int, n_modes: int, n_traj: int = 1) -> "CoupledNoiseGrid":
        shape = (n_steps, n_traj, n_modes + 1)
        return cls(dt, np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_normals(cls, dt: float, normals_pair, start: int = 0) -> "CoupledNoiseGrid":
        """Build from standard normals with trailing axis ``(increment, auxiliary)``."""
        z = np.asarray(normals_pair, dtype=float)
        return cls(dt, z[..., 0] * np.sqrt(dt), np.ascontiguousarray(z[..., 1]), start)


def coarsen(grid: CoupledNoiseGrid, rates) -> CoupledNoiseGrid:
    """Merge pairs of steps into a grid of step ``2 dt`` on the same Brownian path.

    The weighted integrals of modes ``1..N`` at `rates` are composed exactly
    and the auxiliary normals of the coarse grid are solved for, so a system
    with those rates sees, on the coarse grid, the noise it would see on the
    fine one.
    """
    if grid.n_steps % 2:
        raise ConfigError("coarsening needs an even number of steps")
    rates = np.asarray(rates, dtype=float)
    fine_I, _ = grid.paired_integrals(rates)
    dW = grid.increments[0::2] + grid.increments[1::2]
    I = np.exp(-rates * grid.dt) * fine_I[0::2] + fine_I[1::2]
    ou = OUStep.build(rates, 2 * grid.dt)
    xi = grid.normals[0::2].copy()
    xi[..., 1:] = (I - ou.i_dw * dW[..., 1:]) / ou.i_xi
    return CoupledNoiseGrid(2 * grid.dt, dW, xi, grid.start // 2)


# -- systems ------------------------------------------------------------------

@dataclass(frozen=True)
class SystemSpec:
    """One of the four systems plus its physical parameters.

    ``kind`` is ``FullGLE`` (needs ``m``), ``SmallMassLimit``, ``ScaledGLE``
    (needs ``m`` and ``eps``) or ``WhiteNoiseLimit`` (needs ``m``, diffusive
    kernel). A ``cutoff_radius`` multiplies the potential force by the smooth
    cutoff of that radius.
    """

    kind: str
    gamma: float
    phi: PotentialSpec
    params: KernelParams
    m: float | None = None
    eps: float | None = None
    cutoff_radius: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown system kind {self.kind!r}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.kind in (FULL, SCALED, WHITE_NOISE) and not (self.m is not None and self.m > 0):
            raise ConfigError(f"{self.kind} needs a positive mass, got m={self.m}")
        if self.kind == SCALED and not (self.eps is not None and self.eps > 0):
            raise ConfigError(f"ScaledGLE needs a positive eps, got eps={self.eps}")
        if self.kind == WHITE_NOISE:
            a, b = self.params.alpha, self.params.beta
            if not (a > 1 and (a - 1) * b > 1):
                raise ConfigError("WhiteNoiseLimit requires the diffusive regime",
                                  ["Assumption 2 (D): α>1 and β>1/(α−1) required"])
        if self.cutoff_radius is not None and not self.cutoff_radius > 0:
            raise ConfigError(f"cutoff radius must be positive, got {self.cutoff_radius}")

    @property
    def dim(self) -> int:
        n = self.params.n_modes
        return {FULL: 2 + n, SCALED: 2 + n, SMALL_MASS: 1 + n, WHITE_NOISE: 2}[self.kind]

    def with_cutoff(self, radius: float | None) -> "SystemSpec":
        return SystemSpec(self.kind, self.gamma, self.phi, self.params, self.m, self.eps, radius)

    def force(self, x):
        """Potential force ``-Phi'(x)``, cut off when a radius is set."""
        f = -np.asarray(self.phi.derivative(x), dtype=float)
        if self.cutoff_radius is not None:
            f = f * cutoff_theta(self.cutoff_radius, x)
        return f


def full_gle(m, gamma, phi, params, cutoff_radius=None) -> SystemSpec:
    return SystemSpec(FULL, gamma, phi, params, m=m, cutoff_radius=cutoff_radius)


def small_mass_limit(gamma, phi, params, cutoff_radius=None) -> SystemSpec:
    return SystemSpec(SMALL_MASS, gamma, phi, params, cutoff_radius=cutoff_radius)


def scaled_gle(m, eps, gamma, phi, params, cutoff_radius=None) -> SystemSpec:
    return SystemSpec(SCALED, gamma, phi, params, m=m, eps=eps, cutoff_radius=cutoff_radius)


def white_noise_limit(m, gamma, phi, params, cutoff_radius=None) -> SystemSpec:
    return SystemSpec(WHITE_NOISE, gamma, phi, params, m=m, cutoff_radius=cutoff_radius)


def full_drift(spec: SystemSpec, X: np.ndarray) -> np.ndarray:
    """Drift ``(dx, dv, dz_k)`` of the full (or scaled) system at states `X` of shape (B, 2+N)."""
    eps = spec.eps if spec.kind == SCALED else 1.0
    a = np.sqrt(spec.params.c / eps)
    eta = spec.params.lam / eps
    x, v, z = X[:, 0], X[:, 1], X[:, 2:]
    dv = (-spec.gamma * v + spec.force(x) - (z * a).sum(axis=1)) / spec.m
    dz = -eta * z + a * v[:, None]
    return np.column_stack([v, dv, dz])


def small_mass_drift(spec: SystemSpec, U: np.ndarray) -> np.ndarray:
    """Drift ``(du, df_k)`` of the small-mass limit at states `U` of shape (B, 1+N)."""
    p = spec.params
    u, f = U[:, 0], U[:, 1:]
    du = (spec.force(u) - p.c_sum * u - (f * p.sqrt_c).sum(axis=1)) / spec.gamma
    df = -p.lam * f - (p.lam * p.sqrt_c) * u[:, None]
    return np.column_stack([du, df])


@dataclass(frozen=True)
class FreeModes:
    """Auxiliary modes without velocity coupling, driven by the same noise.

    Run next to a full system on a shared grid, ``-sum_k sqrt(c_k) zeta_k``
    is the colored random force of the GLE, separated from the memory drag.
    """

    params: KernelParams
    kind: str = "FreeModes"

    @property
    def dim(self) -> int:
        return self.params.n_modes

    def stepper(self, dt: float):
        ou = OUStep.build(self.params.lam, dt)

        def step(X, dW, xi):
            return ou.decay * X + ou.integrals(dW[:, 1:], xi[:, 1:])[0]
        return step


class Stepper:
    """Batched one-step map of a system for a fixed step ``dt``.

    States are arrays of shape ``(B, spec.dim)``; noise arrays have shape
    ``(B, N + 1)``.
    """

    def __init__(self, spec: SystemSpec, dt: float):
        self.spec, self.dt = spec, dt
        p = spec.params
        if spec.kind in (FULL, SCALED):
            eps = spec.eps if spec.kind == SCALED else 1.0
            self.coupling = np.sqrt(p.c / eps)
            self.ou = OUStep.build(p.lam / eps, dt)
            self._step = self._step_memory
        elif spec.kind == SMALL_MASS:
            self.ou = OUStep.build(p.lam, dt)
            self.source = -p.lam * p.sqrt_c
            self._step = self._step_small_mass
        else:
            self.drag = spec.gamma + float(np.sum((p.c / p.lam)[::-1]))
            self.mode_noise = np.sqrt(2 * p.c / p.lam)
            self._step = self._step_white_noise
        self.noise0 = np.sqrt(2 * spec.gamma)

    def __call__(self, X, dW, xi):
        return self._step(X, dW, xi)

    def _step_memory(self, X, dW, xi):
        s, h, ou = self.spec, self.dt, self.ou
        x, v, z = X[:, 0], X[:, 1], X[:, 2:]
        I, J = ou.integrals(dW[:, 1:], xi[:, 1:])
        src = self.coupling * v[:, None]
        z_int = ou.phi1 * z + ou.phi2 * src + J
        out = np.empty_like(X)
        out[:, 2:] = ou.decay * z + ou.phi1 * src + I
        mem = (z_int * self.coupling).sum(axis=1)
        out[:, 1] = v + ((s.force(x) - s.gamma * v) * h - mem + self.noise0 * dW[:, 0]) / s.m
        out[:, 0] = x + v * h
        return out

    def _step_small_mass(self, X, dW, xi):
        s, h, ou, p = self.spec, self.dt, self.ou, self.spec.params
        u, f = X[:, 0], X[:, 1:]
        I, J = ou.integrals(dW[:, 1:], xi[:, 1:])
        src = self.source * u[:, None]
        f_int = ou.phi1 * f + ou.phi2 * src + J
        out = np.empty_like(X)
        out[:, 1:] = ou.decay * f + ou.phi1 * src + I
        mem = (f_int * p.sqrt_c).sum(axis=1)
        out[:, 0] = u + ((s.force(u) - p.c_sum * u) * h - mem + self.noise0 * dW[:, 0]) / s.gamma
        return out

    def _step_white_noise(self, X, dW, xi):
        s, h = self.spec, self.dt
        u, p = X[:, 0], X[:, 1]
        kick = -(dW[:, 1:] * self.mode_noise).sum(axis=1) + self.noise0 * dW[:, 0]
        out = np.empty_like(X)
        out[:, 0] = u + p * h
        out[:, 1] = p + ((s.force(u) - self.drag * p) * h + kick) / s.m
        return out


def _single_step(state_array, spec, noise_col: NoiseColumn):
    X = np.asarray(state_array, dtype=float)[None, :]
    dW = np.asarray(noise_col.dW, dtype=float)[None, :]
    xi = np.asarray(noise_col.xi, dtype=float)[None, :]
    if dW.shape[1] != spec.params.n_modes + 1:
        raise ConfigError(f"noise column has {dW.shape[1]} entries, expected "
                          f"{spec.params.n_modes + 1}")
    out = Stepper(spec, noise_col.dt)(X, dW, xi)[0]
    if not np.all(np.isfinite(out)):
        raise BlowUpError(0, noise_col.dt)
    return out


def _require(spec, *kinds):
    if spec.kind not in kinds:
        raise ConfigError(f"expected a {' or '.join(kinds)} system, got {spec.kind}")


def step_full(state: PhaseState, spec: SystemSpec, noise_col: NoiseColumn) -> PhaseState:
    """One step of the full Markovian GLE."""
    _require(spec, FULL)
    return PhaseState.from_array(_single_step(state.to_array(), spec, noise_col))


def step_scaled(state: PhaseState, spec: SystemSpec, noise_col: NoiseColumn) -> PhaseState:
    """One step of the system with kernel ``K(t/eps)/eps``; ``eps = 1`` is the full system."""
    _require(spec, SCALED)
    return PhaseState.from_array(_single_step(state.to_array(), spec, noise_col))


def step_small_mass_limit(state: LimitStateZM, spec: SystemSpec,
                          noise_col: NoiseColumn) -> LimitStateZM:
    _require(spec, SMALL_MASS)
    return LimitStateZM.from_array(_single_step(state.to_array(), spec, noise_col))


def step_white_noise_limit(state: PairState, spec: SystemSpec,
                           noise_col: NoiseColumn) -> PairState:
    _require(spec, WHITE_NOISE)
    return PairState.from_array(_single_step(state.to_array(), spec, noise_col))


# -- trajectories -----------------------------------------------------------------

def _state_array(spec: SystemSpec, init) -> np.ndarray:
    expected = {FULL: PhaseState, SCALED: PhaseState, SMALL_MASS: LimitStateZM,
                WHITE_NOISE: PairState}[spec.kind]
    if not isinstance(init, expected):
        raise ConfigError(f"{spec.kind} needs a {expected.__name__} initial state")
    a = init.to_array()
    if a.size != spec.dim:
        raise ConfigError(f"initial state has dimension {a.size}, expected {spec.dim}")
    return a


def n_steps_for(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ConfigError(f"T={T} is not a whole number of steps dt={dt}")
    return n


def simulate(spec: SystemSpec, init, T: float, grid: CoupledNoiseGrid, traj: int = 0) -> Trajectory:
    """Integrate one trajectory on ``[0, T]`` using column `traj` of `grid`.

    Raises :class:`BlowUpError` with the offending step if the state
    becomes non-finite.
    """
    n = n_steps_for(T, grid.dt)
    if n > grid.n_steps:
        raise ConfigError(f"noise grid has {grid.n_steps} steps, {n} needed for T={T}")
    if grid.n_modes != spec.params.n_modes:
        raise ConfigError("noise grid and kernel disagree on the number of modes")
    X0 = _state_array(spec, init)[None, :]
    noise = CoupledNoiseGrid(grid.dt, grid.increments[:n, traj:traj + 1],
                             grid.normals[:n, traj:traj + 1])
    res = integrate([spec], [X0], [noise], n, observers=[lambda X: X])
    if res.abort_step[0][0] >= 0:
        step = int(res.abort_step[0][0])
        raise BlowUpError(step, step * grid.dt)
    times = np.arange(n + 1) * grid.dt
    return Trajectory(times, res.observations[0][:, 0, :], spec.kind)


@dataclass
class BatchResult:
    """Per-system observations ``(n_steps + 1, B, k)``, final states and abort steps (-1: none)."""

    observations: list
    final: list
    abort_step: list


def default_observer(spec: SystemSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Observe position and, where the system has one, velocity."""
    if spec.kind == SMALL_MASS:
        return lambda X: X[:, :1]
    return lambda X: X[:, :2]


def integrate(specs: Sequence[SystemSpec], X0s: Sequence[np.ndarray],
              noise: Iterable[CoupledNoiseGrid], n_steps: int,
              observers: Sequence[Callable] | None = None) -> BatchResult:
    """Advance several systems in lock-step on the same noise.

    `noise` yields consecutive grids whose total length covers `n_steps`.
    Trajectories whose state turns non-finite are flagged in ``abort_step``
    and left as NaN; the others continue.
    """
    specs = list(specs)
    if observers is None:
        observers = [default_observer(s) for s in specs]
    X = [np.array(x0, dtype=float, copy=True) for x0 in X0s]
    batch = X[0].shape[0]
    steppers = {}
    obs = []
    for x, f in zip(X, observers):
        first = np.asarray(f(x))
        buf = np.empty((n_steps + 1,) + first.shape)
        buf[0] = first
        obs.append(buf)
    abort = [np.full(batch, -1, dtype=np.int64) for _ in specs]

    done = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for grid in noise:
            if done >= n_steps:
                break
            for i, spec in enumerate(specs):
                if grid.dt not in steppers.setdefault(i, {}):
                    steppers[i][grid.dt] = (Stepper(spec, grid.dt) if isinstance(spec, SystemSpec)
                                            else spec.stepper(grid.dt))
            take = min(grid.n_steps, n_steps - done)
            for j in range(take):
                dW, xi = grid.increments[j], grid.normals[j]
                n = done + j + 1
                for i, spec in enumerate(specs):
                    X[i] = steppers[i][grid.dt](X[i], dW, xi)
                    bad = ~np.isfinite(X[i]).all(axis=1)
                    if bad.any():
                        fresh = bad & (abort[i] < 0)
                        abort[i][fresh] = n
                        X[i][bad] = np.nan
                    obs[i][n] = observers[i](X[i])
            done += take
    if done < n_steps:
        raise ConfigError(f"noise ran out after {done} of {n_steps} steps")
    return BatchResult(obs, X, abort)


def abort_record(abort_step: int, dt: float) -> AbortRecord | None:
    return None if abort_step < 0 else AbortRecord(int(abort_step), abort_step * dt)


def stationary_init(params: KernelParams, rng: np.random.Generator,
                    x: float = 0.0, v: float = 0.0) -> PhaseState:
    """Full-system state with independent standard normal modes.

    With this law the force ``-sum_k sqrt(c_k) z_k`` is a stationary Gaussian
    process whose autocovariance is the kernel.
    """
    return PhaseState(x, v, rng.standard_normal(params.n_modes))
