"""Phase-space states, norms, potentials and the assumption checks on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .kernel import KernelParams


def _vec(a) -> np.ndarray:
    return np.atleast_1d(np.asarray(a, dtype=float))


@dataclass
class PhaseState:
    """Point ``(x, v, z_1..z_N)`` of the full system."""

    x: float
    v: float
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.x = float(self.x)
        self.v = float(self.v)
        self.z = _vec(self.z)

    def to_array(self) -> np.ndarray:
        return np.concatenate([[self.x, self.v], self.z])

    @classmethod
    def from_array(cls, a) -> "PhaseState":
        a = np.asarray(a, dtype=float)
        return cls(a[0], a[1], a[2:].copy())


@dataclass
class LimitStateZM:
    """Point ``(u, f_1..f_N)`` of the small-mass limit system."""

    u: float
    f: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.u = float(self.u)
        self.f = _vec(self.f)

    def to_array(self) -> np.ndarray:
        return np.concatenate([[self.u], self.f])

    @classmethod
    def from_array(cls, a) -> "LimitStateZM":
        a = np.asarray(a, dtype=float)
        return cls(a[0], a[1:].copy())


@dataclass
class PairState:
    """Position/velocity pair ``(u, p)`` of the white-noise limit system."""

    u: float
    p: float

    def __post_init__(self):
        self.u = float(self.u)
        self.p = float(self.p)

    def to_array(self) -> np.ndarray:
        return np.array([self.u, self.p])

    @classmethod
    def from_array(cls, a) -> "PairState":
        return cls(a[0], a[1])


def _mode_weights(n: int, s: float) -> np.ndarray:
    return np.arange(1, n + 1, dtype=float) ** (-2.0 * s)


def norm_minus_s(state: PhaseState, s: float) -> float:
    """``sqrt(x**2 + v**2 + sum_k k**(-2s) z_k**2)``."""
    w = _mode_weights(state.z.size, s)
    return math.sqrt(state.x ** 2 + state.v ** 2 + float(np.sum(w * state.z ** 2)))


def norm_dot_minus_s(state: LimitStateZM, s: float) -> float:
    """``sqrt(u**2 + sum_k k**(-2s) f_k**2)``."""
    w = _mode_weights(state.f.size, s)
    return math.sqrt(state.u ** 2 + float(np.sum(w * state.f ** 2)))


def shift_initial(x0: PhaseState, params: KernelParams) -> LimitStateZM:
    """Initial condition of the small-mass limit: ``u = x``, ``f_k = z_k - sqrt(c_k) x``."""
    _check_modes(x0.z.size, params)
    return LimitStateZM(x0.x, x0.z - params.sqrt_c * x0.x)


def unshift(u0: LimitStateZM, params: KernelParams, v: float = 0.0) -> PhaseState:
    """Inverse of :func:`shift_initial`; the velocity is not recorded there, so it is supplied."""
    _check_modes(u0.f.size, params)
    return PhaseState(u0.u, v, u0.f + params.sqrt_c * u0.u)


def _check_modes(n: int, params: KernelParams):
    if n != params.n_modes:
        raise ConfigError(f"state has {n} modes but kernel has {params.n_modes}")


# -- potentials -------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """Potential ``value`` and its derivative; both must accept numpy arrays."""

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def check(self, grid=None, rtol: float = 1e-6) -> list[str]:
        """Return a list of invariant violations on `grid` (empty when fine)."""
        if grid is None:
            grid = np.linspace(-5, 5, 201)
        x = np.asarray(grid, dtype=float)
        issues = []
        with np.errstate(over="ignore", invalid="ignore"):
            val = self.value(x)
            if np.any(val < 0):
                issues.append(f"{self.name}: potential is negative on the grid")
            h = 1e-5 * np.maximum(1.0, np.abs(x))
            fd = (self.value(x + h) - self.value(x - h)) / (2 * h)
            d = self.derivative(x)
        scale = np.maximum(1.0, np.abs(d))
        if np.any(np.abs(fd - d) > rtol * scale):
            issues.append(f"{self.name}: derivative disagrees with finite differences")
        return issues


def polynomial(coefficients: Sequence[float], name: str | None = None) -> PotentialSpec:
    """Polynomial potential with coefficients in increasing degree order."""
    coef = np.asarray(coefficients, dtype=float)
    if coef.size == 0:
        coef = np.zeros(1)
    p = np.polynomial.Polynomial(coef)
    dp = p.deriv()
    return PotentialSpec(p, dp, name or f"polynomial{tuple(coef.tolist())}")


def quadratic() -> PotentialSpec:
    return PotentialSpec(lambda x: 0.5 * np.square(x), lambda x: np.asarray(x, dtype=float) * 1.0,
                         "quadratic")


def quartic() -> PotentialSpec:
    return PotentialSpec(lambda x: 0.25 * np.asarray(x, dtype=float) ** 4,
                         lambda x: np.asarray(x, dtype=float) ** 3, "quartic")


def double_well() -> PotentialSpec:
    return PotentialSpec(lambda x: 0.25 * (np.square(x) - 1.0) ** 2,
                         lambda x: np.asarray(x, dtype=float) * (np.square(x) - 1.0),
                         "double_well")


def gaussian_growth() -> PotentialSpec:
    """``exp(x**2)``; satisfies the growth condition but not the dissipativity one."""
    return PotentialSpec(lambda x: np.exp(np.square(x)),
                         lambda x: 2.0 * np.asarray(x, dtype=float) * np.exp(np.square(x)),
                         "gaussian_growth")


def smooth_abs(delta: float = 1.0) -> PotentialSpec:
    """``sqrt(x**2 + delta**2) - delta``, a smooth stand-in for ``|x|``."""
    return PotentialSpec(lambda x: np.sqrt(np.square(x) + delta ** 2) - delta,
                         lambda x: np.asarray(x, dtype=float) / np.sqrt(np.square(x) + delta ** 2),
                         "smooth_abs")


def free() -> PotentialSpec:
    """Zero potential of the force-free (linear) GLE."""
    return PotentialSpec(lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                         lambda x: np.zeros_like(np.asarray(x, dtype=float)), "free")


POTENTIALS = {
    "quadratic": quadratic,
    "quartic": quartic,
    "double_well": double_well,
    "gaussian_growth": gaussian_growth,
    "smooth_abs": smooth_abs,
    "free": free,
}


def potential_by_name(name: str, coefficients: Sequence[float] | None = None) -> PotentialSpec:
    if name == "polynomial":
        if coefficients is None:
            raise ConfigError("polynomial potential needs a coefficient list")
        return polynomial(coefficients)
    try:
        return POTENTIALS[name]()
    except KeyError:
        raise ConfigError(f"unknown potential {name!r}; choose from "
                          f"{sorted(POTENTIALS) + ['polynomial']}") from None


# -- assumption checks --------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    ok: bool
    constant: float | None
    message: str = ""


# a ratio that keeps growing by more than this fraction when the probe
# region is doubled is treated as unbounded
_GROWTH_SLACK = 0.05


def _grid_extends(grid: np.ndarray, lo: float, hi: float):
    if grid.min() > lo or grid.max() < hi:
        raise ConfigError(f"probe grid must span at least [{lo}, {hi}]")


def validate_growth(phi: PotentialSpec, probe_grid) -> AssumptionReport:
    """Empirical constant for ``c (Phi(x) + 1) >= x**2``.

    The grid supremum of ``x**2 / (Phi(x) + 1)`` is compared with the supremum
    over the grid scaled by two; a relative increase above 5% reports failure.
    """
    x = np.asarray(probe_grid, dtype=float)
    _grid_extends(x, -10, 10)

    def sup_ratio(g):
        with np.errstate(over="ignore"):
            return float(np.max(np.square(g) / (phi.value(g) + 1.0)))

    c = sup_ratio(x)
    c_ext = sup_ratio(2.0 * x)
    if c_ext > c * (1 + _GROWTH_SLACK):
        return AssumptionReport(False, None, f"x²/(Φ+1) grows from {c:.4g} to {c_ext:.4g} "
                                "on the extended grid; Assumption 1 fails")
    return AssumptionReport(True, max(c, c_ext))


def validate_dissipativity(phi: PotentialSpec, n: float, probe_grid) -> AssumptionReport:
    """Empirical constant for ``Phi'(x) y <= c (Phi(x) + |y|**n + 1)``.

    `probe_grid` is a pair ``(xs, ys)`` of 1-d axes, or a single axis used for
    both. Unboundedness is detected as in :func:`validate_growth`.
    """
    if isinstance(probe_grid, tuple):
        xs, ys = (np.asarray(g, dtype=float) for g in probe_grid)
    else:
        xs = ys = np.asarray(probe_grid, dtype=float)
    _grid_extends(xs, -10, 10)
    _grid_extends(ys, -10, 10)

    def sup_ratio(gx, gy):
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        with np.errstate(over="ignore", invalid="ignore"):
            r = phi.derivative(X) * Y / (phi.value(X) + np.abs(Y) ** n + 1.0)
        if not np.all(np.isfinite(r)):
            return math.inf
        return max(0.0, float(np.max(r)))

    c = sup_ratio(xs, ys)
    c_ext = sup_ratio(2.0 * xs, 2.0 * ys)
    if not math.isfinite(c) or c_ext > c * (1 + _GROWTH_SLACK) + 1e-12:
        return AssumptionReport(False, None, f"Φ'(x)y/(Φ+|y|^n+1) grows from {c:.4g} to "
                                f"{c_ext:.4g} on the extended grid; Assumption 3 fails")
    return AssumptionReport(True, max(c, c_ext))


# -- cutoff and Lyapunov function -------------------------------------------

def _smooth_step(t):
    """0 for t <= 0, 1 for t >= 1, C-infinity in between (exp(-1/t) construction)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def cutoff_theta(R: float, x):
    """Smooth cutoff equal to 1 on ``|x| <= R`` and 0 on ``|x| >= R + 1``."""
    if not R > 0:
        raise ConfigError(f"cutoff radius must be positive, got {R}")
    ax = np.abs(np.asarray(x, dtype=float))
    out = np.where(ax <= R, 1.0, np.where(ax >= R + 1, 0.0, 1.0 - _smooth_step(ax - R)))
    return float(out) if out.ndim == 0 else out


def lyapunov_zm(U: LimitStateZM, phi: PotentialSpec, gamma: float,
                params: KernelParams, s: float) -> float:
    """``(Phi(u) + (sum c_k) u**2 / 2) / gamma + sum_k k**(-2s) f_k**2 / 2``."""
    _check_modes(U.f.size, params)
    w = _mode_weights(U.f.size, s)
    pot = float(phi.value(np.asarray(U.u)))
    return (pot + params.c_sum * U.u ** 2 / 2) / gamma + 0.5 * float(np.sum(w * U.f ** 2))
