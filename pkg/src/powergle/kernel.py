"""Power-law memory kernel written as a sum of exponentials.

The kernel is ``K(t) = sum_k c_k exp(-lambda_k t)`` with
``c_k = k**-(1 + alpha*beta)`` and ``lambda_k = k**-beta``, truncated to the
first ``n_modes`` terms.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import DivergenceError, DomainError

DEFAULT_TAIL_TOL = 1e-8
MAX_DEFAULT_MODES = 10_000


def default_n_modes(alpha: float, beta: float, tol: float = DEFAULT_TAIL_TOL,
                    cap: int = MAX_DEFAULT_MODES) -> int:
    """Smallest N with ``N**-(alpha*beta) / (alpha*beta) < tol``, capped at `cap`."""
    ab = alpha * beta
    if ab <= 1:
        raise DivergenceError(f"alpha*beta = {ab:g} <= 1: sum of c_k diverges, "
                              "no finite truncation meets the tail tolerance")
    n = max(1, math.floor((ab * tol) ** (-1.0 / ab)))
    while n ** -ab / ab >= tol:
        n += 1
    while n > 1 and (n - 1) ** -ab / ab < tol:
        n -= 1
    return min(n, cap)


@dataclass(frozen=True)
class KernelParams:
    """Tail exponent `alpha`, auxiliary exponent `beta` and truncation `n_modes`.

    ``n_modes=None`` picks the default truncation (tail of the coefficient
    sum below 1e-8, at most 10**4 modes). ``n_modes=0`` gives the empty
    kernel, which is handy for memoryless reference runs.
    """

    alpha: float
    beta: float
    n_modes: int | None = field(default=None)

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError(f"alpha and beta must be positive, got "
                              f"alpha={self.alpha}, beta={self.beta}")
        if self.n_modes is None:
            object.__setattr__(self, "n_modes", default_n_modes(self.alpha, self.beta))
        elif int(self.n_modes) != self.n_modes or self.n_modes < 0:
            raise DomainError(f"n_modes must be a nonnegative integer, got {self.n_modes}")
        object.__setattr__(self, "n_modes", int(self.n_modes))

    @property
    def ab(self) -> float:
        return self.alpha * self.beta

    @cached_property
    def c(self) -> np.ndarray:
        """Weights c_1..c_N."""
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return k ** -(1.0 + self.ab)

    @cached_property
    def lam(self) -> np.ndarray:
        """Rates lambda_1..lambda_N."""
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return k ** -self.beta

    @cached_property
    def sqrt_c(self) -> np.ndarray:
        return np.sqrt(self.c)

    @cached_property
    def c_sum(self) -> float:
        """Truncated ``sum c_k``, i.e. K(0)."""
        return float(np.sum(self.c[::-1]))

    def with_modes(self, n_modes: int) -> "KernelParams":
        return KernelParams(self.alpha, self.beta, n_modes)


def mode_coefficients(params: KernelParams, k: int) -> tuple[float, float]:
    """Return ``(c_k, lambda_k)`` for mode ``k >= 1``."""
    if int(k) != k or k < 1:
        raise DomainError(f"mode index must be a positive integer, got {k}")
    with np.errstate(over="raise", under="ignore"):
        c = float(np.power(float(k), -(1.0 + params.ab)))
        lam = float(np.power(float(k), -params.beta))
    if not (c > 0 and lam > 0 and math.isfinite(c) and math.isfinite(lam)):
        raise DomainError(f"coefficients of mode {k} under/overflow double precision")
    return c, lam


def kernel_eval(params: KernelParams, t):
    """Truncated kernel ``sum_{k<=N} c_k exp(-lambda_k t)``; `t` may be an array."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(np.isnan(t_arr)):
        raise DomainError("kernel is defined for t >= 0 only")
    terms = params.c * np.exp(-np.multiply.outer(t_arr, params.lam))
    # smallest terms first
    out = np.sum(terms[..., ::-1], axis=-1)
    return float(out) if out.ndim == 0 else out


def kernel_scaled_eval(params: KernelParams, eps: float, t):
    """White-noise scaling ``K_eps(t) = K(t / eps) / eps``."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    return kernel_eval(params, np.asarray(t, dtype=float) / eps) / eps


def tail_bound(params: KernelParams) -> float:
    """Upper bound on ``sum_{k>N} c_k`` from the integral comparison."""
    ab = params.ab
    if ab <= 1:
        raise DivergenceError(f"alpha*beta = {ab:g} <= 1: the tail sum diverges")
    n = params.n_modes
    if n == 0:
        return 1.0 + 1.0 / ab
    return n ** -ab / ab


class EffectiveDrag(NamedTuple):
    value: float
    tail_bound: float


def effective_drag(gamma: float, params: KernelParams) -> EffectiveDrag:
    """Drag of the white-noise limit, ``gamma + sum_k c_k / lambda_k``.

    The truncated sum is returned together with a bound on the neglected
    tail ``sum_{k>N} k**-(1 + (alpha-1)*beta)``.
    """
    if gamma < 0:
        raise DomainError(f"gamma must be nonnegative, got {gamma}")
    r = (params.alpha - 1.0) * params.beta
    if r <= 1:
        raise DivergenceError(f"(alpha-1)*beta = {r:g} <= 1: sum c_k/lambda_k diverges")
    ratio = (params.c / params.lam)[::-1]
    n = params.n_modes
    tail = n ** -r / r if n > 0 else 1.0 + 1.0 / r
    return EffectiveDrag(gamma + float(np.sum(ratio)), tail)


class Regime(str, enum.Enum):
    D = "D"
    SD = "SD"
    C = "C"
    INVALID = "Invalid"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    assumption4: bool
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.regime is not Regime.INVALID


def validate_regime(alpha: float, beta: float, s: float) -> RegimeReport:
    """Classify ``(alpha, beta, s)`` into the diffusive, subdiffusive or critical regime.

    Boundary ties count as violations because every inequality is strict.
    The report also carries whether ``alpha > 2`` and ``(alpha-2)*beta > 1``.
    """
    assumption4 = alpha > 2 and (alpha - 2) * beta > 1
    bad: list[str] = []
    if not alpha > 0:
        bad.append("α>0 violated")
    if not beta > 0:
        bad.append("β>0 violated")
    if bad:
        return RegimeReport(Regime.INVALID, assumption4, tuple(bad))

    two_s = 2 * s
    if alpha > 1:
        regime, r = Regime.D, (alpha - 1) * beta
        if not beta > 1 / (alpha - 1):
            bad.append("β>1/(α−1) violated")
        if not two_s < r:
            bad.append("2s<(α−1)β violated")
    elif alpha < 1:
        regime, r = Regime.SD, alpha * beta
        if not beta > 1 / alpha:
            bad.append("β>1/α violated")
        if not two_s < r:
            bad.append("2s<αβ violated")
    else:
        regime = Regime.C
        if not beta > 1:
            bad.append("β>1 violated")
        if not two_s < beta:
            bad.append("2s<β violated")
    if not two_s > 1:
        bad.append("2s>1 violated")
    if bad:
        return RegimeReport(Regime.INVALID, assumption4, tuple(bad))
    return RegimeReport(regime, assumption4)


def kernel_table(params: KernelParams, t_grid) -> np.ndarray:
    """Rows ``(t, K(t), t**alpha * K(t))``."""
    t = np.asarray(t_grid, dtype=float)
    k = kernel_eval(params, t)
    return np.column_stack([t, k, t ** params.alpha * k])
