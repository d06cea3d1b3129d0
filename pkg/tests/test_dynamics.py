import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from powergle.analysis import first_exit_steps
from powergle.dynamics import (FULL, SCALED, CoupledNoiseGrid, FreeModes, NoiseColumn, OUStep,
                               Stepper, _e2, _resid, coarsen, full_drift, full_gle, integrate,
                               paired_moments, scaled_gle, simulate, small_mass_drift,
                               small_mass_limit, step_full, step_scaled, step_small_mass_limit,
                               step_white_noise_limit, white_noise_limit)
from powergle.errors import BlowUpError, ConfigError
from powergle.kernel import KernelParams, effective_drag
from powergle.model import (LimitStateZM, PairState, PhaseState, free, gaussian_growth,
                            polynomial, quadratic, quartic, shift_initial)

P2 = KernelParams(2, 2, 5)


def gaussian_grid(seed, dt, n_steps, n_modes, n_traj=1):
    z = np.random.default_rng(seed).standard_normal((n_steps, n_traj, n_modes + 1, 2))
    return CoupledNoiseGrid.from_normals(dt, z)


# -- exact OU constants ---------------------------------------------------------

def test_series_branches_match_high_precision():
    import mpmath
    mpmath.mp.dps = 40
    for y in (1e-6, 1e-3, 9.99e-3, 1.001e-2, 1.99e-2, 2.01e-2, 0.3, 5.0):
        Y = mpmath.mpf(y)
        e1 = (1 - mpmath.exp(-Y)) / Y
        e2 = (Y - 1 + mpmath.exp(-Y)) / Y ** 2
        res = (1 - mpmath.exp(-2 * Y)) - 2 * Y * e1 ** 2
        assert float(_e2(y)) == pytest.approx(float(e2), rel=1e-12)
        assert float(_resid(y)) == pytest.approx(float(res), rel=1e-7)


@pytest.mark.parametrize("eta", [1e-9, 1e-3, 0.1, 1.0, 10.0, 1e4])
def test_paired_integral_sampler_moments(eta):
    h, n = 0.01, 200_000
    g = np.random.default_rng(int(eta * 1e3) % 2**32)
    dW = g.standard_normal(n) * math.sqrt(h)
    I, J = OUStep.build(eta, h).integrals(dW, g.standard_normal(n))
    var_w, var_i, cov = paired_moments(eta, h)
    se_i = np.std(I ** 2, ddof=1) / math.sqrt(n)
    se_c = np.std(dW * I, ddof=1) / math.sqrt(n)
    assert abs(np.mean(I ** 2) - var_i) < 4 * se_i + 1e-15
    assert abs(np.mean(dW * I) - cov) < 4 * se_c + 1e-15
    # J is the time integral of the noise part: (sqrt(2 eta) dW - I) / eta
    ou = OUStep.build(eta, h)
    assert np.allclose(J, (math.sqrt(2 * eta) * dW - I) / eta, atol=1e-12 * max(1, 1 / eta))
    assert np.all(np.isfinite(I)) and np.all(np.isfinite(J)) and ou.i_xi >= 0


def test_coarsen_composes_exact_ou():
    p = KernelParams(2, 2, 4)
    fine = gaussian_grid(1, 0.01, 64, 4, n_traj=3)
    coarse = coarsen(fine, p.lam)
    assert coarse.dt == 0.02 and coarse.n_steps == 32
    np.testing.assert_allclose(coarse.increments, fine.increments[0::2] + fine.increments[1::2])
    z0 = np.random.default_rng(2).standard_normal((3, 4))
    fs, cs = FreeModes(p).stepper(0.01), FreeModes(p).stepper(0.02)
    zf, zc = z0.copy(), z0.copy()
    for n in range(64):
        zf = fs(zf, fine.increments[n], fine.normals[n])
    for n in range(32):
        zc = cs(zc, coarse.increments[n], coarse.normals[n])
    np.testing.assert_allclose(zc, zf, rtol=1e-10, atol=1e-12)
    with pytest.raises(ConfigError):
        coarsen(gaussian_grid(0, 0.01, 3, 4), p.lam)


# -- full system ---------------------------------------------------------------------

def zero_col(dt, n):
    return NoiseColumn.zero(dt, n)


@given(st.floats(-50, 50))
def test_full_rest_state_is_fixed(x):
    spec = full_gle(1.0, 1.0, free(), P2)
    out = step_full(PhaseState(x, 0, np.zeros(5)), spec, zero_col(0.01, 5))
    assert out.x == x and out.v == 0 and np.all(out.z == 0)


def test_full_pure_drag_one_step():
    spec = full_gle(1.0, 1.0, free(), KernelParams(2, 2, 0))
    for dt in (1e-2, 1e-3):
        v = step_full(PhaseState(0, 1, []), spec, zero_col(dt, 0)).v
        assert abs(v - math.exp(-dt)) <= dt ** 2


def _linear_oracle(p, m, gamma, X0, T):
    c, lam = p.c[0], p.lam[0]
    A = np.array([[0, 1, 0],
                  [-1 / m, -gamma / m, -math.sqrt(c) / m],
                  [0, math.sqrt(c), -lam]])
    return expm(A * T) @ X0


def test_full_single_mode_against_linear_oracle():
    p = KernelParams(2, 2, 1)
    spec = full_gle(1.0, 1.0, quadratic(), p)
    X0 = np.array([1.0, 0.5, -0.3])
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        n = int(round(0.1 / dt))
        X = PhaseState.from_array(X0)
        for _ in range(n):
            X = step_full(X, spec, zero_col(dt, 1))
        errs.append(np.max(np.abs(X.to_array() - _linear_oracle(p, 1.0, 1.0, X0, 0.1))))
    assert errs[0] < 10 * 1e-2  # O(dt)
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(1.7 < r < 2.3 for r in ratios)  # first order


def test_full_ten_steps_within_order_dt():
    p = KernelParams(2, 2, 1)
    spec = full_gle(2.0, 0.5, quadratic(), p)
    X0 = np.array([0.2, -1.0, 0.7])
    dt = 1e-3
    X = PhaseState.from_array(X0)
    for _ in range(10):
        X = step_full(X, spec, zero_col(dt, 1))
    ref = _linear_oracle(p, 2.0, 0.5, X0, 10 * dt)
    assert np.max(np.abs(X.to_array() - ref)) < 10 * dt * dt * 10


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_full_blow_up_raises():
    spec = full_gle(1.0, 1.0, quartic(), P2)
    with pytest.raises(BlowUpError):
        step_full(PhaseState(1e200, 0, np.zeros(5)), spec, zero_col(0.01, 5))


def test_step_requires_matching_kind_and_noise():
    with pytest.raises(ConfigError):
        step_full(PhaseState(0, 0, np.zeros(5)), scaled_gle(1, 1, 1, free(), P2), zero_col(0.1, 5))
    with pytest.raises(ConfigError):
        step_full(PhaseState(0, 0, np.zeros(5)), full_gle(1, 1, free(), P2), zero_col(0.1, 3))


def test_spec_validation():
    with pytest.raises(ConfigError):
        full_gle(0.0, 1.0, free(), P2)
    with pytest.raises(ConfigError):
        full_gle(1.0, 0.0, free(), P2)
    with pytest.raises(ConfigError):
        scaled_gle(1.0, 0.0, 1.0, free(), P2)
    with pytest.raises(ConfigError):
        white_noise_limit(1.0, 1.0, free(), KernelParams(1.5, 2, 5))


# -- small-mass limit -------------------------------------------------------------------

def test_small_mass_rest_state():
    spec = small_mass_limit(1.0, free(), P2)
    out = step_small_mass_limit(LimitStateZM(0, np.zeros(5)), spec, zero_col(0.01, 5))
    assert out.u == 0 and np.all(out.f == 0)


def test_small_mass_relaxation_one_step():
    spec = small_mass_limit(1.0, quadratic(), KernelParams(2, 2, 0))
    for dt in (1e-2, 1e-3):
        u = step_small_mass_limit(LimitStateZM(2.0, []), spec, zero_col(dt, 0)).u
        assert abs(u - 2 * math.exp(-dt)) <= 2 * dt ** 2


@given(st.floats(-5, 5), st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.floats(0.3, 3))
def test_small_mass_drift_is_shifted_full_drift(x, z, gamma):
    # eliminate v from the full drift at zero inertia, then shift z -> f = z - sqrt(c) x
    phi = polynomial([0, 0.3, 1, 0, 0.25])
    full = full_gle(1.0, gamma, phi, P2)
    z = np.asarray(z)
    v_star = (float(full.force(x)) - float(np.sum(P2.sqrt_c * z))) / gamma
    d = full_drift(full, np.array([[x, v_star, *z]]))[0]
    assert d[1] == pytest.approx(0, abs=1e-12)
    U = shift_initial(PhaseState(x, v_star, z), P2).to_array()
    lim = small_mass_drift(small_mass_limit(gamma, phi, P2), U[None, :])[0]
    assert lim[0] == pytest.approx(d[0], rel=1e-10, abs=1e-12)
    np.testing.assert_allclose(lim[1:], d[2:] - P2.sqrt_c * d[0], rtol=1e-10, atol=1e-12)


# -- scaled system -------------------------------------------------------------------

def test_scaled_at_unit_eps_is_bitwise_full():
    p = KernelParams(2, 2, 8)
    g = np.random.default_rng(4)
    X = PhaseState(0.3, -0.2, g.standard_normal(8))
    for _ in range(20):
        col = NoiseColumn(0.01, g.standard_normal(9) * 0.1, g.standard_normal(9))
        a = step_full(X, full_gle(1.0, 1.0, quartic(), p), col)
        b = step_scaled(X, scaled_gle(1.0, 1.0, 1.0, quartic(), p), col)
        assert np.array_equal(a.to_array(), b.to_array())
        X = a


@pytest.mark.parametrize("eps", [1.0, 0.1, 1e-3])
def test_scaled_pure_decay(eps):
    p = KernelParams(2, 2, 3)
    spec = scaled_gle(1.0, eps, 1.0, free(), p)
    out = step_scaled(PhaseState(0, 0, [1.0, 0, 0]), spec, zero_col(0.01, 3))
    assert out.z[0] == pytest.approx(math.exp(-p.lam[0] * 0.01 / eps), rel=1e-14)


def test_scaled_approaches_white_noise_step():
    p = KernelParams(3, 2, 6)
    g = np.random.default_rng(5)
    X = g.standard_normal((4, 8))
    dW, xi = g.standard_normal((4, 7)) * 0.1, g.standard_normal((4, 7))
    wn = Stepper(white_noise_limit(1.0, 1.0, quartic(), p), 0.01)(X[:, :2], dW, xi)
    gaps = []
    for eps in (1e-4, 1e-6, 1e-8):
        # zero modes give the white-noise initial condition
        X0 = X.copy()
        X0[:, 2:] = 0
        sc = Stepper(scaled_gle(1.0, eps, 1.0, quartic(), p), 0.01)(X0, dW, xi)
        gaps.append(np.max(np.abs(sc[:, :2] - wn)))
    # the remaining in-step mode fluctuation is of size sqrt(c eps) / lambda
    ratios = [a / b for a, b in zip(gaps, gaps[1:])]
    assert all(8 < r < 12.5 for r in ratios) and gaps[-1] < 1e-3


# -- white-noise limit ------------------------------------------------------------------

def test_white_noise_rest_state():
    spec = white_noise_limit(1.0, 1.0, free(), P2)
    out = step_white_noise_limit(PairState(3.0, 0), spec, zero_col(0.01, 5))
    assert (out.u, out.p) == (3.0, 0.0)


def test_white_noise_effective_decay():
    p = KernelParams(2, 2, 10_000)
    spec = white_noise_limit(1.0, 1.0, free(), p)
    g_eff = effective_drag(1.0, p).value
    assert g_eff == pytest.approx(2.2020569, abs=1e-6)
    for dt in (1e-2, 1e-3):
        out = step_white_noise_limit(PairState(0, 1), spec, zero_col(dt, p.n_modes))
        assert abs(out.p - math.exp(-g_eff * dt)) <= g_eff ** 2 * dt ** 2


def test_white_noise_kick_variance():
    p = KernelParams(3, 2, 6)
    spec = white_noise_limit(1.0, 1.0, free(), p)
    dt, n = 0.01, 100_000
    grid = gaussian_grid(6, dt, 1, 6, n_traj=n)
    out = Stepper(spec, dt)(np.zeros((n, 2)), grid.increments[0], grid.normals[0])
    target = (2 * 1.0 + 2 * np.sum(p.c / p.lam)) * dt
    se = np.std(out[:, 1] ** 2, ddof=1) / math.sqrt(n)
    assert abs(np.mean(out[:, 1] ** 2) - target) < 3 * se


# -- trajectories ---------------------------------------------------------------

def test_simulate_zero_horizon():
    spec = full_gle(1.0, 1.0, quadratic(), P2)
    init = PhaseState(1, 2, np.arange(5.0))
    tr = simulate(spec, init, 0.0, CoupledNoiseGrid.zeros(0.1, 0, 5))
    assert len(tr) == 1 and np.array_equal(tr.states[0], init.to_array())


def test_simulate_deterministic():
    spec = full_gle(1.0, 1.0, quartic(), P2)
    init = PhaseState(1, 0, np.zeros(5))
    grid = gaussian_grid(7, 0.01, 100, 5)
    a = simulate(spec, init, 1.0, grid)
    b = simulate(spec, init, 1.0, grid)
    assert np.array_equal(a.states, b.states) and len(a) == 101


def test_simulate_rejects_wrong_init_and_short_grid():
    spec = full_gle(1.0, 1.0, quartic(), P2)
    with pytest.raises(ConfigError):
        simulate(spec, LimitStateZM(0, np.zeros(5)), 0.1, gaussian_grid(0, 0.01, 10, 5))
    with pytest.raises(ConfigError):
        simulate(spec, PhaseState(0, 0, np.zeros(5)), 1.0, gaussian_grid(0, 0.01, 10, 5))


def test_simulate_blow_up():
    spec = full_gle(1.0, 1.0, gaussian_growth(), KernelParams(2, 2, 1))
    with pytest.raises(BlowUpError) as info:
        simulate(spec, PhaseState(5.0, 0, [0.0]), 1.0, CoupledNoiseGrid.zeros(0.1, 10, 1))
    assert info.value.step >= 1


def test_integrate_flags_only_exploding_rows():
    p = KernelParams(2, 2, 1)
    spec = full_gle(1.0, 1.0, gaussian_growth(), p)
    X0 = np.array([[0.1, 0, 0], [5.0, 0, 0]])
    res = integrate([spec], [X0], [CoupledNoiseGrid.zeros(0.1, 10, 1, n_traj=2)], 10)
    assert res.abort_step[0][0] == -1 and res.abort_step[0][1] >= 1
    assert np.all(np.isfinite(res.final[0][0])) and np.all(np.isnan(res.final[0][1]))


def test_integrate_needs_enough_noise():
    spec = full_gle(1.0, 1.0, quadratic(), P2)
    with pytest.raises(ConfigError):
        integrate([spec], [np.zeros((1, 7))], [CoupledNoiseGrid.zeros(0.1, 3, 5)], 5)


@pytest.mark.parametrize("kind", ["full", "small"])
def test_cutoff_agrees_before_exit(kind):
    p = KernelParams(2, 2, 6)
    R = 1.5
    phi = quartic()
    if kind == "full":
        base, X0 = full_gle(0.5, 1.0, phi, p), np.zeros((50, 8))
    else:
        base, X0 = small_mass_limit(1.0, phi, p), np.zeros((50, 7))
    X0[:, 0] = np.linspace(-1, 1, 50)
    grid = gaussian_grid(8, 0.01, 300, 6, n_traj=50)
    res = integrate([base, base.with_cutoff(R)], [X0, X0], [grid], 300,
                    observers=[lambda X: X[:, 0], lambda X: X[:, 0]])
    a, b = res.observations
    exits = first_exit_steps(a, R)
    assert (exits >= 0).any()
    for j, e in enumerate(exits):
        stop = e if e >= 0 else a.shape[0]
        assert np.max(np.abs(a[:stop, j] - b[:stop, j]), initial=0) <= 1e-12
