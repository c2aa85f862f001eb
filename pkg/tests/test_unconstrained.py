import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import fsolve

from roundabout_clbf.unconstrained import (UnconstrainedSolveError, beta_from_alpha, sample_horizon,
                                           solve_unconstrained)


def objective(traj, beta):
    return beta * (traj.tf - traj.t0) + traj.energy()


def oracle_a_tf(v0, D, beta, guess):
    """Independent two-variable root solve over (a, tau_f) in local time."""
    def eqs(z):
        a, tau = z
        b = -a * tau
        pos = a * tau ** 3 / 6 + 0.5 * b * tau ** 2 + v0 * tau - D
        ham = beta + 0.5 * a * a * tau * tau + a * b * tau + a * v0
        return [pos, ham]
    sol, info, ier, msg = fsolve(eqs, guess, full_output=True, xtol=1e-14)
    assert ier == 1, msg
    return sol


def test_beta_zero_cruises():
    traj = solve_unconstrained(0.0, 10.0, 60.0, 0.0)
    assert (traj.a, traj.b, traj.c, traj.d) == (0.0, 0.0, 10.0, 0.0)
    assert traj.tf == 6.0


def test_beta_one_matches_root_oracle():
    traj = solve_unconstrained(0.0, 10.0, 60.0, 1.0)
    a, tau = oracle_a_tf(10.0, 60.0, 1.0, [0.5, 5.0])
    assert traj.a == pytest.approx(a, abs=1e-9)
    assert traj.tf == pytest.approx(tau, abs=1e-9)
    assert max(abs(r) for r in traj.residuals(10.0, 1.0)) <= 1e-10


def test_random_instances_residuals_and_speed():
    rng = np.random.default_rng(7)
    worst, elapsed = 0.0, 0.0
    for _ in range(100):
        v0 = rng.uniform(5, 30)
        D = rng.uniform(10, 240)
        beta = rng.uniform(0, 5)
        t0 = rng.uniform(0, 20)
        start = time.perf_counter()
        traj = solve_unconstrained(t0, v0, D, beta)
        elapsed += time.perf_counter() - start
        worst = max(worst, max(abs(r) for r in traj.residuals(v0, beta)))
        assert traj.a * traj.tf + traj.b == pytest.approx(0.0, abs=1e-9)
    assert worst <= 1e-8
    assert elapsed / 100 < 1e-3


def test_eval_boundaries_and_finite_difference():
    traj = solve_unconstrained(3.0, 12.0, 120.0, 8 / 9)
    u0, v0, x0 = traj.eval(3.0)
    assert (v0, x0) == (pytest.approx(12.0), pytest.approx(0.0, abs=1e-12))
    uf, vf, xf = traj.eval(traj.tf)
    assert uf == pytest.approx(0.0, abs=1e-12)
    assert xf == pytest.approx(120.0)
    tm, h = 0.5 * (traj.t0 + traj.tf), 1e-5
    dx = (traj.eval(tm + h)[2] - traj.eval(tm - h)[2]) / (2 * h)
    assert dx == pytest.approx(traj.eval(tm)[1], abs=1e-6)
    with pytest.raises(ValueError):
        traj.eval(traj.tf + 1.0)


def test_energy_matches_quadrature():
    traj = solve_unconstrained(0.0, 8.0, 100.0, 2.0)
    val, _ = quad(lambda t: 0.5 * traj.eval(t)[0] ** 2, traj.t0, traj.tf)
    assert traj.energy() == pytest.approx(val, rel=1e-10)


def test_terminal_time_is_locally_optimal():
    v0, D, beta = 10.0, 90.0, 8 / 9
    traj = solve_unconstrained(0.0, v0, D, beta)
    best = objective(traj, beta)
    for scale in (0.99, 1.01):
        tau = traj.tf * scale
        a = 3 * (v0 * tau - D) / tau ** 3
        energy = (a * tau) ** 2 * tau / 6
        assert beta * tau + energy >= best


def test_control_magnitude_shrinks_linearly():
    traj = solve_unconstrained(0.0, 6.0, 150.0, 2.0)
    ts = np.linspace(traj.t0, traj.tf, 20)
    mags = [abs(traj.eval(t)[0]) for t in ts]
    assert all(a >= b for a, b in zip(mags, mags[1:]))


def test_sample_horizon_reproduces_speed_at_boundaries():
    traj = solve_unconstrained(0.0, 10.0, 60.0, 1.0)
    u = sample_horizon(traj, 30, 0.1)
    v = 10.0 + 0.1 * np.cumsum(u)
    expected = [traj.eval(min(0.1 * (h + 1), traj.tf))[1] for h in range(30)]
    np.testing.assert_allclose(v, expected, atol=1e-12)


@pytest.mark.parametrize("args", [(0.0, 10.0, 0.0, 1.0), (0.0, 10.0, 50.0, -1.0), (0.0, 0.0, 50.0, 0.0)])
def test_bad_arguments(args):
    with pytest.raises(ValueError):
        solve_unconstrained(*args)


def test_unreachable_bracket_is_reported():
    with pytest.raises(UnconstrainedSolveError):
        solve_unconstrained(0.0, 30.0, 50.0, 1e-9, v_min=40.0)


def test_beta_from_alpha():
    assert beta_from_alpha(0.1, 16.0) == pytest.approx(8 / 9)
    with pytest.raises(ValueError):
        beta_from_alpha(1.0, 16.0)
