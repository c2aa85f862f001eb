import numpy as np
import pytest

from roundabout_clbf.dynamics import AffineRollout, Limits, VehicleState, rollout
from roundabout_clbf.safety import (ClassKConfig, ClbfParams, b3_value, b4_value, cbf_merge, choose_pq,
                                    clbf_merge, merge_bbar, odd_pow, p_interval, row_merge_cbf,
                                    row_merge_clbf, row_rear_end, row_vlimits, t_conv, valid_exponent)

LIM = Limits()
L = 60.0


def one_step(x, v):
    return AffineRollout(VehicleState(x, v), 1, 0.1)


def upper_bound(rows, i=0):
    """For a single-control row a*u >= b with a < 0, the implied ceiling on u."""
    a, b, _ = rows.row(i)
    assert a[0] < 0
    return b / a[0]


def test_speed_rows_at_the_limits():
    rows = row_vlimits(one_step(0.0, LIM.v_max), LIM, ClassKConfig())
    assert upper_bound(rows, 0) == pytest.approx(0.0)
    rows = row_vlimits(one_step(0.0, LIM.v_min), LIM, ClassKConfig())
    a, b, tag = rows.row(1)
    assert tag == "vmin[1]" and b / a[0] == pytest.approx(0.0)


def test_speed_ceiling_slack_mid_range():
    rows = row_vlimits(one_step(0.0, 20.0), LIM, ClassKConfig())
    assert upper_bound(rows, 0) == pytest.approx(10.0)


def test_speed_rows_use_predicted_speed_later_in_horizon():
    pred = AffineRollout(VehicleState(0.0, 29.8), 3, 0.1)
    rows = row_vlimits(pred, LIM, ClassKConfig())
    u = np.array([2.0, 0.0, 0.0])
    _, v_start = pred.evaluate_start(u)
    lhs = rows.A @ u - rows.b
    np.testing.assert_allclose(lhs[:3], -u + (LIM.v_max - v_start), atol=1e-12)


def test_rear_end_continuous_form_examples():
    lim = Limits(phi=1.8)
    x, v = 0.0, 10.0
    xp = x + lim.phi * v  # b3 = 0
    rows = row_rear_end(one_step(x, v), [xp], [v], lim, 1.0, sampled=False)
    assert upper_bound(rows) == pytest.approx(0.0)
    rows = row_rear_end(one_step(x, v), [xp], [v + 2.0], lim, 1.0, sampled=False)
    assert upper_bound(rows) == pytest.approx(2.0 / 1.8)
    rows = row_rear_end(one_step(x, v), [xp + 200.0], [v], lim, 1.0, sampled=False)
    assert upper_bound(rows) > lim.u_max


def test_sampled_rear_end_row_is_a_discrete_decay_condition():
    rng = np.random.default_rng(0)
    Td, g = 0.1, 1.0
    for _ in range(20):
        H = 6
        s = VehicleState(rng.uniform(0, 30), rng.uniform(5, 25))
        lead = VehicleState(s.x + rng.uniform(20, 60), rng.uniform(5, 25))
        up = rng.uniform(-4, 4, size=H)
        xl, vl = rollout(lead, up, Td)
        xp, vp = np.concatenate([[lead.x], xl]), np.concatenate([[lead.v], vl])
        pred = AffineRollout(s, H, Td)
        rows = row_rear_end(pred, xp, vp, LIM, g)
        u = rng.uniform(-4, 4, size=H)
        xe, ve = rollout(s, u, Td)
        xe, ve = np.concatenate([[s.x], xe]), np.concatenate([[s.v], ve])
        b3 = xp - xe - LIM.phi * ve - LIM.delta
        lhs = (rows.A @ u - rows.b) * Td
        np.testing.assert_allclose(lhs, b3[1:] - (1 - g * Td) * b3[:-1], atol=1e-9)


def test_sampled_rear_end_needs_full_leader_track():
    with pytest.raises(ValueError):
        row_rear_end(AffineRollout(VehicleState(0, 10), 3, 0.1), np.zeros(3), np.zeros(3), LIM, 1.0)


def test_merge_barrier_reduces_to_merge_condition_at_the_mp():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, v = rng.uniform(0, L), rng.uniform(5, 30)
        # partner at the MP: b4 >= 0 is exactly x_m - x >= phi v + delta
        assert b4_value(x, v, L, L, LIM) == pytest.approx((L - x) - (LIM.phi * v + LIM.delta))


def test_merge_barrier_degenerate_at_segment_start():
    assert b4_value(12.0, 10.0, 0.0, L, LIM) == pytest.approx(-12.0 - LIM.delta)


def test_merge_row_demands_braking_when_unsafe():
    rows = row_merge_cbf(one_step(30.0, 10.0), [30.0], [10.0], L, LIM, 1.0)
    assert b4_value(30.0, 10.0, 30.0, L, LIM) < 0
    assert upper_bound(rows) < 0


def test_merge_row_matches_pointwise_form():
    pred = one_step(10.0, 12.0)
    rows = row_merge_cbf(pred, [35.0], [11.0], L, LIM, 0.7)
    for u in (-3.0, 0.0, 2.5):
        assert rows.A[0, 0] * u - rows.b[0] == pytest.approx(cbf_merge(10.0, 12.0, u, 35.0, 11.0, L, LIM, 0.7))


def test_clbf_q_one_equals_cbf():
    pred = AffineRollout(VehicleState(10.0, 12.0), 4, 0.1)
    xm, vm = np.linspace(30, 35, 5), np.full(5, 12.0)
    a = row_merge_clbf(pred, xm, vm, L, LIM, ClbfParams(2.0, 1.0))
    b = row_merge_cbf(pred, xm, vm, L, LIM, 2.0)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.b, b.b)
    assert a.tags[0].startswith("clbf")


def test_clbf_odd_root_constant():
    pred = one_step(10.0, 12.0)
    params = ClbfParams(1.0, 1.0 / 3.0)
    with_b = row_merge_clbf(pred, [30.0], [12.0], L, LIM, params, nominal_b4=[-8.0])
    zero_b = row_merge_clbf(pred, [30.0], [12.0], L, LIM, params, nominal_b4=[0.0])
    # moving the constant p*b^q = -2 to the right-hand side raises the bound by 2
    assert with_b.b[0] - zero_b.b[0] == pytest.approx(2.0)
    assert clbf_merge(10, 12, 0.0, 30, 12, L, LIM, params, -8.0) == pytest.approx(
        clbf_merge(10, 12, 0.0, 30, 12, L, LIM, params, 0.0) - 2.0)
    with pytest.raises(ValueError):
        row_merge_clbf(pred, [30.0], [12.0], L, LIM, params)


def test_t_conv_example_and_integration():
    assert t_conv(-8.0, 2.0, 1.0 / 3.0) == pytest.approx(3.0)
    # forward Euler; each step moves b up, so the loop ends at the first crossing
    b, t, dt = -8.0, 0.0, 1e-5
    while b < 0:
        b += dt * -2.0 * odd_pow(b, 1 / 3)
        t += dt
    assert t == pytest.approx(3.0, abs=1e-3)


def test_t_conv_scaling_and_continuity():
    assert t_conv(-8.0, 4.0, 1 / 3) == pytest.approx(0.5 * t_conv(-8.0, 2.0, 1 / 3))
    assert t_conv(-1e-12, 1.0, 1 / 3) < 1e-7
    for bad in ((-1.0, 0.0, 1 / 3), (-1.0, 1.0, 0.5), (-1.0, 1.0, 1.0), (1.0, 1.0, 1 / 3)):
        with pytest.raises(ValueError):
            t_conv(*bad)


def test_odd_pow_real_and_continuous():
    ws = np.linspace(-1e-3, 1e-3, 101)
    vals = odd_pow(ws, 1 / 3)
    assert np.all(np.isfinite(vals))
    assert np.all(np.diff(vals) >= 0)
    assert odd_pow(-27.0, 1 / 3) == pytest.approx(-3.0)


def test_valid_exponent():
    assert valid_exponent(1.0) and valid_exponent(1 / 3) and valid_exponent(1 / 5)
    assert not valid_exponent(0.5) and not valid_exponent(0.0)
    with pytest.raises(ValueError):
        ClbfParams(1.0, 0.5)


def test_choose_pq_safe_branch():
    assert choose_pq(3.0, -1.0, 0.0, 5.0) == ClbfParams(1.0, 1.0, 5.0)


def test_choose_pq_rejects_a_diverging_state():
    assert choose_pq(-1.0, -0.5, -10.0, 5.0) is None


def test_choose_pq_interval_example():
    lower, upper = p_interval(-8.0, -12.0, 10.0)
    assert lower == pytest.approx(0.6)
    assert upper == pytest.approx(6.0)
    params = choose_pq(-8.0, 1.0, -12.0, 10.0)
    assert params.q == pytest.approx(1 / 3)
    assert params.p == pytest.approx(3.3)


def test_choose_pq_empty_interval():
    # |bbar| too small for the required convergence rate
    assert choose_pq(-8.0, 1.0, -0.5, 10.0) is None
    # a positive bbar makes the upper end negative
    assert choose_pq(-8.0, 1.0, 3.0, 10.0) is None


def test_longer_t_m_keeps_a_nonempty_interval_nonempty():
    for b0 in (-2.0, -5.0, -8.0):
        for bbar in (-2.0, -6.0, -12.0):
            previous = None
            for t_m in (2.0, 5.0, 10.0, 20.0):
                lo, hi = p_interval(b0, bbar, t_m)
                if previous:
                    assert lo <= hi
                previous = previous or lo <= hi


def test_bbar_is_the_rate_under_full_braking():
    from roundabout_clbf.safety import b4_rate
    assert merge_bbar(8.0, 25.0, 9.0, L, LIM) == pytest.approx(-b4_rate(8.0, LIM.u_min, 25.0, 9.0, L, LIM))


def test_b3_value():
    assert b3_value(0.0, 10.0, 30.0, Limits(delta=1.0)) == pytest.approx(30.0 - 18.0 - 1.0)


def test_class_k_gains_positive():
    with pytest.raises(ValueError):
        ClassKConfig(gamma3=0.0)
