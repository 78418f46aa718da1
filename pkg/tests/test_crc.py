import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clo.crc import (FrameFeedback, ThresholdState, certificate_series, record_decision,
                     reliability_bounds, update_thresholds)
from clo.errors import ContractViolation


def test_record_decision_examples():
    fb = FrameFeedback(1)
    record_decision(fb, 0, 0.4)
    assert (fb.N[0], fb.Lbar[0]) == (1, 0.4)
    record_decision(fb, 0, 0.2)
    assert fb.N[0] == 2 and fb.Lbar[0] == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ContractViolation):
        record_decision(fb, 0, 1.2)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200))
def test_running_mean_equals_batch_mean(losses):
    fb = FrameFeedback(1)
    for x in losses:
        record_decision(fb, 0, x)
    assert fb.Lbar[0] == pytest.approx(np.mean(losses), abs=1e-12)


def frame(fb, losses):
    for k, ls in enumerate(losses):
        for x in ls:
            record_decision(fb, k, x)


def test_update_examples():
    ts = ThresholdState(theta0=[0.5], gamma=0.5, target=0.15, delay=0)
    fb = FrameFeedback(1)
    frame(fb, [[0.35]])
    update_thresholds(ts, fb)
    assert ts.theta[0] == pytest.approx(0.4)
    update_thresholds(ts, fb)  # empty frame
    assert ts.theta[0] == pytest.approx(0.4)
    for _ in range(20):
        frame(fb, [[0.15]])
        update_thresholds(ts, fb)
    assert ts.theta[0] == pytest.approx(0.4)


def test_delayed_update_uses_the_lagged_frame():
    ts = ThresholdState(theta0=[0.5], gamma=1.0, target=0.1, delay=2)
    fb = FrameFeedback(1)
    losses = [0.3, 0.0, 0.2, 0.1]
    seen = []
    for x in losses:
        frame(fb, [[x]])
        before = ts.theta[0]
        update_thresholds(ts, fb)
        seen.append(ts.theta[0] - before)
    assert seen[0] == 0 and seen[1] == 0
    assert seen[2] == pytest.approx(0.1 - 0.3)
    assert seen[3] == pytest.approx(0.1 - 0.0)


def test_bound_examples():
    lo, up = reliability_bounds(100, 0.5, 0.5, 0.15, 0, 0.0, 1.0)
    assert (up, lo) == (pytest.approx(0.17), pytest.approx(0.13))
    lo5, up5 = reliability_bounds(100, 0.5, 0.5, 0.15, 5, 0.0, 1.0)
    assert (up5, lo5) == (pytest.approx(0.2125), pytest.approx(0.1225))
    assert up5 - up == pytest.approx(5 * 0.85 / 100, abs=1e-12)
    assert lo - lo5 == pytest.approx(5 * 0.15 / 100, abs=1e-12)
    lo, up = reliability_bounds(1e6, 0.5, 0.5, 0.15, 0, 0.0, 1.0)
    assert abs(up - 0.15) < 1e-4 and abs(lo - 0.15) < 1e-4


def test_constant_loss_at_target_is_tight():
    F, K = 50, 2
    N = np.ones((F, K), int)
    L = np.full((F, K), 0.15)
    theta = np.full((F + 1, K), 0.5)
    c = certificate_series(N, L, theta, 0.5, 0.5, 0.15, 0)
    assert c["ok"].all()
    assert np.allclose(c["upper"], 0.15) and np.allclose(c["lower"], 0.15)
    assert np.allclose(c["cum"], 0.15)


def simulate(losses_fn, F=300, gamma=0.5, theta0=0.5, r=0.15, d=0, seed=0):
    """O-CRC on a one-user toy where a frame's loss depends on the current threshold."""
    rng = np.random.default_rng(seed)
    ts = ThresholdState(theta0=[theta0], gamma=gamma, target=r, delay=d)
    fb = FrameFeedback(1)
    for _ in range(F):
        n = rng.integers(0, 4)
        for _ in range(n):
            record_decision(fb, 0, losses_fn(ts.theta[0], rng))
        update_thresholds(ts, fb)
    return np.array(fb.history_N), np.array(fb.history_L), np.array(ts.history)


def noisy_loss(theta, rng):
    return float(np.clip(theta * rng.uniform(0.0, 0.6), 0.0, 1.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0, 3, 10]), st.sampled_from([0.1, 0.5, 1.0]))
def test_certificate_holds_on_every_realization(seed, d, gamma):
    N, L, th = simulate(noisy_loss, d=d, gamma=gamma, seed=seed)
    assert certificate_series(N, L, th, gamma, 0.5, 0.15, d)["ok"].all()


def test_literal_orientation_fails_when_thresholds_fall():
    # thresholds first climb (losses below target), then fall well below their peak;
    # the upper bound must use the smallest threshold seen
    gamma, theta0, r = 0.5, 0.5, 0.15
    ts = ThresholdState(theta0=[theta0], gamma=gamma, target=r, delay=0)
    fb = FrameFeedback(1)
    for f in range(200):
        frame(fb, [[0.0 if f < 100 else 0.5]])
        update_thresholds(ts, fb)
    N, L, th = np.array(fb.history_N), np.array(fb.history_L), np.array(ts.history)
    c = certificate_series(N, L, th, gamma, theta0, r, 0)
    assert c["ok"].all()
    Fa = c["n_active"][:, 0]
    M = th.max() - gamma
    literal_upper = r + (theta0 - M + gamma) / (gamma * Fa)
    assert c["cum"][-1, 0] > literal_upper[-1] + 0.1
