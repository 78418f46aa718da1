import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clo.channel import (Infeasible, capacity, dbm_per_hz_to_w, link_budget, link_energy,
                         min_power_for_slot, sample_channels)
from clo.network import build_network

N0 = 10 ** -20.4
B = 20e6
W = 768 * 1024 * 8


def one_link(pl=90.0):
    return build_network({"nodes": [{"id": "ED1", "role": "ed"}, {"id": "S1", "role": "server"}],
                          "edges": [{"src": "ED1", "dst": "S1", "path_loss_db": pl}]})


def test_noise_density_conversion():
    assert dbm_per_hz_to_w(-174) == pytest.approx(N0, rel=1e-12)


def test_mean_gain_matches_path_loss():
    net = one_link()
    assert net.gain_mean[0] == pytest.approx(1e-9, rel=1e-12)


def test_channel_replay_and_sample_mean():
    net = one_link()
    a = sample_channels(net, np.random.default_rng(4), 100_000)
    b = sample_channels(net, np.random.default_rng(4), 100_000)
    assert np.array_equal(a, b)
    assert a.mean() == pytest.approx(1e-9, rel=0.02)
    assert (a >= 0).all()


def test_capacity_examples():
    assert capacity(0.0, 1e-9, B, N0) == 0.0
    snr = 1e-9 / (B * N0)
    assert snr == pytest.approx(1.256e4, rel=1e-3)
    assert capacity(1.0, 1e-9, B, N0) == pytest.approx(2.723e8, rel=1e-3)


@given(st.floats(1e-6, 10), st.floats(1e-13, 1e-6))
def test_capacity_monotone_in_power(p, g):
    assert capacity(2 * p, g, B, N0) >= capacity(p, g, B, N0)


def test_min_power_closed_form_and_bisection():
    p = min_power_for_slot(W, 1e-9, B, N0, 0.05, 3.5)
    assert p == pytest.approx(6.16e-3, rel=2e-3)
    lo, hi = 0.0, 3.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if capacity(mid, 1e-9, B, N0) * 0.05 >= W:
            hi = mid
        else:
            lo = mid
    assert p == pytest.approx(hi, rel=1e-9)


def test_min_power_infeasible_cases():
    assert min_power_for_slot(W, 0.0, B, N0, 0.05, 3.5) is Infeasible
    # channel so weak the requirement lands at 4 W
    g = (2 ** (W / (0.05 * B)) - 1) * B * N0 / 4.0
    assert min_power_for_slot(W, g, B, N0, 0.05, 3.5) is Infeasible
    assert not Infeasible


def test_link_energy_examples():
    assert link_energy(1.0, 6.291456e6, 2.723e8) == pytest.approx(23.1e-3, rel=1e-3)
    assert link_energy(0.0, W, 1e8) == 0.0
    with pytest.raises(ValueError):
        link_energy(1.0, W, 0.0)
    b = link_budget(W, 1e-9, B, N0, 0.05, 3.5)
    assert b.delay == pytest.approx(0.05, rel=1e-9)
    assert b.energy == pytest.approx(0.308e-3, rel=2e-3)
    assert link_budget(W, 0.0, B, N0, 0.05, 3.5) is None
    assert math.isclose(b.energy, b.power * 0.05, rel_tol=1e-9)
