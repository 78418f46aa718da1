import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from clo.tasks import (PRECISION_KINDS, RELIABILITY_KINDS, LossKind, ServerView, SyntheticTask,
                       TaskGenConfig, TaskStore, TaskStream, du_losses, generate_task,
                       generate_tasks, precision_loss, prediction_set, reliability_loss,
                       sample_arrivals, set_size_loss, switching_rates)

CFG = TaskGenConfig()


def toy_view(conf, mask):
    """A view whose confidence map is exactly ``conf`` (quality 1, no noise)."""
    conf = np.asarray(conf, dtype=float)
    task = SyntheticTask(mask=np.asarray(mask, bool), signal=conf, perturbation=np.zeros_like(conf))
    return ServerView(task, 1.0)


def test_arrival_examples():
    rng = np.random.default_rng(0)
    assert sample_arrivals([0.0, 0.0], rng, 1000).sum() == 0
    assert sample_arrivals([1.0], rng, 1000).min() == 1
    rate = sample_arrivals([0.5], rng, 10_000).mean()
    assert 0.485 <= rate <= 0.515


def test_switching_rates_blocks():
    lam = switching_rates(1000, 3, np.random.default_rng(2), (0.4, 0.8), 100, 0.5)
    assert lam.shape == (1000, 3)
    assert set(np.unique(lam)) <= {0.4, 0.8}
    blocks = lam.reshape(10, 100, 3)
    assert (blocks == blocks[:, :1, :]).all()


def test_noiseless_task_is_separable():
    cfg = TaskGenConfig(noise=0.0, contrast=0.5, contrast_jitter=0.0)
    t = generate_task(np.random.default_rng(1), cfg)
    assert np.array_equal(ServerView(t, 1.0).conf, t.mask.astype(float))


def test_task_replay_is_identical():
    a = generate_task(np.random.default_rng(9), CFG)
    b = generate_task(np.random.default_rng(9), CFG)
    assert a.mask.tobytes() == b.mask.tobytes()
    assert a.perturbation.tobytes() == b.perturbation.tobytes()


def test_fnr_matches_gaussian_tail():
    cfg = TaskGenConfig(contrast=0.2, noise=0.15, contrast_jitter=0.0)
    b = generate_tasks(np.random.default_rng(3), cfg, 1000)
    fnr = []
    for m, s, p in zip(b["mask"], b["signal"], b["perturbation"]):
        view = ServerView(SyntheticTask(m, s, p), 1.0)
        fnr.append(reliability_loss(view, 0.5, LossKind.FNR))
    expected = norm.cdf((0.5 - 0.7) / 0.15)
    assert expected == pytest.approx(0.091, abs=1e-3)
    assert np.mean(fnr) == pytest.approx(expected, abs=0.005)


def test_prediction_set_examples():
    view = toy_view([[0.9, 0.6, 0.4, 0.1]], [[1, 1, 0, 0]])
    assert prediction_set(view, 0.5).tolist() == [[True, True, False, False]]
    assert prediction_set(view, 0.0).all()
    assert not prediction_set(view, 1.1).any()


def test_reliability_examples():
    view = toy_view([[0.9, 0.8, 0.7, 0.2, 0.1]], [[1, 1, 1, 1, 0]])
    assert reliability_loss(view, 0.5, LossKind.FNR) == 0.25
    assert reliability_loss(view, 0.5, LossKind.MISCOVERAGE) == 1.0
    for kind in RELIABILITY_KINDS:
        assert reliability_loss(view, 0.0, kind) == 0.0


def test_precision_examples():
    view = toy_view([[0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.1, 0.1]], [[1, 1, 1, 1, 0, 0, 0, 0]])
    assert precision_loss(view, 0.5, LossKind.RELATIVE_FP) == 0.5
    assert precision_loss(view, 0.0, LossKind.FPR) == 1.0
    assert precision_loss(view, 0.0, LossKind.SET_SIZE) == 1.0
    assert set_size_loss(3, 10) == 0.3


def test_losses_reject_empty_denominators():
    empty = toy_view([[0.9, 0.1]], [[0, 0]])
    with pytest.raises(ValueError):
        reliability_loss(empty, 0.5)
    with pytest.raises(ValueError):
        precision_loss(empty, 0.5, LossKind.RELATIVE_FP)
    full = toy_view([[0.9, 0.1]], [[1, 1]])
    with pytest.raises(ValueError):
        precision_loss(full, 0.5, LossKind.FPR)


THETAS = [0.0, 1e-9, 0.05, 0.3, 0.5, 0.7, 0.95, 1.0, 1.1]


@pytest.mark.parametrize("q", [1.0, 1.5, 2.5, math.inf])
def test_kernel_matches_reference_losses(q):
    b = generate_tasks(np.random.default_rng(11), TaskGenConfig(contrast_jitter=0.5), 60)
    for i in range(60):
        view = ServerView(SyntheticTask(b["mask"][i], b["signal"][i], b["perturbation"][i]), q)
        m = b["mask"][i].ravel()
        for th in THETAS:
            for rk in RELIABILITY_KINDS:
                for pk in PRECISION_KINDS:
                    r, p = du_losses(m, b["perturbation"][i].ravel(), b["contrast"][i], int(m.sum()),
                                     q, th, int(rk), int(pk))
                    assert r == reliability_loss(view, th, rk)
                    assert p == precision_loss(view, th, pk)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.5, 1.0, 2.5, math.inf]))
def test_losses_monotone_in_threshold(seed, q):
    t = generate_task(np.random.default_rng(seed), TaskGenConfig(contrast_jitter=0.5))
    view = ServerView(t, q)
    grid = np.linspace(0.0, 1.0, 21)
    for kind in RELIABILITY_KINDS:
        vals = [reliability_loss(view, th, kind) for th in grid]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
    for kind in PRECISION_KINDS:
        vals = [precision_loss(view, th, kind) for th in grid]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_task_stream_batches_do_not_change_the_sequence():
    cfg = TaskGenConfig(batch=16)
    a = TaskStream(np.random.default_rng(5), cfg)
    b = TaskStream(np.random.default_rng(5), cfg)
    whole = a.take(40)
    parts = [b.take(n) for n in (1, 7, 16, 3, 13)]
    for j in range(3):
        assert np.array_equal(whole[j], np.concatenate([p[j] for p in parts]))


def test_task_store_grows_without_losing_rows():
    store = TaskStore(4, capacity=2)
    mask = np.array([[1, 0, 0, 0]], bool)
    for du in range(5):
        store.add_many([du], 0, du, mask, np.full((1, 4), du, float), [0.1])
    for du in range(5):
        row = du % store.capacity
        assert store.live[row] == du
        assert store.pert[row, 0] == du
