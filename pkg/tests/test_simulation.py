import os
import subprocess
import sys

import numpy as np
import pytest

from clo.harness import ldpp_check
from clo.simulation import latency_virtual_queue_update, run_scenario

SHORT = 1000


def test_no_arrivals_means_nothing_happens(single_hop):
    cfg = single_hop.replace(slots=500).with_users(arrival_prob=0.0)
    m = run_scenario(cfg, 0)
    assert m.n_dec.sum() == 0 and m.energy.sum() == 0
    assert (m.theta == m.theta[0]).all()
    assert m.queues.sum() == 0


def test_same_seed_same_metrics(multi_hop):
    cfg = multi_hop.replace(slots=SHORT)
    a, b = run_scenario(cfg, 5), run_scenario(cfg, 5)
    for key in ("energy", "precision_loss", "queues", "frame_L", "theta", "decisions",
                "decision_values"):
        assert getattr(a, key).tobytes() == getattr(b, key).tobytes()
    c = run_scenario(cfg, 6)
    assert c.energy.tobytes() != a.energy.tobytes()


def test_predictor_mode_leaves_arrivals_alone(multi_hop):
    cfg = multi_hop.replace(slots=SHORT)
    noisy = cfg.replace(**{"predictor.mode": "noisy", "predictor.std": 0.1})
    a, b = run_scenario(cfg, 2), run_scenario(noisy, 2)
    assert np.array_equal(a.extras["arrivals"], b.extras["arrivals"])


@pytest.mark.parametrize("frame", [10, 50, 100])
def test_multi_hop_runs_to_the_end(multi_hop, frame):
    m = run_scenario(multi_hop.replace(frame=frame), 0)
    assert m.slots == 10_000 and m.n_frames == 10_000 // frame
    assert m.decision_share().sum() == pytest.approx(1.0)
    # every DU is either decided or still queued
    assert len(m.decisions) + m.in_flight() == m.arrivals_total


def test_python_reference_loop_matches_kernel(multi_hop):
    cfg = multi_hop.replace(slots=600)
    ref = ldpp_check(cfg, 3, 600)
    m = run_scenario(cfg, 3)
    assert np.allclose(ref["energy"], m.energy, rtol=1e-12, atol=1e-15)
    assert np.array_equal(ref["n_dec"], m.n_dec)
    assert np.allclose(ref["theta"], m.theta, rtol=0, atol=1e-12)


def test_jit_and_python_paths_agree(multi_hop, tmp_path):
    code = ("import sys, numpy as np; from clo.config import load_config;"
            "from clo.simulation import run_scenario;"
            "m = run_scenario(load_config(sys.argv[1]).replace(slots=200), 1);"
            "np.savez(sys.argv[2], e=m.energy, q=m.queues, t=m.theta, d=m.decision_values)")
    from tests.conftest import SCENARIOS
    out = {}
    for flag in ("0", "1"):
        path = tmp_path / f"run{flag}.npz"
        subprocess.run([sys.executable, "-c", code, str(SCENARIOS / "multi_hop.yaml"), str(path)],
                       env=dict(os.environ, CLO_DISABLE_JIT=flag), check=True)
        out[flag] = np.load(path)
    for key in ("e", "q", "t", "d"):
        assert np.allclose(out["0"][key], out["1"][key], rtol=1e-12, atol=1e-15), key


def test_latency_queue_examples():
    assert latency_virtual_queue_update(3.0, 1.0, 4.0, 4.0) == 3.0
    assert latency_virtual_queue_update(0.0, 1.0, 6.0, 4.0) == 2.0
    q = 5.0
    for _ in range(10):
        q = latency_virtual_queue_update(q, 1.0, 3.0, 4.0)
    assert q == 0.0


def test_lo_policies_run(single_hop):
    cfg = single_hop.replace(slots=500)
    for policy in ("lo-avg", "lo-outage", "lo-both"):
        m = run_scenario(cfg, 0, policy=policy)
        assert m.policy == policy
        assert set(np.unique(m.theta_star[m.n_dec > 0])) <= set(np.round(np.arange(1, 10) / 10, 10))
