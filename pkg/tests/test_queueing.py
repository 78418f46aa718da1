import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clo.errors import ContractViolation
from clo.network import build_network
from clo.queueing import QueueState, SlotActions, apply_slot, differential_backlog, lyapunov_value

LINE = build_network({"nodes": [{"id": "ED1", "role": "ed"}, {"id": "S1", "role": "server"},
                                {"id": "S2", "role": "server"}],
                      "edges": [["ED1", "S1"], ["S1", "S2"]]})


def fill(q, n, k, ids, gen=0):
    for du in ids:
        q.push(n, k, du, gen)


def test_server_transition_example():
    # S1 holds 3, sends one to S2, decides one, and receives one from ED1
    q = QueueState(3, 1)
    fill(q, 0, 0, [10])
    fill(q, 1, 0, [1, 2, 3])
    a = SlotActions.zeros(3, 2, 1)
    a.R[0, 0] = 1
    a.R[1, 0] = 1
    a.I[1, 0] = 1
    q2, decided = apply_slot(q, a, [0], [99], LINE, slot=5)
    assert q2.count[1, 0] == 2
    assert decided == [(1, 0, 1, 0)]
    # decisions take the head, forwarding takes the next DU, the arrival joins the tail
    assert q2.contents(1, 0) == [3, 10]
    assert q2.contents(2, 0) == [2]
    assert q.count[1, 0] == 3  # input untouched


def test_idle_and_arrival():
    q = QueueState(3, 1)
    q2, _ = apply_slot(q, SlotActions.zeros(3, 2, 1), [0], [0], LINE)
    assert q2.count.sum() == 0
    q3, _ = apply_slot(q, SlotActions.zeros(3, 2, 1), [1], [42], LINE, slot=17)
    assert q3.count[0, 0] == 1
    assert q3.head_time(0, 0) == 17
    assert q3.contents(0, 0) == [42]


def test_overuse_is_rejected():
    q = QueueState(3, 1)
    fill(q, 1, 0, [1])
    a = SlotActions.zeros(3, 2, 1)
    a.R[1, 0] = 1
    a.I[1, 0] = 1
    with pytest.raises(ContractViolation):
        apply_slot(q, a, [0], [0], LINE)
    with pytest.raises(ContractViolation):
        QueueState(1, 1).pop(0, 0)


def test_backlog_and_lyapunov_examples():
    Q = np.array([[5], [2], [0], [4]])
    assert differential_backlog(Q, 0, 1, 0) == 3
    assert differential_backlog(Q, 1, 1, 0) == 0
    assert differential_backlog(Q, 2, 3, 0) == -4
    assert lyapunov_value(np.zeros((2, 2))) == 0
    assert lyapunov_value(np.array([[4]])) == 8
    assert lyapunov_value(np.array([[3, 4]])) == 12.5
    assert lyapunov_value(np.array([[3, 4]]), halved=False) == 25


def test_ring_growth_keeps_fifo_order():
    q = QueueState(1, 1, capacity=2)
    for du in range(3):
        q.push(0, 0, du, du)
    assert q.pop(0, 0) == (0, 0)
    for du in range(3, 9):
        q.push(0, 0, du, du)
    assert q.contents(0, 0) == list(range(1, 9))
    assert q.head_time(0, 0) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)),
                min_size=1, max_size=40))
def test_conservation_against_list_model(steps):
    """DUs are neither lost nor duplicated; compare with plain Python lists."""
    q = QueueState(3, 1, capacity=2)
    model = [[], [], []]
    gone = []
    next_id = 0
    for t, (arr, tx0, tx1, dec) in enumerate(steps):
        a = SlotActions.zeros(3, 2, 1)
        a.R[0, 0] = tx0 if len(model[0]) >= 1 else 0
        a.I[1, 0] = dec if len(model[1]) >= 1 else 0
        a.R[1, 0] = tx1 if len(model[1]) >= 1 + a.I[1, 0] else 0
        q, decided = apply_slot(q, a, [arr], [next_id], LINE, slot=t)
        if a.I[1, 0]:
            gone.append(model[1].pop(0))
        moved1 = [model[1].pop(0)] if a.R[1, 0] else []
        moved0 = [model[0].pop(0)] if a.R[0, 0] else []
        model[1] += moved0
        model[2] += moved1
        if arr:
            model[0].append(next_id)
        next_id += 1
        assert [d[2] for d in decided] == gone[len(gone) - len(decided):]
        for n in range(3):
            assert q.contents(n, 0) == model[n]
