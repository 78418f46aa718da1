"""Per-(node, user) FIFO queues of DU ids and the slot transition.

Queues are ring buffers held in three arrays so the same state can be
advanced by the compiled frame loop and inspected from Python:
``fifo[n, k, :]`` holds DU ids, ``gen[n, k, :]`` their generation slots,
``head[n, k]`` the ring offset of the oldest entry and ``count[n, k]`` the
backlog Q_n^k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .errors import ContractViolation


@dataclass
class SlotActions:
    R: np.ndarray  # (E, K) DUs of user k sent on edge e
    I: np.ndarray  # (N, K) decisions of node n on user k
    P: np.ndarray  # (E,) transmit power per edge

    @classmethod
    def zeros(cls, n_nodes: int, n_edges: int, n_users: int) -> "SlotActions":
        return cls(R=np.zeros((n_edges, n_users), dtype=np.int64),
                   I=np.zeros((n_nodes, n_users), dtype=np.int64),
                   P=np.zeros(n_edges))

    @property
    def n_tx(self) -> int:
        return int(self.R.sum())

    @property
    def n_dec(self) -> int:
        return int(self.I.sum())


class QueueState:
    def __init__(self, n_nodes: int, n_users: int, capacity: int = 64):
        self.fifo = np.zeros((n_nodes, n_users, capacity), dtype=np.int64)
        self.gen = np.zeros((n_nodes, n_users, capacity), dtype=np.int64)
        self.head = np.zeros((n_nodes, n_users), dtype=np.int64)
        self.count = np.zeros((n_nodes, n_users), dtype=np.int64)

    @property
    def shape(self):
        return self.count.shape

    @property
    def capacity(self) -> int:
        return self.fifo.shape[2]

    @property
    def Q(self) -> np.ndarray:
        return self.count

    def copy(self) -> "QueueState":
        c = QueueState.__new__(QueueState)
        c.fifo, c.gen = self.fifo.copy(), self.gen.copy()
        c.head, c.count = self.head.copy(), self.count.copy()
        return c

    def contents(self, n: int, k: int) -> list:
        """DU ids of queue (n, k), oldest first."""
        c = self.capacity
        return [int(self.fifo[n, k, (self.head[n, k] + i) % c]) for i in range(self.count[n, k])]

    def head_time(self, n: int, k: int) -> int:
        """Generation slot T_n^k of the head DU, 0 for an empty queue."""
        if self.count[n, k] == 0:
            return 0
        return int(self.gen[n, k, self.head[n, k]])

    def push(self, n: int, k: int, du_id: int, gen_slot: int):
        self.reserve(int(self.count.max()) + 1)
        _push(self.fifo, self.gen, self.head, self.count, n, k, du_id, gen_slot)

    def pop(self, n: int, k: int):
        if self.count[n, k] == 0:
            raise ContractViolation(f"pop from empty queue ({n}, {k})")
        return _pop(self.fifo, self.gen, self.head, self.count, n, k)

    def reserve(self, needed: int):
        """Grow the ring so every queue can hold ``needed`` entries."""
        c = self.capacity
        if needed <= c:
            return
        new_c = c
        while new_c < needed:
            new_c *= 2
        idx = (self.head[:, :, None] + np.arange(c)[None, None, :]) % c
        fifo = np.zeros(self.count.shape + (new_c,), dtype=np.int64)
        gen = np.zeros_like(fifo)
        fifo[:, :, :c] = np.take_along_axis(self.fifo, idx, axis=2)
        gen[:, :, :c] = np.take_along_axis(self.gen, idx, axis=2)
        self.fifo, self.gen = fifo, gen
        self.head[:] = 0


@njit
def _push(fifo, gen, head, count, n, k, du_id, gen_slot):
    c = fifo.shape[2]
    if count[n, k] >= c:
        return False
    pos = (head[n, k] + count[n, k]) % c
    fifo[n, k, pos] = du_id
    gen[n, k, pos] = gen_slot
    count[n, k] += 1
    return True


@njit
def _pop(fifo, gen, head, count, n, k):
    c = fifo.shape[2]
    h = head[n, k]
    du, g = fifo[n, k, h], gen[n, k, h]
    head[n, k] = (h + 1) % c
    count[n, k] -= 1
    return du, g


@njit
def check_usage(count, R, I, src):
    """Index ``n * K + k`` of the first queue asked for more DUs than it holds, or -1."""
    n_nodes, n_users = count.shape
    use = I.copy()
    for e in range(R.shape[0]):
        for k in range(n_users):
            use[src[e], k] += R[e, k]
    for n in range(n_nodes):
        for k in range(n_users):
            if use[n, k] > count[n, k]:
                return n * n_users + k
    return -1


@njit
def apply_actions(fifo, gen, head, count, R, I, src, dst, arrivals, new_ids, user_node, slot,
                  dec_node, dec_user, dec_du, dec_gen, pend_e, pend_du, pend_gen):
    """One queue transition. Returns the number of decisions, or -1 on overflow.

    Decisions pop the head, forwarded DUs pop next in edge order, incoming
    DUs join the receiver's tail at slot end followed by new arrivals.
    The caller has checked the actions with ``check_usage``.
    """
    n_nodes, n_users = count.shape
    n_dec = 0
    for n in range(n_nodes):
        for k in range(n_users):
            if I[n, k] > 0:
                for _ in range(I[n, k]):
                    du, g = _pop(fifo, gen, head, count, n, k)
                    dec_node[n_dec] = n
                    dec_user[n_dec] = k
                    dec_du[n_dec] = du
                    dec_gen[n_dec] = g
                    n_dec += 1
    n_pend = 0
    for e in range(R.shape[0]):
        for k in range(n_users):
            for _ in range(R[e, k]):
                du, g = _pop(fifo, gen, head, count, src[e], k)
                pend_e[n_pend] = e * n_users + k
                pend_du[n_pend] = du
                pend_gen[n_pend] = g
                n_pend += 1
    for i in range(n_pend):
        e = pend_e[i] // n_users
        k = pend_e[i] % n_users
        if not _push(fifo, gen, head, count, dst[e], k, pend_du[i], pend_gen[i]):
            return -1
    for k in range(n_users):
        if arrivals[k] > 0:
            if not _push(fifo, gen, head, count, user_node[k], k, new_ids[k], slot):
                return -1
    return n_dec


def apply_slot(q: QueueState, a: SlotActions, arrivals, new_ids, net, slot: int = 0):
    """Advance ``q`` by one slot; returns the new state and the decided DUs.

    ``arrivals[k]`` in {0, 1}; ``new_ids[k]`` is the id given to user k's new
    DU when it arrives. Decided DUs are returned as ``(node, user, du_id,
    generation slot)`` tuples.
    """
    out = q.copy()
    R = np.asarray(a.R, dtype=np.int64)
    I = np.asarray(a.I, dtype=np.int64)
    if (R < 0).any() or (I < 0).any():
        raise ContractViolation("negative action entries")
    bad = check_usage(out.count, R, I, net.src)
    if bad >= 0:
        n, k = divmod(int(bad), out.count.shape[1])
        raise ContractViolation(
            f"actions use more DUs than queue ({net.node_id(n)}, user {k}) holds ({out.count[n, k]})")
    arrivals = np.asarray(arrivals, dtype=np.int64)
    out.reserve(int(out.count.max()) + int(R.sum()) + 1)
    cap = int(I.sum()) + 1
    buf = [np.zeros(cap, dtype=np.int64) for _ in range(4)]
    pend = [np.zeros(int(R.sum()) + 1, dtype=np.int64) for _ in range(3)]
    n_dec = apply_actions(out.fifo, out.gen, out.head, out.count, R, I, net.src, net.dst,
                          arrivals, np.asarray(new_ids, dtype=np.int64), net.user_node, slot,
                          *buf, *pend)
    decided = [tuple(int(b[i]) for b in buf) for i in range(n_dec)]
    return out, decided


def differential_backlog(q, n: int, m: int, k: int) -> int:
    """U_{n,m}^k = Q_n^k - Q_m^k."""
    Q = q.count if isinstance(q, QueueState) else np.asarray(q)
    return int(Q[n, k]) - int(Q[m, k])


def lyapunov_value(q, halved: bool = True) -> float:
    """Quadratic Lyapunov function; ``halved=False`` gives the variant without the 1/2."""
    Q = q.count if isinstance(q, QueueState) else np.asarray(q)
    s = float(np.sum(np.asarray(Q, dtype=float) ** 2))
    return 0.5 * s if halved else s
