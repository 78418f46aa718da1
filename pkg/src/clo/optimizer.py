"""Per-slot drift-plus-penalty problem: objective, exact and greedy solvers.

With transmit power fixed at the smallest value that clears a link within
one slot, every term of the instantaneous objective and every constraint
(link caps, processing caps, node power caps, queue usage) involves a
single transmitting/deciding node. The problem therefore splits into one
small block per node, each of which is enumerated exhaustively (``exact``)
or filled by best-marginal unit actions (``greedy``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .channel import Infeasible, min_power_for_slot
from .errors import SolverLimitError
from .network import Network, drift_constant
from .queueing import QueueState, SlotActions, lyapunov_value

EXACT = 0
GREEDY = 1

ORACLE = 0
NOISY = 1
TABLE = 2


# ---------------------------------------------------------------- predictors

@dataclass(frozen=True)
class PrecisionPredictor:
    """Predicted precision loss of a head-of-queue DU.

    ``oracle`` returns the true loss, ``noisy`` returns
    ``clamp(F + bias + std * z)`` and ``table`` looks the model's average
    loss up on a threshold grid (linear interpolation, flat outside).
    """

    mode: str = "oracle"
    bias: float = 0.0
    std: float = 0.0
    table: object = None  # LossTable for mode "table"

    def __post_init__(self):
        if self.mode not in ("oracle", "noisy", "table"):
            raise ValueError(f"unknown predictor mode {self.mode!r}")
        if self.mode == "table" and self.table is None:
            raise ValueError("table predictor needs a LossTable")
        if self.std < 0:
            raise ValueError("predictor std must be >= 0")

    @property
    def code(self) -> int:
        return {"oracle": ORACLE, "noisy": NOISY, "table": TABLE}[self.mode]

    def predict(self, true_loss: float, model: int = 0, theta: float = 0.5, z: float = 0.0) -> float:
        if self.mode == "oracle":
            return true_loss
        if self.mode == "noisy":
            return min(max(true_loss + self.bias + self.std * z, 0.0), 1.0)
        return float(np.interp(theta, self.table.grid, self.table.precision[model]))


# ---------------------------------------------------------------- problem

@dataclass
class SlotProblem:
    """Everything the controller sees at the start of a slot.

    ``fhat[n, k]`` is the predicted precision loss of the head DU of queue
    (n, k) at a model node (ignored elsewhere). ``weights`` are the backlogs
    used in the pressure terms (the queue lengths unless a latency queue
    adds to them); ``extra[n, k]`` is any further per-decision cost.
    """

    net: Network
    queues: QueueState
    gains: np.ndarray
    theta: np.ndarray
    V: float
    eta: float
    fhat: np.ndarray
    n0: float = 10.0 ** (-20.4)
    slot: float = 0.05
    weights: np.ndarray | None = None
    extra: np.ndarray | None = None
    var_limit: int = 20
    energy_weight: float = 1.0
    bits: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.V > 0:
            raise ValueError("V must be > 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        shape = self.queues.count.shape
        if self.weights is None:
            self.weights = self.queues.count.astype(float)
        if self.extra is None:
            self.extra = np.zeros(shape)
        if self.bits is None:
            self.bits = self.net.user_array("du_bits")
        self.fhat = np.nan_to_num(np.asarray(self.fhat, dtype=float), nan=0.0)

    @property
    def Q(self) -> np.ndarray:
        return self.queues.count

    @property
    def V_energy(self) -> float:
        return self.V * self.energy_weight

    def proc_cost(self) -> np.ndarray:
        return self.V_energy * self.eta * self.fhat + self.extra

    def edge_power(self, e: int, users) -> float:
        """Minimal power carrying ``users``' head DUs on edge ``e`` (inf if infeasible)."""
        net = self.net
        b = float(sum(self.bits[k] for k in users))
        if b == 0:
            return 0.0
        p = min_power_for_slot(b, self.gains[e], net.bandwidth[e], self.n0, self.slot,
                               net.p_max[net.src[e]])
        return math.inf if p is Infeasible else p


def slot_objective(problem: SlotProblem, actions: SlotActions) -> float:
    """``V (E_tot + eta F_hat) - sum U R - sum Q I`` (inf for an infeasible link)."""
    net = problem.net
    w = problem.weights
    terms = []
    node_power = np.zeros(net.n_nodes)
    for e in range(net.n_edges):
        users = np.flatnonzero(actions.R[e])
        if len(users) == 0:
            continue
        p = problem.edge_power(e, users)
        if not math.isfinite(p):
            return math.inf
        node_power[net.src[e]] += p
        terms.append(problem.V_energy * p * problem.slot)
        n, m = net.src[e], net.dst[e]
        terms.extend(-(w[n, k] - w[m, k]) for k in users)
    if np.any(node_power > net.p_max * (1 + 1e-12)):
        return math.inf
    cost = problem.proc_cost()
    for n, k in zip(*np.nonzero(actions.I)):
        terms.append(cost[n, k])
        terms.append(-w[n, k])
    return math.fsum(terms)


# ---------------------------------------------------------------- kernels

@njit
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit
def _edge_power(bits, g, bw, n0, slot):
    if g <= 0.0:
        return np.inf
    return (2.0 ** (bits / (slot * bw)) - 1.0) * bw * n0 / g


@njit
def solve_node(n, mode, out_ptr, out_edges, dst, rcap, bw, gain, pmax, bits, n0, slot, V,
               count, w, proc_cost, icap, limit, R, I, P):
    """Optimal (or greedy) block of node ``n``; writes its rows of R, I, P.

    Returns (status, objective, transmissions, decisions); status 1 means
    the block exceeds ``limit`` binary variables and nothing was written.
    """
    n_users = count.shape[1]
    e0, e1 = out_ptr[n], out_ptr[n + 1]
    n_e = e1 - e0
    has_proc = 1 if icap[n] > 0 else 0
    dims = n_e + has_proc
    elig = 0
    n_elig = 0
    for k in range(n_users):
        if count[n, k] >= 1:
            elig |= 1 << k
            n_elig += 1
    if n_elig * dims > limit and mode == 0:
        return 1, 0.0, 0, 0
    for j in range(e0, e1):
        e = out_edges[j]
        P[e] = 0.0
        for k in range(n_users):
            R[e, k] = 0
    for k in range(n_users):
        I[n, k] = 0
    if n_elig == 0 or dims == 0:
        return 0, 0.0, 0, 0

    if mode == 0:
        # submasks of the eligible users, ascending
        n_sub = 1 << n_elig
        subs = np.empty(n_sub, dtype=np.int64)
        sub = elig
        i = n_sub - 1
        while True:
            subs[i] = sub
            i -= 1
            if sub == 0:
                break
            sub = (sub - 1) & elig
        opts = np.zeros((dims, n_sub), dtype=np.int64)
        ocost = np.zeros((dims, n_sub))
        opow = np.zeros((dims, n_sub))
        nopt = np.zeros(dims, dtype=np.int64)
        for d in range(dims):
            cnt = 0
            for s in range(n_sub):
                mask = subs[s]
                pc = _popcount(mask)
                if d < n_e:
                    e = out_edges[e0 + d]
                    if pc > rcap[e]:
                        continue
                    c = 0.0
                    p = 0.0
                    if mask != 0:
                        b = 0.0
                        for k in range(n_users):
                            if (mask >> k) & 1:
                                b += bits[k]
                        p = _edge_power(b, gain[e], bw[e], n0, slot)
                        if not p <= pmax[n]:
                            continue
                        c = V * p * slot
                        m = dst[e]
                        for k in range(n_users):
                            if (mask >> k) & 1:
                                c -= w[n, k] - w[m, k]
                else:
                    if pc > icap[n]:
                        continue
                    c = 0.0
                    p = 0.0
                    for k in range(n_users):
                        if (mask >> k) & 1:
                            c += proc_cost[n, k] - w[n, k]
                opts[d, cnt] = mask
                ocost[d, cnt] = c
                opow[d, cnt] = p
                cnt += 1
            nopt[d] = cnt

        idx = np.zeros(dims, dtype=np.int64)
        best = np.zeros(dims, dtype=np.int64)
        best_obj = np.inf
        best_tx = 0
        best_dec = 0
        while True:
            obj = 0.0
            pw = 0.0
            tx = 0
            dec = 0
            for d in range(dims):
                obj += ocost[d, idx[d]]
                pw += opow[d, idx[d]]
                if d < n_e:
                    tx += _popcount(opts[d, idx[d]])
                else:
                    dec += _popcount(opts[d, idx[d]])
            ok = pw <= pmax[n]
            if ok and dims > 1:
                for k in range(n_users):
                    if (elig >> k) & 1 and count[n, k] < dims:
                        u = 0
                        for d in range(dims):
                            u += (opts[d, idx[d]] >> k) & 1
                        if u > count[n, k]:
                            ok = False
                            break
            if ok:
                tol = 1e-12 * max(1.0, abs(best_obj)) if best_obj < np.inf else 0.0
                take = False
                if obj < best_obj - tol:
                    take = True
                elif obj <= best_obj + tol:
                    if tx < best_tx or (tx == best_tx and dec < best_dec):
                        take = True
                if take:
                    best_obj = obj
                    best_tx = tx
                    best_dec = dec
                    for d in range(dims):
                        best[d] = idx[d]
            # odometer, last dimension fastest
            d = dims - 1
            while d >= 0:
                idx[d] += 1
                if idx[d] < nopt[d]:
                    break
                idx[d] = 0
                d -= 1
            if d < 0:
                break
        for d in range(dims):
            mask = opts[d, best[d]]
            if d < n_e:
                e = out_edges[e0 + d]
                P[e] = opow[d, best[d]]
                for k in range(n_users):
                    R[e, k] = (mask >> k) & 1
            else:
                for k in range(n_users):
                    I[n, k] = (mask >> k) & 1
        return 0, best_obj, best_tx, best_dec

    # greedy: repeatedly take the unit action with the most negative marginal cost
    use = np.zeros(n_users, dtype=np.int64)
    ebits = np.zeros(max(n_e, 1))
    epow = np.zeros(max(n_e, 1))
    ecnt = np.zeros(max(n_e, 1), dtype=np.int64)
    n_proc = 0
    total_pow = 0.0
    obj = 0.0
    tx = 0
    dec = 0
    while True:
        best_delta = 0.0
        best_d = -1
        best_k = -1
        best_p = 0.0
        if has_proc and n_proc < icap[n]:
            for k in range(n_users):
                if count[n, k] > use[k] and I[n, k] == 0:
                    delta = proc_cost[n, k] - w[n, k]
                    if delta < best_delta:
                        best_delta, best_d, best_k = delta, n_e, k
        for d in range(n_e):
            e = out_edges[e0 + d]
            if ecnt[d] >= rcap[e]:
                continue
            m = dst[e]
            for k in range(n_users):
                if count[n, k] <= use[k] or R[e, k] != 0:
                    continue
                p = _edge_power(ebits[d] + bits[k], gain[e], bw[e], n0, slot)
                if not p <= pmax[n] or total_pow - epow[d] + p > pmax[n]:
                    continue
                delta = V * slot * (p - epow[d]) - (w[n, k] - w[m, k])
                if delta < best_delta:
                    best_delta, best_d, best_k, best_p = delta, d, k, p
        if best_d < 0:
            break
        k = best_k
        use[k] += 1
        obj += best_delta
        if best_d == n_e:
            I[n, k] = 1
            n_proc += 1
            dec += 1
        else:
            e = out_edges[e0 + best_d]
            R[e, k] = 1
            total_pow += best_p - epow[best_d]
            epow[best_d] = best_p
            ebits[best_d] += bits[k]
            ecnt[best_d] += 1
            P[e] = best_p
            tx += 1
    return 0, obj, tx, dec


@njit
def solve_slot(mode, out_ptr, out_edges, dst, rcap, bw, gain, pmax, bits, n0, slot, V,
               count, w, proc_cost, icap, limit, R, I, P):
    """Solve every node block. Returns (failing node or -1, objective, tx, dec)."""
    total = 0.0
    tx = 0
    dec = 0
    for n in range(count.shape[0]):
        st, obj, t, d = solve_node(n, mode, out_ptr, out_edges, dst, rcap, bw, gain, pmax, bits,
                                   n0, slot, V, count, w, proc_cost, icap, limit, R, I, P)
        if st != 0:
            return n, 0.0, 0, 0
        total += obj
        tx += t
        dec += d
    return -1, total, tx, dec


def block_sizes(problem: SlotProblem) -> np.ndarray:
    """Binary variables per node block (only users with a non-empty queue count)."""
    net = problem.net
    elig = (problem.Q >= 1).sum(axis=1)
    dims = net.out_deg + (net.server_cap > 0)
    return elig * dims


def _solve(problem: SlotProblem, mode: int) -> SlotActions:
    net = problem.net
    a = SlotActions.zeros(net.n_nodes, net.n_edges, net.n_users)
    status, _, _, _ = solve_slot(
        mode, net.out_ptr, net.out_edges, net.dst, net.edge_cap, net.bandwidth,
        np.asarray(problem.gains, dtype=float), net.p_max, np.asarray(problem.bits, dtype=float),
        problem.n0, problem.slot, problem.V_energy, problem.Q.astype(np.int64),
        np.asarray(problem.weights, dtype=float), problem.proc_cost(),
        net.server_cap, problem.var_limit, a.R, a.I, a.P)
    if status >= 0:
        size = int(block_sizes(problem)[status])
        raise SolverLimitError(
            f"node {net.node_id(status)} has {size} binary variables (limit {problem.var_limit}); "
            "use solve_greedy for instances this large")
    return a


def solve_exact(problem: SlotProblem) -> SlotActions:
    """Global minimizer of the slot objective.

    Ties within 1e-12 (relative) go to fewer transmissions, then fewer
    decisions, then the first assignment in enumeration order (edges in
    declaration order, user subsets in increasing bitmask order).
    """
    return _solve(problem, EXACT)


def solve_greedy(problem: SlotProblem) -> SlotActions:
    return _solve(problem, GREEDY)


def ldpp_diagnostic(problem: SlotProblem, actions: SlotActions, arrivals=None, prev_G=None,
                    halved: bool = True) -> dict:
    """Realized drift-plus-penalty of one slot next to its upper bound.

    ``realized = G(t+1) - G(t) + V J`` and ``bound = D - sum Q (out - in) + V J``
    with D from :func:`drift_constant`. ``halved`` selects G = 1/2 sum Q^2.
    """
    net = problem.net
    Q = problem.Q.astype(float)
    out = actions.I.astype(float).copy()
    inc = np.zeros_like(Q)
    for e in range(net.n_edges):
        out[net.src[e]] += actions.R[e]
        inc[net.dst[e]] += actions.R[e]
    if arrivals is not None:
        for k, a in enumerate(np.asarray(arrivals)):
            inc[net.user_node[k], k] += a
    Q_next = np.maximum(Q - out, 0.0) + inc
    G = lyapunov_value(Q, halved) if prev_G is None else prev_G
    G_next = lyapunov_value(Q_next, halved)
    energy = 0.0
    for e in range(net.n_edges):
        users = np.flatnonzero(actions.R[e])
        if len(users):
            energy += problem.edge_power(e, users) * problem.slot
    precision = float(np.sum(actions.I * problem.fhat))
    J = problem.energy_weight * (energy + problem.eta * precision)
    scale = 1.0 if halved else 2.0
    D = drift_constant(net) * scale
    bound = D + scale * float(np.sum(Q * (inc - out))) + problem.V * J
    return {"realized": G_next - G + problem.V * J, "bound": bound, "D": D,
            "J": J, "G": G, "G_next": G_next, "halved": halved}
