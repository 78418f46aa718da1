"""Classical Lyapunov benchmarks with virtual reliability queues.

``Z`` tracks a long-term average loss constraint and ``Y`` an outage
constraint. Every slot the controller picks one threshold shared by all
users from a small grid, scoring decisions by surrogate table losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression

from ._jit import njit
from .errors import ConfigError
from .optimizer import EXACT, GREEDY, SlotProblem, solve_slot
from .queueing import SlotActions
from .tasks import LossKind, loss_curves

DEFAULT_GRID = np.round(np.arange(1, 10) / 10.0, 10)


def update_Z(Z, beta, lbar, r):
    return np.maximum(0.0, Z + beta * (lbar - r))


def update_Y(Y, xi, lbar, l_max, eps):
    """Outage queue step; an outage needs strict excess over ``l_max``."""
    u = (np.asarray(lbar) > l_max).astype(float)
    return np.maximum(0.0, Y + xi * (u - eps))


@dataclass
class VirtualQueues:
    Z: np.ndarray
    Y: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    l_max: np.ndarray
    eps: np.ndarray
    use_Z: bool = True
    use_Y: bool = False

    @classmethod
    def create(cls, n_users, beta=0.5, xi=1.0, l_max=0.143, eps=0.32, mode="avg"):
        full = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n_users,)).copy()  # noqa: E731
        return cls(Z=np.zeros(n_users), Y=np.zeros(n_users), beta=full(beta), xi=full(xi),
                   l_max=full(l_max), eps=full(eps), use_Z=mode in ("avg", "both"),
                   use_Y=mode in ("outage", "both"))

    def weight(self) -> np.ndarray:
        """Per-user price of surrogate reliability loss in the slot objective."""
        w = np.zeros_like(self.Z)
        if self.use_Z:
            w += self.beta * self.Z
        if self.use_Y:
            w += self.xi * self.Y
        return w

    def update(self, lbar, r, active=None):
        """End-of-frame step; users without decisions (``active`` False) are left alone."""
        lbar = np.asarray(lbar, dtype=float)
        act = np.ones_like(lbar, dtype=bool) if active is None else np.asarray(active, dtype=bool)
        if self.use_Z:
            self.Z = np.where(act, update_Z(self.Z, self.beta, lbar, r), self.Z)
        if self.use_Y:
            self.Y = np.where(act, update_Y(self.Y, self.xi, lbar, self.l_max, self.eps), self.Y)


@dataclass
class LossTable:
    grid: np.ndarray
    reliability: np.ndarray  # (models, grid) non-decreasing along the grid
    precision: np.ndarray    # (models, grid) non-increasing along the grid
    quality: np.ndarray


def build_loss_table(qualities, grid, tasks: dict, rel_kind=LossKind.FNR,
                     prec_kind=LossKind.RELATIVE_FP) -> LossTable:
    """Average table losses per model and grid threshold over calibration tasks.

    ``tasks`` is the output of :func:`clo.tasks.generate_tasks`. Sampling
    noise that breaks monotonicity is removed by isotonic projection.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ConfigError("lo.grid: threshold grid must be strictly increasing")
    n = len(tasks["mask"])
    if n == 0:
        raise ConfigError("lo.calibration_tasks: calibration set is empty")
    mask = tasks["mask"].reshape(n, -1)
    pert = tasks["perturbation"].reshape(n, -1)
    a = tasks["contrast"]
    n_true = mask.sum(axis=1).astype(np.int64)
    qualities = np.asarray(qualities, dtype=float)
    rel = np.zeros((len(qualities), len(grid)))
    prec = np.zeros_like(rel)
    r_out = np.zeros((n, len(grid)))
    p_out = np.zeros((n, len(grid)))
    for j, q in enumerate(qualities):
        loss_curves(mask, pert, a, n_true, q, grid, int(rel_kind), int(prec_kind), r_out, p_out)
        rel[j] = isotonic_regression(r_out.mean(axis=0), increasing=True).x
        prec[j] = isotonic_regression(p_out.mean(axis=0), increasing=False).x
    return LossTable(grid=grid, reliability=rel, precision=prec, quality=qualities)


@njit
def solve_slot_shared(mode, out_ptr, out_edges, dst, rcap, bw, gain, pmax, bits, n0, slot, V_E, V_F,
                      count, w, base_cost, icap, limit, model_slot, tab_rel, tab_prec, user_weight,
                      R, I, P, R_tmp, I_tmp, P_tmp, cost):
    """Best (actions, grid index) over the shared threshold grid.

    Returns (failing node or -1, grid index, objective). Ties within 1e-12
    go to fewer transmissions, then fewer decisions, then the lower threshold.
    """
    n_nodes, n_users = count.shape
    best_g = -1
    best_obj = np.inf
    best_tx = 0
    best_dec = 0
    for g in range(tab_rel.shape[1]):
        for n in range(n_nodes):
            j = model_slot[n]
            for k in range(n_users):
                if j >= 0:
                    cost[n, k] = (base_cost[n, k] + V_F * tab_prec[j, g]
                                  + user_weight[k] * tab_rel[j, g])
                else:
                    cost[n, k] = base_cost[n, k]
        st, obj, tx, dec = solve_slot(mode, out_ptr, out_edges, dst, rcap, bw, gain, pmax, bits, n0,
                                      slot, V_E, count, w, cost, icap, limit, R_tmp, I_tmp, P_tmp)
        if st >= 0:
            return st, -1, 0.0
        tol = 1e-12 * max(1.0, abs(best_obj)) if best_obj < np.inf else 0.0
        take = False
        if obj < best_obj - tol:
            take = True
        elif obj <= best_obj + tol and (tx < best_tx or (tx == best_tx and dec < best_dec)):
            take = True
        if take:
            best_g, best_obj, best_tx, best_dec = g, obj, tx, dec
            R[:, :] = R_tmp
            I[:, :] = I_tmp
            P[:] = P_tmp
    return -1, best_g, best_obj


def solve_slot_lo(problem: SlotProblem, vq: VirtualQueues, table: LossTable, greedy: bool = False):
    """Shared-threshold LO slot problem; returns (actions, theta*)."""
    from .errors import SolverLimitError
    from .optimizer import block_sizes

    net = problem.net
    a = SlotActions.zeros(net.n_nodes, net.n_edges, net.n_users)
    tmp = SlotActions.zeros(net.n_nodes, net.n_edges, net.n_users)
    cost = np.zeros((net.n_nodes, net.n_users))
    st, g, _ = solve_slot_shared(
        GREEDY if greedy else EXACT, net.out_ptr, net.out_edges, net.dst, net.edge_cap, net.bandwidth,
        np.asarray(problem.gains, dtype=float), net.p_max, np.asarray(problem.bits, dtype=float),
        problem.n0, problem.slot, problem.V * problem.energy_weight,
        problem.V * problem.energy_weight * problem.eta, problem.Q.astype(np.int64),
        np.asarray(problem.weights, dtype=float), np.asarray(problem.extra, dtype=float),
        net.server_cap, problem.var_limit, net.model_slot, table.reliability, table.precision,
        vq.weight(), a.R, a.I, a.P, tmp.R, tmp.I, tmp.P, cost)
    if st >= 0:
        raise SolverLimitError(
            f"node {net.node_id(st)} has {int(block_sizes(problem)[st])} binary variables "
            f"(limit {problem.var_limit})")
    return a, float(table.grid[g])


def run_lo_algorithm(config, seed: int = 0, mode: str = "avg"):
    """One LO run (``mode`` avg, outage or both) of a validated scenario."""
    from .simulation import run_scenario

    return run_scenario(config, seed=seed, policy={"avg": "lo-avg", "outage": "lo-outage",
                                                   "both": "lo-both"}[mode])
