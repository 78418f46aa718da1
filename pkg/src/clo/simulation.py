"""Frame/slot driver shared by the conformal controller and the LO benchmarks.

The slot loop of one frame runs in a single compiled kernel; threshold and
virtual-queue updates happen in Python at frame boundaries. All randomness
comes from named sub-streams of the run seed, so switching the predictor
or the policy leaves arrivals, channels and tasks untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .channel import sample_channels
from .config import ScenarioConfig
from .crc import FrameFeedback, ThresholdState, certificate_series, update_thresholds
from .errors import ContractViolation, SolverLimitError
from .lo import LossTable, VirtualQueues, build_loss_table, solve_slot_shared
from .optimizer import EXACT, GREEDY, solve_slot
from .queueing import QueueState, apply_actions, check_usage
from .tasks import TaskStore, TaskStream, du_losses, generate_tasks, switching_rates

STREAMS = {"arrivals": 0, "channels": 1, "tasks": 2, "predictor": 3, "nonstationary": 4,
           "calibration": 5}


def stream(seed: int, name: str, *sub: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name],) + sub))


@njit
def run_frame(lo_mode, solver, t0, nt, gains, arrivals, noise, qs, store, ctl, fb_N, fb_L,
              slots_out, q_out, dec_out, dec_theta, scratch):
    """Advance one frame of ``gains.shape[0]`` slots.

    Returns (status, decisions written, slot, node): status 1 is a solver
    limit, 2 an infeasible action set, 3 a queue overflow.
    """
    (out_ptr, out_edges, src, dst, rcap, bw, pmax, icap, model_slot, quality, user_node, bits,
     n0, slot_len, limit) = nt
    fifo, fgen, head, count, next_id = qs
    s_mask, s_pert, s_a, s_ntrue, s_live = store
    (theta, V_E, V_F, pred_mode, pred_bias, pred_std, grid, tab_rel, tab_prec, user_weight, track,
     rel_kind, prec_kind) = ctl
    (R, I, P, R2, I2, P2, w, cost, cost2, fhat, d_node, d_user, d_du, d_gen, pend_e, pend_du,
     pend_gen, new_ids, zero_cost) = scratch
    n_nodes, n_users = count.shape
    n_slots = gains.shape[0]
    cap = s_mask.shape[0]
    nd = 0
    for s in range(n_slots):
        t = t0 + s
        for n in range(n_nodes):
            for k in range(n_users):
                q_out[s, n, k] = count[n, k]
                w[n, k] = count[n, k] + track[n, k]
                cost[n, k] = 0.0
                fhat[n, k] = 0.0
        gain = gains[s]
        g_star = -1
        if lo_mode == 0:
            for n in range(n_nodes):
                j = model_slot[n]
                if j < 0:
                    continue
                for k in range(n_users):
                    if count[n, k] == 0:
                        continue
                    row = fifo[n, k, head[n, k]] % cap
                    _, f = du_losses(s_mask[row], s_pert[row], s_a[row], s_ntrue[row], quality[j],
                                     theta[k], rel_kind, prec_kind)
                    if pred_mode == 1:
                        f = min(max(f + pred_bias + pred_std * noise[s, n, k], 0.0), 1.0)
                    elif pred_mode == 2:
                        f = np.interp(theta[k], grid, tab_prec[j])
                    fhat[n, k] = f
                    cost[n, k] = V_F * f
            st, obj, tx, dec = solve_slot(solver, out_ptr, out_edges, dst, rcap, bw, gain, pmax, bits,
                                          n0, slot_len, V_E, count, w, cost, icap, limit, R, I, P)
        else:
            st, g_star, obj = solve_slot_shared(solver, out_ptr, out_edges, dst, rcap, bw, gain, pmax,
                                                bits, n0, slot_len, V_E, V_F, count, w, zero_cost,
                                                icap, limit, model_slot, tab_rel, tab_prec,
                                                user_weight, R, I, P, R2, I2, P2, cost2)
        if st >= 0:
            return 1, nd, t, st
        if check_usage(count, R, I, src) >= 0:
            return 2, nd, t, -1
        energy = 0.0
        tx = 0
        for e in range(R.shape[0]):
            used = 0
            for k in range(n_users):
                used += R[e, k]
            if used > rcap[e]:
                return 2, nd, t, src[e]
            if used > 0:
                energy += P[e] * slot_len
            tx += used
        for k in range(n_users):
            if arrivals[s, k] > 0:
                new_ids[k] = next_id[0]
                next_id[0] += 1
        n_dec = apply_actions(fifo, fgen, head, count, R, I, src, dst, arrivals[s], new_ids,
                              user_node, t, d_node, d_user, d_du, d_gen, pend_e, pend_du, pend_gen)
        if n_dec < 0:
            return 3, nd, t, -1
        f_sum = 0.0
        fhat_sum = 0.0
        for i in range(n_dec):
            n = d_node[i]
            k = d_user[i]
            j = model_slot[n]
            row = d_du[i] % cap
            th = theta[k] if lo_mode == 0 else grid[g_star]
            lr, lp = du_losses(s_mask[row], s_pert[row], s_a[row], s_ntrue[row], quality[j], th,
                               rel_kind, prec_kind)
            c = fb_N[k]
            fb_L[k] = (c / (c + 1.0)) * fb_L[k] + lr / (c + 1.0)
            fb_N[k] = c + 1
            s_live[row] = -1
            dec_out[nd, 0] = t
            dec_out[nd, 1] = k
            dec_out[nd, 2] = n
            dec_out[nd, 3] = d_du[i]
            dec_out[nd, 4] = d_gen[i]
            dec_theta[nd, 0] = th
            dec_theta[nd, 1] = lr
            dec_theta[nd, 2] = lp
            nd += 1
            f_sum += lp
            fhat_sum += fhat[n, k] if lo_mode == 0 else tab_prec[j, g_star]
        slots_out[s, 0] = energy
        slots_out[s, 1] = f_sum
        slots_out[s, 2] = fhat_sum
        slots_out[s, 3] = tx
        slots_out[s, 4] = n_dec
        slots_out[s, 5] = grid[g_star] if lo_mode != 0 else np.nan
        slots_out[s, 6] = obj
    return 0, nd, -1, -1


@dataclass
class RunMetrics:
    name: str
    policy: str
    seed: int
    slots: int
    frame: int
    node_ids: list
    user_ids: list
    model_nodes: np.ndarray
    quality: np.ndarray
    target: np.ndarray
    gamma: np.ndarray
    theta0: np.ndarray
    delay: np.ndarray
    arrival_rate: np.ndarray
    slot_seconds: float
    # per slot
    energy: np.ndarray
    precision_loss: np.ndarray
    predicted_loss: np.ndarray
    n_tx: np.ndarray
    n_dec: np.ndarray
    theta_star: np.ndarray
    objective: np.ndarray
    queues: np.ndarray          # (T + 1, N, K) backlog at the start of each slot
    # per frame
    frame_N: np.ndarray         # (F, K)
    frame_L: np.ndarray         # (F, K)
    theta: np.ndarray           # (F + 1, K)
    Z: np.ndarray               # (F + 1, K)
    Y: np.ndarray               # (F + 1, K)
    QL: np.ndarray              # (F + 1, K)
    # per decision: slot, user, node, du id, generation slot / theta, rel loss, prec loss
    decisions: np.ndarray
    decision_values: np.ndarray
    arrivals_total: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.frame_N)

    def certificate(self, worst_case: bool = False, slack: float = 1e-9) -> dict:
        return certificate_series(self.frame_N, self.frame_L, self.theta, self.gamma, self.theta0,
                                  self.target, self.delay, worst_case=worst_case, slack=slack)

    def cumulative_loss(self) -> np.ndarray:
        """Active-frame running mean of the frame losses, (F, K)."""
        return self.certificate()["cum"]

    def window(self, w: int) -> slice:
        return slice(max(self.slots - w, 0), self.slots)

    def mean_energy(self, w: int = 1000) -> float:
        return float(np.mean(self.energy[self.window(w)]))

    def mean_precision(self, w: int = 1000) -> float:
        """1 - average precision loss of the decisions taken in the last ``w`` slots."""
        sel = self.decisions[:, 0] >= self.slots - w
        if not sel.any():
            return float("nan")
        return float(1.0 - np.mean(self.decision_values[sel, 2]))

    def decision_share(self, w: int | None = None) -> np.ndarray:
        """Fraction of decisions taken at each model node (ordered as ``model_nodes``)."""
        d = self.decisions if w is None else self.decisions[self.decisions[:, 0] >= self.slots - w]
        counts = np.array([(d[:, 2] == n).sum() for n in self.model_nodes], dtype=float)
        total = counts.sum()
        return counts / total if total else counts

    def time_to_target(self, tol: float = 0.01) -> int:
        """Slots until every user's cumulative loss stays within ``tol`` of r for good."""
        cum = self.cumulative_loss()
        worst = 0
        for k in range(cum.shape[1]):
            bad = ~(np.abs(cum[:, k] - self.target[k]) <= tol)
            idx = np.flatnonzero(bad)
            worst = max(worst, 0 if len(idx) == 0 else int(idx[-1]) + 1)
        return worst * self.frame

    def max_backlog_ratio(self) -> float:
        return float(self.queues[-1].max() / self.slots)

    def in_flight(self) -> int:
        return int(self.queues[-1].sum())


def _table(cfg: ScenarioConfig, seed: int) -> LossTable:
    net = cfg.network
    rng = stream(seed, "calibration")
    tasks = generate_tasks(rng, cfg.task_config, cfg.lo["calibration_tasks"])
    return build_loss_table(net.quality, cfg.lo["grid"], tasks, cfg.rel_kind, cfg.prec_kind)


def latency_virtual_queue_update(QL, zeta, q_tot_avg, q_avg):
    """QL' = max(0, QL + zeta (average total backlog - allowed backlog))."""
    return np.maximum(0.0, QL + zeta * (np.asarray(q_tot_avg, dtype=float) - q_avg))


def run_scenario(cfg: ScenarioConfig, seed: int = 0, policy: str | None = None,
                 table: LossTable | None = None) -> RunMetrics:
    """Run one realization; deterministic given (config, seed, policy)."""
    policy = policy or cfg.policy
    net = cfg.network
    K, N, E = net.n_users, net.n_nodes, net.n_edges
    T, S = cfg.slots, cfg.frame
    F = T // S
    users = net.users
    lam = net.user_array("arrival_prob")
    r = net.user_array("target")
    gamma = net.user_array("learning_rate")
    theta0 = net.user_array("theta0")
    delay = np.array([u.delay for u in users], dtype=np.int64)
    lo_mode = 0 if policy == "clo" else 1
    solver = EXACT if cfg.solver == "exact" else GREEDY
    tcfg = cfg.task_config
    n_pix = tcfg.n_pixels

    # exogenous randomness, generated up front
    if cfg.nonstationary["enabled"]:
        ns = cfg.nonstationary
        rates = switching_rates(T, K, stream(seed, "nonstationary"), tuple(ns["levels"]),
                                ns["period"], ns["p_switch"])
    else:
        rates = np.broadcast_to(lam, (T, K))
    arrivals = (stream(seed, "arrivals").random((T, K)) < rates).astype(np.int64)
    gains = np.ascontiguousarray(sample_channels(net, stream(seed, "channels"), T))
    task_streams = [TaskStream(stream(seed, "tasks", k), tcfg) for k in range(K)]
    pred = cfg.predictor
    pred_code = {"oracle": 0, "noisy": 1, "table": 2}[pred["mode"]]
    pred_rng = stream(seed, "predictor")

    if lo_mode or pred_code == 2:
        table = table or _table(cfg, seed)
        grid = np.asarray(table.grid, dtype=float)
        tab_rel, tab_prec = table.reliability, table.precision
    else:
        grid = np.asarray(cfg.lo["grid"], dtype=float)
        tab_rel = np.zeros((max(net.n_models, 1), len(grid)))
        tab_prec = tab_rel.copy()

    qs = QueueState(N, K, capacity=64)
    store = TaskStore(n_pix, capacity=1024)
    next_id = np.zeros(1, dtype=np.int64)
    ts = ThresholdState(theta0=theta0, gamma=gamma, target=r, delay=delay)
    fb = FrameFeedback(K)
    lo = cfg.lo
    l_max = lo["l_max"] if lo["l_max"] is not None else r * 1.1
    mode = {"clo": "avg", "lo-avg": "avg", "lo-outage": "outage", "lo-both": "both"}[policy]
    vq = VirtualQueues.create(K, beta=lo["beta"], xi=lo["xi"], l_max=l_max, eps=lo["epsilon"], mode=mode)
    lat = cfg.latency
    QL = np.zeros(K)
    lat_node = net.index[lat["server"]] if lat["enabled"] else -1

    V_E = cfg.V * cfg.energy_weight
    V_F = V_E * cfg.eta
    nt = (net.out_ptr, net.out_edges, net.src, net.dst, net.edge_cap, net.bandwidth, net.p_max,
          net.server_cap, net.model_slot, net.quality, net.user_node,
          net.user_array("du_bits"), cfg.n0, float(cfg.slot_seconds), int(cfg.exact_var_limit))
    max_dec = int(net.server_cap.sum()) * S + 1
    tx_cap = int(net.edge_cap.sum()) * K + 1
    scratch = (np.zeros((E, K), np.int64), np.zeros((N, K), np.int64), np.zeros(E),
               np.zeros((E, K), np.int64), np.zeros((N, K), np.int64), np.zeros(E),
               np.zeros((N, K)), np.zeros((N, K)), np.zeros((N, K)), np.zeros((N, K)),
               np.zeros(max_dec, np.int64), np.zeros(max_dec, np.int64),
               np.zeros(max_dec, np.int64), np.zeros(max_dec, np.int64),
               np.zeros(tx_cap, np.int64), np.zeros(tx_cap, np.int64), np.zeros(tx_cap, np.int64),
               np.zeros(K, np.int64), np.zeros((N, K)))
    noise = np.zeros((S, N, K))
    track = np.zeros((N, K))

    slots_out = np.zeros((T, 7))
    q_hist = np.zeros((T + 1, N, K), dtype=np.int64)
    frame_N = np.zeros((F, K), dtype=np.int64)
    frame_L = np.zeros((F, K))
    Z_hist = np.zeros((F + 1, K))
    Y_hist = np.zeros((F + 1, K))
    QL_hist = np.zeros((F + 1, K))
    dec_chunks, val_chunks = [], []
    max_in = int(net.in_deg.max()) if N else 0
    max_r = int(net.edge_cap.max()) if E else 0

    for f in range(F):
        t0 = f * S
        A = np.ascontiguousarray(arrivals[t0:t0 + S])
        n_new = int(A.sum())
        if n_new:
            pos = np.flatnonzero(A.ravel())
            ids = next_id[0] + np.arange(n_new)
            owner = pos % K
            gen = t0 + pos // K
            for k in range(K):
                sel = owner == k
                if sel.any():
                    m, p, a = task_streams[k].take(int(sel.sum()))
                    store.add_many(ids[sel], k, gen[sel], m, p, a)
        qs.reserve(int(qs.count.max()) + S * (max_in * max_r + 1) + 1)
        if pred_code == 1:
            noise = pred_rng.standard_normal((S, N, K))
        if lat["enabled"]:
            track[:] = 0.0
            for k in range(K):
                track[net.user_node[k], k] += QL[k]
                track[lat_node, k] += QL[k]
        ctl = (ts.theta.copy(), V_E, V_F, pred_code, float(pred["bias"]), float(pred["std"]),
               grid, tab_rel, tab_prec, vq.weight(), track, int(cfg.rel_kind), int(cfg.prec_kind))
        fb_N = np.zeros(K, dtype=np.int64)
        fb_L = np.zeros(K)
        dec_out = np.zeros((max_dec, 5), dtype=np.int64)
        dec_val = np.zeros((max_dec, 3))
        st, nd, bad_t, bad_n = run_frame(
            lo_mode, solver, t0, nt, np.ascontiguousarray(gains[t0:t0 + S]), A, noise,
            (qs.fifo, qs.gen, qs.head, qs.count, next_id),
            (store.mask, store.pert, store.contrast, store.n_true, store.live),
            ctl, fb_N, fb_L, slots_out[t0:t0 + S], q_hist[t0:t0 + S], dec_out, dec_val, scratch)
        if st == 1:
            raise SolverLimitError(f"slot {bad_t}: node {net.node_id(bad_n)} exceeds the exact "
                                   f"solver limit ({cfg.exact_var_limit} variables); use solver: greedy")
        if st == 2:
            raise ContractViolation(f"slot {bad_t}: solver returned an infeasible action set")
        if st == 3:
            raise ContractViolation(f"slot {bad_t}: queue ring overflow")
        dec_chunks.append(dec_out[:nd])
        val_chunks.append(dec_val[:nd])
        frame_N[f] = fb_N
        frame_L[f] = fb_L
        fb.N[:] = fb_N
        fb.Lbar[:] = fb_L
        if lo_mode == 0:
            update_thresholds(ts, fb)
        else:
            fb.close_frame()
            vq.update(fb_L, r, active=fb_N > 0)
        Z_hist[f + 1] = vq.Z
        Y_hist[f + 1] = vq.Y
        if lat["enabled"]:
            qf = q_hist[t0:t0 + S]
            q_tot = qf[:, net.user_node, np.arange(K)] + qf[:, lat_node, :]
            QL = latency_virtual_queue_update(QL, lat["zeta"], q_tot.mean(axis=0), lat["q_avg"])
        QL_hist[f + 1] = QL
    q_hist[T] = qs.count

    theta_hist = np.array(ts.history) if lo_mode == 0 else np.tile(theta0, (F + 1, 1))
    decisions = np.concatenate(dec_chunks) if dec_chunks else np.zeros((0, 5), np.int64)
    values = np.concatenate(val_chunks) if val_chunks else np.zeros((0, 3))
    return RunMetrics(
        name=cfg.name, policy=policy, seed=seed, slots=T, frame=S,
        node_ids=[n.id for n in net.nodes], user_ids=[u.id for u in users],
        model_nodes=net.model_nodes.copy(), quality=net.quality.copy(), target=r, gamma=gamma,
        theta0=theta0, delay=delay, arrival_rate=lam, slot_seconds=float(cfg.slot_seconds),
        energy=slots_out[:, 0].copy(), precision_loss=slots_out[:, 1].copy(),
        predicted_loss=slots_out[:, 2].copy(), n_tx=slots_out[:, 3].astype(np.int64),
        n_dec=slots_out[:, 4].astype(np.int64), theta_star=slots_out[:, 5].copy(),
        objective=slots_out[:, 6].copy(), queues=q_hist, frame_N=frame_N, frame_L=frame_L,
        theta=theta_hist, Z=Z_hist, Y=Y_hist, QL=QL_hist, decisions=decisions,
        decision_values=values, arrivals_total=int(arrivals.sum()),
        extras={"eta": cfg.eta, "V": cfg.V, "energy_weight": cfg.energy_weight,
                "predictor": pred["mode"], "arrivals": arrivals})
