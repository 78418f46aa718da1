"""Batches of runs, certificate reports, trade-off sweeps and output files."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .channel import sample_channels
from .config import ScenarioConfig
from .crc import FrameFeedback, ThresholdState, certificate_series, record_decision, update_thresholds
from .optimizer import SlotProblem, ldpp_diagnostic, solve_exact
from .queueing import QueueState, apply_slot
from .simulation import RunMetrics, run_scenario, stream
from .tasks import TaskStream, du_losses

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- batches

def _one(args):
    cfg, seed, policy = args
    return run_scenario(cfg, seed, policy=policy)


def run_batch(cfg: ScenarioConfig, seeds, policy: str | None = None, workers: int = 1) -> list:
    """One run per seed; results come back in seed order whatever the worker count."""
    jobs = [(cfg, int(s), policy) for s in seeds]
    if workers <= 1 or len(jobs) < 2:
        return [_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, jobs))


# ---------------------------------------------------------------- certificates

@dataclass
class CertificateReport:
    passed: bool
    user_passed: list
    first_failure: list          # frame index per user, -1 if none
    final_mean: np.ndarray
    final_lower: np.ndarray
    final_upper: np.ndarray
    n_active: np.ndarray

    def lines(self, user_ids=None) -> list:
        ids = user_ids or [f"user{k}" for k in range(len(self.user_passed))]
        out = []
        for k, uid in enumerate(ids):
            verdict = "PASS" if self.user_passed[k] else f"FAIL (frame {self.first_failure[k]})"
            out.append(f"{uid}: {verdict}  mean={self.final_mean[k]:.6f} "
                       f"bounds=[{self.final_lower[k]:.6f}, {self.final_upper[k]:.6f}] "
                       f"active={int(self.n_active[k])}")
        return out


def certificate_report(N_hist, L_hist, theta_hist, gamma, theta0, r, d, worst_case=False,
                       slack=1e-9) -> CertificateReport:
    c = certificate_series(N_hist, L_hist, theta_hist, gamma, theta0, r, d, worst_case, slack)
    ok = c["ok"]
    K = ok.shape[1]
    first = [int(np.flatnonzero(~ok[:, k])[0]) if (~ok[:, k]).any() else -1 for k in range(K)]
    return CertificateReport(
        passed=bool(ok.all()), user_passed=[bool(ok[:, k].all()) for k in range(K)],
        first_failure=first, final_mean=c["cum"][-1], final_lower=c["lower"][-1],
        final_upper=c["upper"][-1], n_active=c["n_active"][-1])


def certificate_check(metrics: RunMetrics, ts: ThresholdState | None = None, worst_case=False,
                      slack=1e-9) -> CertificateReport:
    """Running certificate at every frame count; ``ts`` overrides the stored thresholds."""
    theta = np.array(ts.history) if ts is not None else metrics.theta
    return certificate_report(metrics.frame_N, metrics.frame_L, theta, metrics.gamma,
                              metrics.theta0, metrics.target, metrics.delay, worst_case, slack)


def exceeds_upper(metrics: RunMetrics, upper) -> np.ndarray:
    """Per user: final active-frame mean loss above a given upper bound."""
    return metrics.cumulative_loss()[-1] > np.asarray(upper) + 1e-9


# ---------------------------------------------------------------- sweeps

def summarize(runs, window: int | None = None) -> dict:
    w = window or 1000
    e = np.array([m.mean_energy(w) for m in runs])
    p = np.array([m.mean_precision(w) for m in runs])
    fnr = np.array([np.nanmean(m.cumulative_loss()[-1]) for m in runs])
    return {"energy": float(e.mean()), "energy_std": float(e.std()),
            "precision": float(np.nanmean(p)), "precision_std": float(np.nanstd(p)),
            "loss": float(fnr.mean()), "loss_std": float(fnr.std()),
            "share": np.mean([m.decision_share(w) for m in runs], axis=0).tolist()}


def tradeoff_sweep(base: ScenarioConfig, etas, seeds, policies=("clo",), window=None) -> list:
    """One row per (eta, policy): seed means of converged energy and precision."""
    w = window or base.metrics["converge_window"]
    rows = []
    for policy in policies:
        for eta in etas:
            runs = run_batch(base.replace(eta=float(eta)), seeds, policy)
            rows.append({"eta": float(eta), "policy": policy, **summarize(runs, w)})
        viol = frontier_violations([r for r in rows if r["policy"] == policy])
        for a, b in viol:
            log.info("%s: energy falls from eta=%g to eta=%g while precision rises", policy, a, b)
    return rows


def frontier_violations(rows) -> list:
    """Pairs (eta_a, eta_b) where higher precision came with lower energy."""
    pts = sorted(rows, key=lambda r: r["precision"])
    return [(a["eta"], b["eta"]) for a, b in zip(pts, pts[1:]) if b["energy"] < a["energy"]]


def frontier_correlation(rows) -> float:
    return float(spearmanr([r["energy"] for r in rows], [r["precision"] for r in rows])[0])


def precision_at_energy(rows, energy: float) -> float:
    """Best precision reachable within an energy budget, interpolated along the sweep.

    Uses the upper monotone envelope of the (energy, precision) points, so
    a sweep point that spends more energy for less precision is ignored.
    """
    pts = sorted((r["energy"], r["precision"]) for r in rows)
    e = np.array([p[0] for p in pts])
    p = np.maximum.accumulate(np.array([p[1] for p in pts]))
    return float(np.interp(energy, e, p))


def matched_energy(*frontiers) -> float:
    """Midpoint of the energy range every frontier covers (nan if they do not overlap)."""
    lo = max(min(r["energy"] for r in f) for f in frontiers)
    hi = min(max(r["energy"] for r in f) for f in frontiers)
    return 0.5 * (lo + hi) if lo <= hi else math.nan


# ---------------------------------------------------------------- latency

def total_backlog(metrics: RunMetrics, server: str = "S4") -> np.ndarray:
    """(T + 1, K) user queue plus the serving node's queue, per slot."""
    ids = metrics.node_ids
    s = ids.index(server)
    cols = []
    for k, uid in enumerate(metrics.user_ids):
        cols.append(metrics.queues[:, ids.index(uid), k] + metrics.queues[:, s, k])
    return np.stack(cols, axis=1)


def latency_tracking(metrics: RunMetrics, lam, delta: float, q_avg: float | None = None,
                     server: str = "S4", window: int | None = None) -> dict:
    """Little's-law latency D = Q_tot / (lam / delta) per slot and user, in seconds."""
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (len(metrics.user_ids),))
    rate = lam / delta
    q = total_backlog(metrics, server)
    with np.errstate(divide="ignore", invalid="ignore"):
        D = np.where(rate > 0, q / rate, 0.0)
    w = window or 1000
    conv = float(D[-w:].mean())
    out = {"series": D, "converged": conv}
    if q_avg is not None:
        d_avg = float(np.mean(q_avg / rate))
        out.update(D_avg=d_avg, ok=conv <= d_avg)
    return out


# ---------------------------------------------------------------- LDPP check

def ldpp_check(cfg: ScenarioConfig, seed: int = 0, n_slots: int = 1000, halved: bool = True) -> dict:
    """Drive the slot loop in plain Python and evaluate the drift bound each slot.

    Uses the exact solver, oracle precision predictions and CLO threshold
    updates, so with the same seed it retraces :func:`run_scenario`.
    Returns per-slot realized and bound values, energy and decision counts.
    """
    net = cfg.network
    K, S = net.n_users, cfg.frame
    lam = net.user_array("arrival_prob")
    arrivals = (stream(seed, "arrivals").random((n_slots, K)) < lam).astype(np.int64)
    gains = sample_channels(net, stream(seed, "channels"), n_slots)
    tcfg = cfg.task_config
    streams = [TaskStream(stream(seed, "tasks", k), tcfg) for k in range(K)]
    tasks = {}
    ts = ThresholdState(theta0=net.user_array("theta0"), gamma=net.user_array("learning_rate"),
                        target=net.user_array("target"),
                        delay=np.array([u.delay for u in net.users], dtype=np.int64))
    fb = FrameFeedback(K)
    q = QueueState(net.n_nodes, K)
    rel_kind, prec_kind = int(cfg.rel_kind), int(cfg.prec_kind)
    realized = np.zeros(n_slots)
    bound = np.zeros(n_slots)
    energy = np.zeros(n_slots)
    n_dec = np.zeros(n_slots, dtype=np.int64)
    next_id = 0

    def losses(du, j, theta):
        m, p, a = tasks[du]
        return du_losses(m, p, a, int(m.sum()), float(net.quality[j]), float(theta), rel_kind,
                         prec_kind)

    for t in range(n_slots):
        fhat = np.zeros((net.n_nodes, K))
        for n in net.model_nodes:
            j = net.model_slot[n]
            for k in range(K):
                if q.count[n, k]:
                    fhat[n, k] = losses(q.contents(n, k)[0], j, ts.theta[k])[1]
        prob = SlotProblem(net=net, queues=q, gains=gains[t], theta=ts.theta.copy(), V=cfg.V,
                           eta=cfg.eta, fhat=fhat, n0=cfg.n0, slot=cfg.slot_seconds,
                           var_limit=cfg.exact_var_limit, energy_weight=cfg.energy_weight)
        act = solve_exact(prob)
        diag = ldpp_diagnostic(prob, act, arrivals[t], halved=halved)
        realized[t], bound[t] = diag["realized"], diag["bound"]
        energy[t] = sum(prob.edge_power(e, np.flatnonzero(act.R[e])) for e in range(net.n_edges)
                        if act.R[e].any()) * prob.slot
        n_dec[t] = act.n_dec
        ids = np.arange(next_id, next_id + K)
        for k in range(K):
            if arrivals[t, k]:
                m, p, a = streams[k].take(1)
                tasks[int(ids[k])] = (m[0], p[0], float(a[0]))
        next_id += K
        q, decided = apply_slot(q, act, arrivals[t], ids, net, slot=t)
        for node, k, du, _ in decided:
            rel, _ = losses(du, net.model_slot[node], ts.theta[k])
            record_decision(fb, k, rel)
            del tasks[du]
        if (t + 1) % S == 0:
            update_thresholds(ts, fb)
    return {"realized": realized, "bound": bound, "ok": bool(np.all(realized <= bound)),
            "energy": energy, "n_dec": n_dec, "theta": np.array(ts.history)}


# ---------------------------------------------------------------- output files

SLOT_COLUMNS = ("slot", "energy", "precision_loss", "predicted_loss", "n_tx", "n_dec",
                "theta_star", "objective")
FRAME_COLUMNS = ("frame", "user", "N", "Lbar", "theta", "theta_next", "cum_mean", "lower",
                 "upper", "Z", "Y", "QL", "target", "gamma", "theta0", "delay")
DECISION_COLUMNS = ("slot", "user", "node", "du", "gen_slot", "theta", "reliability_loss",
                    "precision_loss")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def run_paths(out_dir, scenario: str, policy: str, seed: int) -> dict:
    base = Path(out_dir) / f"{scenario}_{policy}_seed{seed}"
    return {kind: Path(f"{base}_{kind}.csv") for kind in ("slots", "frames", "decisions")}


def write_run(metrics: RunMetrics, out_dir) -> dict:
    """Slot, frame and decision CSVs of one run; floats are written with repr."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = run_paths(out_dir, metrics.name, metrics.policy, metrics.seed)
    q_names = [f"q_{n}" for n in metrics.node_ids]
    q_tot = metrics.queues[:-1].sum(axis=2)
    _write(paths["slots"], SLOT_COLUMNS + tuple(q_names),
           ([t, metrics.energy[t], metrics.precision_loss[t], metrics.predicted_loss[t],
             metrics.n_tx[t], metrics.n_dec[t], metrics.theta_star[t], metrics.objective[t],
             *q_tot[t]] for t in range(metrics.slots)))
    c = metrics.certificate()
    F, K = metrics.frame_N.shape

    def frame_rows():
        for f in range(F):
            for k in range(K):
                yield (f, metrics.user_ids[k], metrics.frame_N[f, k], metrics.frame_L[f, k],
                       metrics.theta[f, k], metrics.theta[f + 1, k], c["cum"][f, k],
                       c["lower"][f, k], c["upper"][f, k], metrics.Z[f + 1, k],
                       metrics.Y[f + 1, k], metrics.QL[f + 1, k], metrics.target[k],
                       metrics.gamma[k], metrics.theta0[k], metrics.delay[k])

    _write(paths["frames"], FRAME_COLUMNS, frame_rows())
    d, v = metrics.decisions, metrics.decision_values
    _write(paths["decisions"], DECISION_COLUMNS,
           ((d[i, 0], metrics.user_ids[d[i, 1]], metrics.node_ids[d[i, 2]], d[i, 3], d[i, 4],
             v[i, 0], v[i, 1], v[i, 2]) for i in range(len(d))))
    return paths


def read_frames(path) -> dict:
    """Frame CSV back into (F, K) arrays plus per-user parameters."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no frame rows")
    users = list(dict.fromkeys(r["user"] for r in rows))
    K = len(users)
    F = len(rows) // K
    if F * K != len(rows):
        raise ValueError(f"{path}: frame rows do not tile {K} users")
    arr = lambda col, dt=float: np.array([dt(r[col]) for r in rows]).reshape(F, K)  # noqa: E731
    theta = np.vstack([arr("theta")[:1], arr("theta_next")])
    return {"users": users, "N": arr("N", int), "L": arr("Lbar"), "theta": theta,
            "target": arr("target")[0], "gamma": arr("gamma")[0], "theta0": arr("theta0")[0],
            "delay": arr("delay", int)[0]}


def certify_frames(path, worst_case=False) -> CertificateReport:
    d = read_frames(path)
    return certificate_report(d["N"], d["L"], d["theta"], d["gamma"], d["theta0"], d["target"],
                              d["delay"], worst_case=worst_case)


@dataclass
class BatchSummary:
    scenario: str
    policy: str
    seeds: list
    stats: dict
    certificates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "policy": self.policy, "seeds": self.seeds,
                **self.stats, "certificates": self.certificates}


def summarize_batch(runs, window=None) -> BatchSummary:
    cert = {}
    for m in runs:
        if m.policy == "clo":
            cert[str(m.seed)] = "PASS" if certificate_check(m).passed else "FAIL"
    return BatchSummary(scenario=runs[0].name, policy=runs[0].policy,
                        seeds=[m.seed for m in runs], stats=summarize(runs, window),
                        certificates=cert)


def write_summary(path, payload):
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_sweep(path, rows):
    cols = ("eta", "policy", "energy", "energy_std", "precision", "precision_std", "loss", "loss_std")
    _write(Path(path), cols, ([r[c] for c in cols] for r in rows))
    return Path(path)
