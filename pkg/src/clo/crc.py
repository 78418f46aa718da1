"""Online conformal risk control: frame feedback, threshold updates, certificates.

Summing the threshold recursion over the applied updates gives, for the
average frame loss over the F frames with at least one decision,

    mean(L) = r + (theta_0 - theta_F) / (gamma F)

up to the at most ``d`` frames whose feedback has not been applied yet.
The certificate below bounds ``theta_F`` by the smallest and largest
thresholds seen, so it holds on every realization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


class FrameFeedback:
    """Decision count and running mean loss of the current frame, plus history."""

    def __init__(self, n_users: int):
        self.N = np.zeros(n_users, dtype=np.int64)
        self.Lbar = np.zeros(n_users)
        self.history_N: list[np.ndarray] = []
        self.history_L: list[np.ndarray] = []

    def close_frame(self):
        self.history_N.append(self.N.copy())
        self.history_L.append(self.Lbar.copy())
        self.N[:] = 0
        self.Lbar[:] = 0.0

    def lagged(self, f: int, d: np.ndarray):
        """(N, Lbar) of frame ``f - d_k`` per user; N = 0 where that frame does not exist."""
        n_users = len(self.N)
        N = np.zeros(n_users, dtype=np.int64)
        L = np.zeros(n_users)
        for k in range(n_users):
            j = f - int(d[k])
            if 0 <= j < len(self.history_N):
                N[k] = self.history_N[j][k]
                L[k] = self.history_L[j][k]
        return N, L


def record_decision(fb: FrameFeedback, k: int, loss: float) -> FrameFeedback:
    if not 0.0 <= loss <= 1.0:
        raise ContractViolation(f"loss {loss!r} outside [0, 1]")
    n = fb.N[k]
    fb.Lbar[k] = (n / (n + 1.0)) * fb.Lbar[k] + loss / (n + 1.0)
    fb.N[k] = n + 1
    return fb


@dataclass
class ThresholdState:
    theta0: np.ndarray
    gamma: np.ndarray
    target: np.ndarray
    delay: np.ndarray
    theta: np.ndarray = field(init=False)
    frame: int = field(init=False, default=0)
    history: list = field(init=False, repr=False)

    def __post_init__(self):
        self.theta0 = np.asarray(self.theta0, dtype=float)
        n = len(self.theta0)
        self.gamma = np.broadcast_to(np.asarray(self.gamma, dtype=float), (n,)).copy()
        self.target = np.broadcast_to(np.asarray(self.target, dtype=float), (n,)).copy()
        self.delay = np.broadcast_to(np.asarray(self.delay, dtype=np.int64), (n,)).copy()
        if np.any(self.gamma <= 0):
            raise ValueError("learning rates must be > 0")
        self.theta = self.theta0.copy()
        self.history = [self.theta.copy()]
        self.theta_min = self.theta.copy()
        self.theta_max = self.theta.copy()

    @property
    def m_post(self) -> np.ndarray:
        return self.theta_min + self.gamma

    @property
    def M_post(self) -> np.ndarray:
        return self.theta_max - self.gamma


def update_thresholds(ts: ThresholdState, fb: FrameFeedback) -> ThresholdState:
    """Close the current frame and apply the (delayed) threshold step."""
    fb.close_frame()
    N, L = fb.lagged(ts.frame, ts.delay)
    active = N > 0
    ts.theta = ts.theta + ts.gamma * active * (ts.target - L)
    ts.frame += 1
    ts.history.append(ts.theta.copy())
    np.minimum(ts.theta_min, ts.theta, out=ts.theta_min)
    np.maximum(ts.theta_max, ts.theta, out=ts.theta_max)
    return ts


def reliability_bounds(F, gamma, theta0, r, d, m, M):
    """Certificate ``(lower, upper)`` on the mean loss over F active frames.

    ``m`` is the smallest threshold seen plus ``gamma`` and ``M`` the largest
    minus ``gamma``; ``m = 0, M = 1`` gives the worst case for thresholds that
    stay within [-gamma, 1 + gamma].
    """
    F = np.asarray(F, dtype=float)
    upper = r + (theta0 - m + gamma) / (gamma * F) + d * (1.0 - r) / F
    lower = r - r * d / F - (M + gamma - theta0) / (gamma * F)
    return lower, upper


def certificate_series(N_hist, L_hist, theta_hist, gamma, theta0, r, d, worst_case=False,
                       slack=1e-9):
    """Running certificate per frame and user.

    ``N_hist``/``L_hist`` are (F, K) frame histories and ``theta_hist`` the
    (F + 1, K) thresholds. Returns a dict of (F, K) arrays: the active-frame
    cumulative mean, both bounds and a pass flag (True where no frame is
    active yet).
    """
    N_hist = np.asarray(N_hist)
    L_hist = np.asarray(L_hist, dtype=float)
    th = np.asarray(theta_hist, dtype=float)
    active = N_hist > 0
    n_active = np.cumsum(active, axis=0)
    sums = np.cumsum(np.where(active, L_hist, 0.0), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.where(n_active > 0, sums / np.maximum(n_active, 1), np.nan)
    if worst_case:
        m = np.zeros(th.shape[1])
        M = np.ones(th.shape[1])
    else:
        m = th.min(axis=0) + gamma
        M = th.max(axis=0) - gamma
    Fa = np.maximum(n_active, 1)
    lower, upper = reliability_bounds(Fa, gamma, theta0, r, d, m, M)
    ok = (n_active == 0) | ((cum >= lower - slack) & (cum <= upper + slack))
    return {"cum": cum, "lower": lower, "upper": upper, "ok": ok, "n_active": n_active,
            "all_frames_mean": np.cumsum(L_hist, axis=0) / np.arange(1, len(L_hist) + 1)[:, None]}
