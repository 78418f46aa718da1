"""Task arrivals, synthetic segmentation tasks, prediction sets and losses.

A synthetic task stands in for one image: a rectangular true mask on a small
pixel grid, a clean per-pixel signal ``0.5 +/- a`` and a Gaussian
perturbation. A server of quality ``q`` sees the perturbation shrunk by
``q`` and then sharpened in logit space, so deeper (higher ``q``) servers
are both better separated and more confident. ``q = 1`` reproduces the base
confidence map; ``q = inf`` gives the indicator of the true mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ._jit import njit


class LossKind(IntEnum):
    MISCOVERAGE = 0
    FNR = 1
    SET_SIZE = 2
    FPR = 3
    RELATIVE_FP = 4


RELIABILITY_KINDS = (LossKind.MISCOVERAGE, LossKind.FNR)
PRECISION_KINDS = (LossKind.SET_SIZE, LossKind.FPR, LossKind.RELATIVE_FP)


@dataclass(frozen=True)
class TaskGenConfig:
    grid: tuple = (16, 16)
    contrast: float = 0.2
    noise: float = 0.15
    coverage: tuple = (0.05, 0.40)
    # per-task contrast is drawn from contrast * U(1 - jitter, 1 + jitter)
    contrast_jitter: float = 0.0
    batch: int = 256

    @property
    def n_pixels(self) -> int:
        return int(self.grid[0] * self.grid[1])


# ---------------------------------------------------------------- arrivals

def sample_arrivals(lam, rng: np.random.Generator, n_slots: int | None = None) -> np.ndarray:
    """Independent Bernoulli(lambda_k) arrivals, shape (K,) or (n_slots, K)."""
    lam = np.asarray(lam, dtype=float)
    shape = lam.shape if n_slots is None else (n_slots,) + lam.shape
    return (rng.random(shape) < lam).astype(np.int8)


def switching_rates(n_slots: int, n_users: int, rng: np.random.Generator,
                    levels=(0.4, 0.8), period: int = 100, p_switch: float = 0.5) -> np.ndarray:
    """Per-slot arrival probabilities that may flip between two levels every ``period`` slots."""
    n_blocks = -(-n_slots // period)
    state = rng.integers(0, 2, size=n_users)
    flips = rng.random((n_blocks, n_users)) < p_switch
    flips[0] = False
    states = (state[None, :] + np.cumsum(flips, axis=0)) % 2
    lam = np.asarray(levels, dtype=float)[states]
    return np.repeat(lam, period, axis=0)[:n_slots]


# ---------------------------------------------------------------- task generation

@dataclass
class SyntheticTask:
    mask: np.ndarray          # (H, W) bool, the true object pixels
    signal: np.ndarray        # (H, W) clean confidence 0.5 +/- a
    perturbation: np.ndarray  # (H, W) noise added at quality 1
    slot: int = 0
    owner: int = 0
    du_id: int = -1

    @property
    def base(self) -> np.ndarray:
        return np.clip(self.signal + self.perturbation, 0.0, 1.0)

    @property
    def n_true(self) -> int:
        return int(self.mask.sum())


def _sharpen(p: np.ndarray, q) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.log(p) - np.log1p(-p)
        zq = np.where(z == 0.0, 0.0, z * q)
        return 1.0 / (1.0 + np.exp(-zq))


def server_confidence(signal, perturbation, quality) -> np.ndarray:
    """Confidence map of a server of the given quality (broadcasts over leading axes)."""
    q = np.asarray(quality, dtype=float)
    shrink = np.where(np.isinf(q), 0.0, 1.0 / q)
    p = np.clip(signal + perturbation * shrink, 0.0, 1.0)
    return _sharpen(p, q)


def generate_tasks(rng: np.random.Generator, cfg: TaskGenConfig, n: int) -> dict:
    """Draw ``n`` tasks at once: masks, clean signals and perturbations."""
    h, w = cfg.grid
    if h < 4 or w < 4:
        raise ValueError("task grid must be at least 4x4")
    lo, hi = cfg.coverage
    cover = rng.uniform(lo, hi, size=n)
    aspect = rng.uniform(0.5, 2.0, size=n)
    area = cover * h * w
    mh = np.clip(np.rint(np.sqrt(area * aspect)), 1, h).astype(np.int64)
    mw = np.clip(np.rint(area / mh), 1, w).astype(np.int64)
    r0 = (rng.random(n) * (h - mh + 1)).astype(np.int64)
    c0 = (rng.random(n) * (w - mw + 1)).astype(np.int64)
    rows = np.arange(h)[None, :, None]
    cols = np.arange(w)[None, None, :]
    mask = ((rows >= r0[:, None, None]) & (rows < (r0 + mh)[:, None, None])
            & (cols >= c0[:, None, None]) & (cols < (c0 + mw)[:, None, None]))
    j = cfg.contrast_jitter
    a = np.clip(cfg.contrast * rng.uniform(1.0 - j, 1.0 + j, size=n), 0.0, 0.5)
    signal = 0.5 + a[:, None, None] * np.where(mask, 1.0, -1.0)
    perturbation = cfg.noise * rng.standard_normal((n, h, w))
    return {"mask": mask, "signal": signal, "perturbation": perturbation, "contrast": a}


def generate_task(rng: np.random.Generator, cfg: TaskGenConfig, slot: int = 0,
                  owner: int = 0, du_id: int = -1) -> SyntheticTask:
    b = generate_tasks(rng, cfg, 1)
    return SyntheticTask(mask=b["mask"][0], signal=b["signal"][0],
                         perturbation=b["perturbation"][0], slot=slot, owner=owner, du_id=du_id)


@dataclass
class ServerView:
    task: SyntheticTask
    quality: float
    conf: np.ndarray = field(init=False)

    def __post_init__(self):
        self.conf = server_confidence(self.task.signal, self.task.perturbation, self.quality)


# ---------------------------------------------------------------- sets and losses

def prediction_set(view: ServerView, theta: float) -> np.ndarray:
    """Boolean pixel mask ``{(i, j): p_s(i, j) >= theta}``."""
    return view.conf >= theta


def set_size_loss(set_size: int, universe: int) -> float:
    return set_size / universe


def reliability_loss(view: ServerView, theta: float, kind=LossKind.FNR) -> float:
    y = view.task.mask
    n_true = int(y.sum())
    if n_true == 0:
        raise ValueError("reliability loss needs a non-empty true mask")
    covered = int((prediction_set(view, theta) & y).sum())
    if kind == LossKind.FNR:
        return (n_true - covered) / n_true
    if kind == LossKind.MISCOVERAGE:
        return 1.0 if covered < n_true else 0.0
    raise ValueError(f"{kind!r} is not a reliability loss")


def precision_loss(view: ServerView, theta: float, kind=LossKind.RELATIVE_FP) -> float:
    y = view.task.mask
    c = prediction_set(view, theta)
    n_true = int(y.sum())
    false_pos = int((c & ~y).sum())
    if kind == LossKind.SET_SIZE:
        return set_size_loss(int(c.sum()), y.size)
    if kind == LossKind.FPR:
        n_false = y.size - n_true
        if n_false == 0:
            raise ValueError("FPR needs at least one background pixel")
        return false_pos / n_false
    if kind == LossKind.RELATIVE_FP:
        if n_true == 0:
            raise ValueError("relative false positives need a non-empty true mask")
        return min(false_pos / n_true, 1.0)
    raise ValueError(f"{kind!r} is not a precision loss")


@njit
def _in_set(v, q, theta, tau):
    if np.isinf(q):
        p = 1.0 if v > 0.5 else (0.0 if v < 0.5 else 0.5)
        return p >= theta
    return v >= tau


@njit
def set_cutoff(theta, q):
    """Cutoff on the clipped pre-sharpening value equivalent to ``p_s >= theta``.

    Sharpening is strictly increasing on (0, 1), so the set can be read off the
    unsharpened map without evaluating the logistic per pixel.
    """
    if theta <= 0.0:
        return -np.inf
    if theta > 1.0:
        return np.inf
    if theta == 1.0:
        return 1.0
    z = np.log(theta) - np.log1p(-theta)
    return 1.0 / (1.0 + np.exp(-z / q))


@njit
def du_losses(mask, pert, a, n_true, q, theta, rel_kind, prec_kind):
    """(reliability, precision) loss of one DU decided by a model of quality ``q``."""
    shrink = 0.0 if np.isinf(q) else 1.0 / q
    tau = set_cutoff(theta, q)
    hit = 0
    false_pos = 0
    for i in range(mask.shape[0]):
        m = 0.5 + a if mask[i] else 0.5 - a
        v = m + pert[i] * shrink
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        if _in_set(v, q, theta, tau):
            if mask[i]:
                hit += 1
            else:
                false_pos += 1
    if rel_kind == 0:
        rel = 1.0 if hit < n_true else 0.0
    else:
        rel = (n_true - hit) / n_true
    n_pix = mask.shape[0]
    if prec_kind == 2:
        prec = (hit + false_pos) / n_pix
    elif prec_kind == 3:
        prec = false_pos / (n_pix - n_true)
    else:
        prec = false_pos / n_true
        if prec > 1.0:
            prec = 1.0
    return rel, prec


@njit
def loss_curves(mask, pert, a, n_true, q, thetas, rel_kind, prec_kind, rel_out, prec_out):
    """Losses of tasks ``i`` seen by one model over a threshold grid."""
    for i in range(mask.shape[0]):
        for g in range(thetas.shape[0]):
            r, p = du_losses(mask[i], pert[i], a[i], n_true[i], q, thetas[g], rel_kind, prec_kind)
            rel_out[i, g] = r
            prec_out[i, g] = p


# ---------------------------------------------------------------- in-flight store

class TaskStream:
    """Per-user task supply drawn in fixed-size batches from its own RNG stream."""

    def __init__(self, rng: np.random.Generator, cfg: TaskGenConfig):
        self.rng = rng
        self.cfg = cfg
        self._pos = cfg.batch
        self._batch = None

    def take(self, n: int):
        """Next ``n`` tasks as flat (mask, perturbation, contrast) arrays."""
        masks, perts, conts = [], [], []
        while n > 0:
            if self._pos >= self.cfg.batch:
                b = generate_tasks(self.rng, self.cfg, self.cfg.batch)
                m = self.cfg.batch
                self._batch = (b["mask"].reshape(m, -1), b["perturbation"].reshape(m, -1), b["contrast"])
                self._pos = 0
            j = min(n, self.cfg.batch - self._pos)
            sl = slice(self._pos, self._pos + j)
            masks.append(self._batch[0][sl])
            perts.append(self._batch[1][sl])
            conts.append(self._batch[2][sl])
            self._pos += j
            n -= j
        if not masks:
            p = self.cfg.n_pixels
            return np.zeros((0, p), np.bool_), np.zeros((0, p)), np.zeros(0)
        return np.concatenate(masks), np.concatenate(perts), np.concatenate(conts)


class TaskStore:
    """Ring buffer of the DUs still in the network, indexed by ``du_id % capacity``."""

    def __init__(self, n_pixels: int, capacity: int = 1024):
        self.n_pixels = n_pixels
        self._alloc(capacity)

    def _alloc(self, capacity):
        self.capacity = capacity
        self.mask = np.zeros((capacity, self.n_pixels), dtype=np.bool_)
        self.pert = np.zeros((capacity, self.n_pixels))
        self.contrast = np.zeros(capacity)
        self.n_true = np.ones(capacity, dtype=np.int64)
        self.gen_slot = np.zeros(capacity, dtype=np.int64)
        self.owner = np.zeros(capacity, dtype=np.int64)
        # id of the DU held in each row, -1 when the row is free
        self.live = np.full(capacity, -1, dtype=np.int64)

    def arrays(self):
        return (self.mask, self.pert, self.contrast, self.n_true, self.gen_slot, self.owner, self.live)

    def add_many(self, ids, owner, gen_slot, mask, pert, contrast):
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            return
        while len(ids) > self.capacity or np.any(self.live[ids % self.capacity] >= 0):
            self._grow()
        rows = ids % self.capacity
        self.mask[rows] = mask
        self.pert[rows] = pert
        self.contrast[rows] = contrast
        self.n_true[rows] = mask.sum(axis=1)
        self.gen_slot[rows] = gen_slot
        self.owner[rows] = owner
        self.live[rows] = ids

    def _grow(self):
        old = self.arrays()
        rows = np.flatnonzero(old[6] >= 0)
        ids = old[6][rows]
        self._alloc(self.capacity * 2)
        new = ids % self.capacity
        for dst, src in zip(self.arrays(), old):
            dst[new] = src[rows]
