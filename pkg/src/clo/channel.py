"""Rayleigh block fading, Shannon capacity and per-DU link budgets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import Network


class _Infeasible:
    """Sentinel: no power within the cap meets the one-slot delay bound."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Infeasible"

    def __bool__(self):
        return False


Infeasible = _Infeasible()


@dataclass(frozen=True)
class LinkBudget:
    capacity: float
    delay: float
    energy: float
    power: float


def dbm_per_hz_to_w(n0_dbm_hz: float) -> float:
    return 10.0 ** ((n0_dbm_hz - 30.0) / 10.0)


def sample_channels(net: Network, rng: np.random.Generator, n_slots: int | None = None) -> np.ndarray:
    """Linear power gains, ``10^(-PL/10) * Exp(1)`` per edge (and per slot if ``n_slots``)."""
    shape = (net.n_edges,) if n_slots is None else (n_slots, net.n_edges)
    return net.gain_mean * rng.exponential(1.0, size=shape)


def capacity(power, gain, bandwidth, n0):
    """Shannon rate ``B log2(1 + P S / (B N0))`` in bits/s."""
    return bandwidth * np.log2(1.0 + np.asarray(power) * gain / (bandwidth * n0))


def min_power_for_slot(bits, gain, bandwidth, n0, slot, p_cap):
    """Smallest power sending ``bits`` within ``slot`` seconds, or ``Infeasible``."""
    if gain <= 0:
        return Infeasible
    p = (2.0 ** (bits / (slot * bandwidth)) - 1.0) * bandwidth * n0 / gain
    if not math.isfinite(p) or p > p_cap:
        return Infeasible
    return p


def link_energy(power, bits, cap):
    if cap <= 0:
        raise ValueError("link energy needs a positive capacity")
    return power * (bits / cap)


def link_budget(bits, gain, bandwidth, n0, slot, p_cap):
    """Budget of one DU at the minimal feasible power (None if infeasible)."""
    p = min_power_for_slot(bits, gain, bandwidth, n0, slot, p_cap)
    if p is Infeasible:
        return None
    c = float(capacity(p, gain, bandwidth, n0))
    return LinkBudget(capacity=c, delay=bits / c, energy=link_energy(p, bits, c), power=p)
