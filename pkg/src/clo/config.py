"""Scenario configuration: YAML parsing, validation and canonical form."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .network import Network, build_network
from .tasks import LossKind, TaskGenConfig

SCHEMA = 1
POLICIES = ("clo", "lo-avg", "lo-outage", "lo-both")

SINGLE_HOP = {
    "defaults": {},
    "nodes": [
        {"id": "ED1", "role": "ed", "quality": 1.0},
        {"id": "ED2", "role": "ed", "quality": 1.0},
        {"id": "ED3", "role": "ed", "quality": 1.0},
        {"id": "S4", "role": "server", "quality": 2.5},
    ],
    "edges": [["ED1", "S4"], ["ED2", "S4"], ["ED3", "S4"]],
}

DEFAULTS = {
    "schema": SCHEMA,
    "name": "single_hop",
    "policy": "clo",
    "slots": 10000,
    "frame": 10,
    "slot_seconds": 0.05,
    "noise_dbm_hz": -174.0,
    "V": 200.0,
    "eta": 0.1,
    "energy_weight": 1.0,
    "seeds": 30,
    "solver": "exact",
    "exact_var_limit": 20,
    "loss": {"reliability": "fnr", "precision": "relative_fp"},
    "tasks": {"grid": [16, 16], "contrast": 0.2, "noise": 0.15, "coverage": [0.05, 0.40],
              "contrast_jitter": 0.5, "batch": 256},
    "predictor": {"mode": "oracle", "bias": 0.0, "std": 0.0},
    "nonstationary": {"enabled": False, "levels": [0.4, 0.8], "period": 100, "p_switch": 0.5},
    "lo": {"beta": 0.5, "xi": 1.0, "l_max": None, "epsilon": 0.32,
           "grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], "calibration_tasks": 2000},
    "latency": {"enabled": False, "q_avg": 4.0, "zeta": 1.0, "server": "S4"},
    "metrics": {"converge_window": 1000, "stability_threshold": 0.01, "store_queues": True},
    "network": SINGLE_HOP,
}

_REL = {"fnr": LossKind.FNR, "miscoverage": LossKind.MISCOVERAGE}
_PREC = {"relative_fp": LossKind.RELATIVE_FP, "fpr": LossKind.FPR, "set_size": LossKind.SET_SIZE}


@dataclass
class ScenarioConfig:
    raw: dict          # canonical, fully expanded mapping
    network: Network

    def __getattr__(self, key):
        raw = self.__dict__.get("raw")
        if raw is not None and key in raw:
            return raw[key]
        raise AttributeError(key)

    @property
    def n_frames(self) -> int:
        return self.raw["slots"] // self.raw["frame"]

    @property
    def task_config(self) -> TaskGenConfig:
        t = self.raw["tasks"]
        return TaskGenConfig(grid=tuple(t["grid"]), contrast=t["contrast"], noise=t["noise"],
                             coverage=tuple(t["coverage"]), contrast_jitter=t["contrast_jitter"],
                             batch=t["batch"])

    @property
    def rel_kind(self) -> LossKind:
        return _REL[self.raw["loss"]["reliability"]]

    @property
    def prec_kind(self) -> LossKind:
        return _PREC[self.raw["loss"]["precision"]]

    @property
    def n0(self) -> float:
        return 10.0 ** ((self.raw["noise_dbm_hz"] - 30.0) / 10.0)

    def replace(self, **changes) -> "ScenarioConfig":
        """A re-validated copy with top-level keys (or dotted ``a.b`` keys) replaced."""
        raw = copy.deepcopy(self.raw)
        for key, value in changes.items():
            parts = key.replace("__", ".").split(".")
            d = raw
            for p in parts[:-1]:
                d = d[p]
            d[parts[-1]] = value
        return validate_config(raw)

    def with_users(self, **fields) -> "ScenarioConfig":
        """Copy with per-user node fields set (a scalar, or one value per user in order)."""
        raw = copy.deepcopy(self.raw)
        eds = [n for n in raw["network"]["nodes"] if n["role"] == "ed"]
        for key, value in fields.items():
            vals = list(value) if isinstance(value, (list, tuple, np.ndarray)) else [value] * len(eds)
            if len(vals) != len(eds):
                raise ConfigError(f"network.nodes: {key} needs {len(eds)} values, got {len(vals)}")
            for node, v in zip(eds, vals):
                node[key] = v.item() if isinstance(v, np.generic) else v
        return validate_config(raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "network":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _expanded_network(net: Network) -> dict:
    nodes = []
    for n in net.nodes:
        d = {"id": n.id, "role": n.role, "p_max_w": n.p_max}
        if n.role == "ed":
            d.update(arrival_prob=n.arrival_prob, du_bits=n.du_bits, target=n.target,
                     learning_rate=n.learning_rate, delay=n.delay, theta0=n.theta0)
        if n.has_model:
            d.update(quality=n.quality, server_cap=n.capacity)
        nodes.append(d)
    edges = [{"src": e.src, "dst": e.dst, "link_cap": e.cap, "bandwidth_hz": e.bandwidth,
              "path_loss_db": e.path_loss_db} for e in net.edges]
    return {"defaults": {}, "nodes": nodes, "edges": edges}


def validate_config(parsed: dict | None) -> ScenarioConfig:
    """Check every field, inject defaults and return the canonical config.

    All violations are collected and raised together as a ConfigError whose
    messages start with the offending section/field path.
    """
    parsed = parsed or {}
    if not isinstance(parsed, dict):
        raise ConfigError("config: top level must be a mapping")
    problems: list[str] = []
    unknown = set(parsed) - set(DEFAULTS) - {"beta"}
    for key in sorted(unknown):
        problems.append(f"{key}: unknown key")
    schema = parsed.get("schema", SCHEMA)
    if schema != SCHEMA:
        problems.append(f"schema: unsupported version {schema!r} (expected {SCHEMA})")
    cfg = _merge(DEFAULTS, {k: v for k, v in parsed.items() if k != "beta"})

    def num(path, lo=None, hi=None, integer=False, lo_open=False):
        sec, _, key = path.rpartition(".")
        d = cfg
        for p in sec.split(".") if sec else []:
            d = d[p]
        v = d[key]
        try:
            x = int(v) if integer else float(v)
            if integer and float(v) != x:
                raise ValueError
        except (TypeError, ValueError):
            problems.append(f"{path}: expected {'an integer' if integer else 'a number'}, got {v!r}")
            return None
        if lo is not None and (x <= lo if lo_open else x < lo):
            problems.append(f"{path}: must be {'>' if lo_open else '>='} {lo}, got {v!r}")
        if hi is not None and x > hi:
            problems.append(f"{path}: must be <= {hi}, got {v!r}")
        d[key] = x
        return x

    if cfg["policy"] not in POLICIES:
        problems.append(f"policy: must be one of {', '.join(POLICIES)}, got {cfg['policy']!r}")
    T = num("slots", 1, integer=True)
    S = num("frame", 1, integer=True)
    if T and S and T % S:
        problems.append(f"slots: T={T} not divisible by S={S} (frame)")
    num("slot_seconds", 0, lo_open=True)
    num("noise_dbm_hz")
    num("V", 0, lo_open=True)
    if "beta" in parsed:
        b = parsed["beta"]
        if not isinstance(b, (int, float)) or not 0 <= b < 1:
            problems.append(f"beta: must lie in [0, 1), got {b!r}")
        else:
            cfg["eta"] = b / (1.0 - b)
            cfg["energy_weight"] = 1.0 - b
    num("eta", 0)
    num("energy_weight", 0, lo_open=True)
    seeds = cfg["seeds"]
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        if seeds < 1:
            problems.append("seeds: need at least one seed")
        cfg["seeds"] = list(range(max(seeds, 0)))
    elif isinstance(seeds, list) and seeds and all(isinstance(s, int) and s >= 0 for s in seeds):
        cfg["seeds"] = list(seeds)
    else:
        problems.append(f"seeds: expected a positive count or a non-empty list of seeds, got {seeds!r}")
    if cfg["solver"] not in ("exact", "greedy"):
        problems.append(f"solver: must be 'exact' or 'greedy', got {cfg['solver']!r}")
    num("exact_var_limit", 1, integer=True)
    if cfg["loss"]["reliability"] not in _REL:
        problems.append(f"loss.reliability: must be one of {sorted(_REL)}")
    if cfg["loss"]["precision"] not in _PREC:
        problems.append(f"loss.precision: must be one of {sorted(_PREC)}")

    t = cfg["tasks"]
    grid = t["grid"]
    if not (isinstance(grid, list) and len(grid) == 2 and all(isinstance(g, int) and g >= 4 for g in grid)):
        problems.append(f"tasks.grid: expected [H, W] with H, W >= 4, got {grid!r}")
    num("tasks.contrast", 0, 0.5)
    num("tasks.noise", 0)
    num("tasks.contrast_jitter", 0, 1)
    num("tasks.batch", 1, integer=True)
    cov = t["coverage"]
    if not (isinstance(cov, list) and len(cov) == 2 and 0 < cov[0] <= cov[1] < 1):
        problems.append(f"tasks.coverage: expected [lo, hi] with 0 < lo <= hi < 1, got {cov!r}")
    else:
        t["coverage"] = [float(c) for c in cov]

    p = cfg["predictor"]
    if p["mode"] not in ("oracle", "noisy", "table"):
        problems.append(f"predictor.mode: must be oracle, noisy or table, got {p['mode']!r}")
    num("predictor.bias")
    num("predictor.std", 0)

    ns = cfg["nonstationary"]
    if not isinstance(ns["enabled"], bool):
        problems.append("nonstationary.enabled: expected true or false")
    lv = ns["levels"]
    if not (isinstance(lv, list) and len(lv) == 2 and all(0 <= float(x) <= 1 for x in lv)):
        problems.append(f"nonstationary.levels: expected two probabilities, got {lv!r}")
    else:
        ns["levels"] = [float(x) for x in lv]
    num("nonstationary.period", 1, integer=True)
    num("nonstationary.p_switch", 0, 1)

    lo = cfg["lo"]
    num("lo.beta", 0, lo_open=True)
    num("lo.xi", 0, lo_open=True)
    if lo["l_max"] is not None:
        num("lo.l_max", 0, 1)
    num("lo.epsilon", 0, 1, lo_open=True)
    num("lo.calibration_tasks", 1, integer=True)
    g = lo["grid"]
    if not (isinstance(g, list) and g and all(isinstance(x, (int, float)) for x in g)):
        problems.append(f"lo.grid: expected a list of thresholds, got {g!r}")
    elif any(b <= a for a, b in zip(g, g[1:])):
        problems.append("lo.grid: threshold grid must be sorted and strictly increasing")
    else:
        lo["grid"] = [float(x) for x in g]

    lat = cfg["latency"]
    if not isinstance(lat["enabled"], bool):
        problems.append("latency.enabled: expected true or false")
    num("latency.q_avg", 0, lo_open=True)
    num("latency.zeta", 0, lo_open=True)

    m = cfg["metrics"]
    num("metrics.converge_window", 1, integer=True)
    num("metrics.stability_threshold", 0, lo_open=True)

    net = None
    try:
        net = build_network(cfg["network"] or {}, path="network")
    except ConfigError as exc:
        problems.extend(exc.problems)
    if net is not None:
        if lat["enabled"] and lat["server"] not in net.index:
            problems.append(f"latency.server: unknown node {lat['server']!r}")
        if cfg["policy"] != "clo" and net.n_models == 0:
            problems.append("network: LO policies need at least one model node")
        cfg["network"] = _expanded_network(net)
    if problems:
        raise ConfigError(problems)
    cfg["schema"] = SCHEMA
    return ScenarioConfig(raw=cfg, network=net)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    text = path.read_text()
    try:
        parsed = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return validate_config(parsed)


def save_config(cfg: ScenarioConfig, path):
    Path(path).write_text(cfg.dump())


def beta_to_eta(beta: float) -> float:
    return math.inf if beta >= 1 else beta / (1.0 - beta)


def eta_to_beta(eta: float) -> float:
    return eta / (1.0 + eta)


def as_array(x, n):
    return np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
