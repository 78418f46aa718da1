"""Static network description: nodes, links, limits and degree constants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError

ED = "ed"
SERVER = "server"

DEFAULTS = {
    "path_loss_db": 90.0,
    "bandwidth_hz": 20e6,
    "p_max_w": 3.5,
    "link_cap": 1,
    "server_cap": 1,
    "arrival_prob": 0.5,
    "du_bits": 768 * 1024 * 8,
    "target": 0.15,
    "learning_rate": 0.5,
    "delay": 0,
    "theta0": 0.5,
    "quality": 1.0,
}


@dataclass(frozen=True)
class NodeSpec:
    id: str
    role: str
    p_max: float
    # edge-device fields
    arrival_prob: float = 0.0
    du_bits: float = 0.0
    target: float = 0.0
    learning_rate: float = 0.0
    delay: int = 0
    theta0: float = 0.5
    # server fields
    quality: float = 0.0
    capacity: int = 0

    @property
    def is_server(self) -> bool:
        return self.role == SERVER

    @property
    def has_model(self) -> bool:
        return self.quality > 0 and self.capacity > 0


@dataclass(frozen=True)
class EdgeSpec:
    src: str
    dst: str
    cap: int
    bandwidth: float
    path_loss_db: float


@dataclass(frozen=True, eq=False)
class Network:
    nodes: tuple
    edges: tuple
    index: dict = field(repr=False)
    # flat arrays consumed by the kernels
    src: np.ndarray = field(repr=False)
    dst: np.ndarray = field(repr=False)
    edge_cap: np.ndarray = field(repr=False)
    bandwidth: np.ndarray = field(repr=False)
    gain_mean: np.ndarray = field(repr=False)
    p_max: np.ndarray = field(repr=False)
    is_server: np.ndarray = field(repr=False)
    server_cap: np.ndarray = field(repr=False)
    out_deg: np.ndarray = field(repr=False)
    in_deg: np.ndarray = field(repr=False)
    out_ptr: np.ndarray = field(repr=False)
    out_edges: np.ndarray = field(repr=False)
    in_ptr: np.ndarray = field(repr=False)
    in_edges: np.ndarray = field(repr=False)
    user_node: np.ndarray = field(repr=False)
    server_nodes: np.ndarray = field(repr=False)
    # nodes hosting an inference model (servers plus EDs with a local model)
    model_nodes: np.ndarray = field(repr=False)
    model_slot: np.ndarray = field(repr=False)
    quality: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_users(self) -> int:
        return len(self.user_node)

    @property
    def users(self) -> list:
        return [self.nodes[i] for i in self.user_node]

    @property
    def servers(self) -> list:
        return [self.nodes[i] for i in self.server_nodes]

    @property
    def n_models(self) -> int:
        return len(self.model_nodes)

    def node_id(self, i: int) -> str:
        return self.nodes[i].id

    def edge_index(self, src: str, dst: str) -> int:
        a, b = self.index[src], self.index[dst]
        for e in range(self.out_ptr[a], self.out_ptr[a + 1]):
            if self.dst[self.out_edges[e]] == b:
                return int(self.out_edges[e])
        raise KeyError((src, dst))

    def user_array(self, attr: str) -> np.ndarray:
        return np.array([getattr(n, attr) for n in self.users], dtype=float)

    def relabeled(self, order) -> "Network":
        """The same graph with nodes listed in ``order`` (a permutation of ids)."""
        by_id = {n.id: n for n in self.nodes}
        nodes = [by_id[i] for i in order]
        return _assemble(nodes, list(self.edges))


def _positive(value, path, problems, integer=False):
    try:
        v = int(value) if integer else float(value)
    except (TypeError, ValueError):
        problems.append(f"{path}: expected a number, got {value!r}")
        return None
    if integer and float(value) != v:
        problems.append(f"{path}: expected an integer, got {value!r}")
        return None
    if not v > 0:
        problems.append(f"{path}: must be > 0, got {value!r}")
        return None
    return v


def build_network(spec: dict[str, Any], path: str = "network") -> Network:
    """Validate a ``network`` config section and precompute degree arrays.

    ``spec`` has ``nodes`` (list of mappings with ``id`` and ``role``),
    ``edges`` (``[src, dst]`` pairs or mappings with ``src``/``dst`` and
    optional per-link overrides) and an optional ``defaults`` block.
    Every violation is collected and raised together as a ConfigError.
    """
    problems: list[str] = []
    defaults = dict(DEFAULTS)
    defaults.update(spec.get("defaults") or {})

    nodes: list[NodeSpec] = []
    seen: set[str] = set()
    for i, raw in enumerate(spec.get("nodes") or []):
        p = f"{path}.nodes[{i}]"
        if not isinstance(raw, dict) or "id" not in raw:
            problems.append(f"{p}: node needs an 'id'")
            continue
        nid = str(raw["id"])
        if nid in seen:
            problems.append(f"{p}.id: duplicate id {nid!r}")
            continue
        seen.add(nid)
        p = f"{path}.nodes[{nid}]"
        role = str(raw.get("role", "")).lower()
        if role not in (ED, SERVER):
            problems.append(f"{p}.role: must be 'ed' or 'server', got {raw.get('role')!r}")
            continue
        get = lambda key: raw.get(key, defaults[key])  # noqa: E731
        p_max = _positive(get("p_max_w"), f"{p}.p_max_w", problems)
        if role == ED:
            lam = float(get("arrival_prob"))
            if not 0.0 <= lam <= 1.0:
                problems.append(f"{p}.arrival_prob: must lie in [0, 1], got {lam!r}")
            r = float(get("target"))
            if not 0.0 < r < 1.0:
                problems.append(f"{p}.target: must lie in (0, 1), got {r!r}")
            gamma = _positive(get("learning_rate"), f"{p}.learning_rate", problems)
            bits = _positive(get("du_bits"), f"{p}.du_bits", problems)
            d = get("delay")
            if int(d) != d or int(d) < 0:
                problems.append(f"{p}.delay: must be a non-negative integer, got {d!r}")
            # an ED may also host a (small) local model
            q, cap = 0.0, 0
            if raw.get("quality") is not None:
                q = float(raw["quality"])
                if not q > 0:
                    problems.append(f"{p}.quality: must be > 0, got {q!r}")
                cap = _positive(get("server_cap"), f"{p}.server_cap", problems, integer=True) or 0
            nodes.append(NodeSpec(
                id=nid, role=ED, p_max=p_max or 0.0, arrival_prob=lam,
                du_bits=bits or 0.0, target=r, learning_rate=gamma or 0.0,
                delay=int(d), theta0=float(get("theta0")), quality=q, capacity=cap,
            ))
        else:
            q = float(get("quality"))
            if not q > 0:
                problems.append(f"{p}.quality: must be > 0, got {q!r}")
            cap = _positive(get("server_cap"), f"{p}.server_cap", problems, integer=True)
            nodes.append(NodeSpec(id=nid, role=SERVER, p_max=p_max or 0.0,
                                  quality=q, capacity=cap or 0))

    edges: list[EdgeSpec] = []
    pairs: set[tuple[str, str]] = set()
    for i, raw in enumerate(spec.get("edges") or []):
        p = f"{path}.edges[{i}]"
        if isinstance(raw, dict):
            a, b, extra = raw.get("src"), raw.get("dst"), raw
        elif isinstance(raw, (list, tuple)) and len(raw) == 2:
            (a, b), extra = raw, {}
        else:
            problems.append(f"{p}: expected [src, dst] or a mapping")
            continue
        a, b = str(a), str(b)
        bad = False
        for end, nid in (("src", a), ("dst", b)):
            if nid not in seen:
                problems.append(f"{p}.{end}: dangling endpoint {nid!r}")
                bad = True
        if a == b:
            problems.append(f"{p}: self-loop ({a!r}, {b!r}) not allowed")
            bad = True
        if (a, b) in pairs:
            problems.append(f"{p}: duplicate edge ({a!r}, {b!r})")
            bad = True
        if bad:
            continue
        pairs.add((a, b))
        get = lambda key: extra.get(key, defaults[key])  # noqa: E731
        cap = _positive(get("link_cap"), f"{p}.link_cap", problems, integer=True)
        bw = _positive(get("bandwidth_hz"), f"{p}.bandwidth_hz", problems)
        pl = float(get("path_loss_db"))
        edges.append(EdgeSpec(src=a, dst=b, cap=cap or 0, bandwidth=bw or 0.0, path_loss_db=pl))

    if not nodes and not problems:
        problems.append(f"{path}.nodes: network has no nodes")
    if not any(n.role == ED for n in nodes) and nodes:
        problems.append(f"{path}.nodes: at least one 'ed' node is required")
    if problems:
        raise ConfigError(problems)
    return _assemble(nodes, edges)


def _assemble(nodes: list[NodeSpec], edges: list[EdgeSpec]) -> Network:
    index = {n.id: i for i, n in enumerate(nodes)}
    n_nodes, n_edges = len(nodes), len(edges)
    src = np.array([index[e.src] for e in edges], dtype=np.int64)
    dst = np.array([index[e.dst] for e in edges], dtype=np.int64)

    out_deg = np.bincount(src, minlength=n_nodes).astype(np.int64)
    in_deg = np.bincount(dst, minlength=n_nodes).astype(np.int64)
    out_ptr = np.concatenate([[0], np.cumsum(out_deg)]).astype(np.int64)
    in_ptr = np.concatenate([[0], np.cumsum(in_deg)]).astype(np.int64)
    # stable sort keeps declaration order among a node's links
    out_edges = np.argsort(src, kind="stable").astype(np.int64)
    in_edges = np.argsort(dst, kind="stable").astype(np.int64)

    is_server = np.array([n.is_server for n in nodes], dtype=np.bool_)
    server_nodes = np.flatnonzero(is_server).astype(np.int64)
    model_nodes = np.array([i for i, n in enumerate(nodes) if n.has_model], dtype=np.int64)
    model_slot = np.full(n_nodes, -1, dtype=np.int64)
    model_slot[model_nodes] = np.arange(len(model_nodes))
    return Network(
        nodes=tuple(nodes),
        edges=tuple(edges),
        index=index,
        src=src,
        dst=dst,
        edge_cap=np.array([e.cap for e in edges], dtype=np.int64),
        bandwidth=np.array([e.bandwidth for e in edges], dtype=float),
        gain_mean=np.array([10.0 ** (-e.path_loss_db / 10.0) for e in edges], dtype=float),
        p_max=np.array([n.p_max for n in nodes], dtype=float),
        is_server=is_server,
        server_cap=np.array([n.capacity for n in nodes], dtype=np.int64),
        out_deg=out_deg,
        in_deg=in_deg,
        out_ptr=out_ptr,
        out_edges=out_edges,
        in_ptr=in_ptr,
        in_edges=in_edges,
        user_node=np.flatnonzero(~is_server).astype(np.int64),
        server_nodes=server_nodes,
        model_nodes=model_nodes,
        model_slot=model_slot,
        quality=np.array([nodes[i].quality for i in model_nodes], dtype=float),
    )


def drift_constant(net: Network, n_users: int | None = None) -> float:
    """Constant of the per-slot drift bound: ``N*K + K * sum((d_out^2 + d_in^2) / 2)``."""
    k = net.n_users if n_users is None else n_users
    deg = (net.out_deg.astype(float) ** 2 + net.in_deg.astype(float) ** 2) / 2.0
    return float(net.n_nodes * k + k * deg.sum())
