"""Per-subcarrier communication graphs, conflict graphs and scheduling cost.

Adjacency is directed and keyed (transmitter, receiver): ``adj[k, j, i]`` is
True when node ``j`` is heard by node ``i`` on subcarrier ``k``. The
in-neighbourhood of receiver ``i`` is column ``i``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SubcarrierGraphs",
    "ConflictGraph",
    "ColoringResult",
    "edge_masks",
    "build_edge_sets",
    "max_degree",
    "build_conflict_graph",
    "greedy_coloring",
    "exact_coloring",
    "digital_latency",
    "air_latency",
    "write_edge_list",
    "read_edge_list",
    "write_coloring_csv",
]


@dataclass
class SubcarrierGraphs:
    adjacency: np.ndarray  # bool (K, N, N), [k, tx, rx]

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, bool)
        if self.adjacency.ndim == 2:
            self.adjacency = self.adjacency[None]
        K, n, m = self.adjacency.shape
        if n != m:
            raise ValueError("adjacency must be square per subcarrier")
        if np.any(self.adjacency[:, np.arange(n), np.arange(n)]):
            raise ValueError("self-loops are not allowed")

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[1]

    @property
    def num_subcarriers(self) -> int:
        return self.adjacency.shape[0]

    def union(self) -> np.ndarray:
        return self.adjacency.any(axis=0)

    def in_neighbors(self, i: int, k: int | None = None) -> list[int]:
        adj = self.union() if k is None else self.adjacency[k]
        return [int(j) for j in np.flatnonzero(adj[:, i])]


def edge_masks(powers, expected_gains, sigma2: float, gamma_min: float) -> np.ndarray:
    """Vectorised threshold test ``p_jk E|h_jik|^2 / sigma2 >= gamma_min``.

    ``powers`` is (..., N, K) indexed [tx, k]; ``expected_gains`` is
    (..., K, N, N) indexed [k, tx, rx]. Returns bool (..., K, N, N).
    """
    p = np.asarray(powers, float)
    g = np.asarray(expected_gains, float)
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if p.shape[-1] != g.shape[-3] or p.shape[-2] != g.shape[-2] or g.shape[-1] != g.shape[-2]:
        raise ValueError(f"shape mismatch: powers {p.shape} vs gains {g.shape}")
    pk = np.swapaxes(p, -1, -2)[..., :, :, None]  # (..., K, N_tx, 1)
    with np.errstate(invalid="ignore"):
        snr = pk * g / sigma2
    mask = snr >= gamma_min
    n = g.shape[-1]
    mask[..., np.arange(n), np.arange(n)] = False
    return mask


def build_edge_sets(powers, expected_gains, sigma2: float, gamma_min: float) -> SubcarrierGraphs:
    """Edge (i -> j) on subcarrier k iff ``p[i, k] * E|h[i, j, k]|^2 / sigma2 >= gamma_min``.

    ``powers`` is (N, K) and ``expected_gains`` is (N, N, K) as stored in a
    channel tensor at one time step.
    """
    p = np.asarray(powers, float)
    g = np.asarray(expected_gains, float)
    if np.any(p < 0):
        raise ValueError("powers must be non-negative")
    if g.ndim != 3 or p.ndim != 2 or g.shape[:2] != (p.shape[0], p.shape[0]) or g.shape[2] != p.shape[1]:
        raise ValueError(f"shape mismatch: powers {p.shape} vs gains {g.shape}")
    return SubcarrierGraphs(edge_masks(p, np.moveaxis(g, 2, 0), sigma2, gamma_min))


def max_degree(graphs: SubcarrierGraphs | np.ndarray, union: bool = True) -> int:
    """Largest receiver in-neighbourhood, over the union graph or per subcarrier."""
    if not isinstance(graphs, SubcarrierGraphs):
        graphs = SubcarrierGraphs(graphs)
    if union:
        return int(graphs.union().sum(axis=0).max(initial=0))
    return int(graphs.adjacency.sum(axis=1).max(initial=0))


@dataclass
class ConflictGraph:
    num_nodes: int
    edges: frozenset  # of (u, v) with u < v
    receivers: dict  # receiver -> tuple of in-neighbours

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes), bool)
        for u, v in self.edges:
            a[u, v] = a[v, u] = True
        return a

    def neighbors(self) -> list[set[int]]:
        nb = [set() for _ in range(self.num_nodes)]
        for u, v in self.edges:
            nb[u].add(v)
            nb[v].add(u)
        return nb

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)


def build_conflict_graph(graphs: SubcarrierGraphs | np.ndarray) -> ConflictGraph:
    """Connect every pair of distinct transmitters that share a receiver."""
    if not isinstance(graphs, SubcarrierGraphs):
        graphs = SubcarrierGraphs(graphs)
    adj = graphs.union()
    n = adj.shape[0]
    edges = set()
    receivers = {}
    for i in range(n):
        d_i = tuple(int(j) for j in np.flatnonzero(adj[:, i]))
        if d_i:
            receivers[i] = d_i
        for a in range(len(d_i)):
            for b in range(a + 1, len(d_i)):
                edges.add((d_i[a], d_i[b]))
    return ConflictGraph(n, frozenset(edges), receivers)


@dataclass
class ColoringResult:
    color_of: dict
    num_colors: int
    clique_lower_bound: int

    def is_proper(self, cg: ConflictGraph) -> bool:
        return all(self.color_of[u] != self.color_of[v] for u, v in cg.edges)


def _clique_bound(cg: ConflictGraph) -> int:
    return max((len(d) for d in cg.receivers.values()), default=0)


def _order(cg: ConflictGraph, order: str) -> list[int]:
    deg = cg.degrees()
    if order == "largest-first":
        return sorted(range(cg.num_nodes), key=lambda v: (-deg[v], v))
    if order == "degeneracy":
        nb = cg.neighbors()
        remaining = set(range(cg.num_nodes))
        live = {v: len(nb[v]) for v in remaining}
        removed = []
        while remaining:
            v = min(remaining, key=lambda u: (live[u], -deg[u], u))
            removed.append(v)
            remaining.remove(v)
            for u in nb[v] & remaining:
                live[u] -= 1
        return removed[::-1]
    raise ValueError(f"unknown order {order!r}")


def greedy_coloring(cg: ConflictGraph, order: str = "largest-first") -> ColoringResult:
    """First-fit colouring in the given vertex order (ties broken by node id)."""
    nb = cg.neighbors()
    color: dict[int, int] = {}
    for v in _order(cg, order):
        used = {color[u] for u in nb[v] if u in color}
        c = 0
        while c in used:
            c += 1
        color[v] = c
    n_colors = (max(color.values()) + 1) if color else 0
    return ColoringResult(color, n_colors, _clique_bound(cg))


def exact_coloring(cg: ConflictGraph) -> ColoringResult:
    """Minimum colouring by DSATUR branch and bound (fine for a few dozen nodes)."""
    n = cg.num_nodes
    if n == 0:
        return ColoringResult({}, 0, 0)
    nb = [sorted(s) for s in cg.neighbors()]
    greedy = greedy_coloring(cg, "degeneracy")
    best = [greedy.num_colors, dict(greedy.color_of)]
    lower = max(_clique_bound(cg), 1)
    color = [-1] * n

    def pick():
        best_v, best_key = -1, None
        for v in range(n):
            if color[v] >= 0:
                continue
            sat = len({color[u] for u in nb[v] if color[u] >= 0})
            key = (sat, len(nb[v]), -v)
            if best_key is None or key > best_key:
                best_v, best_key = v, key
        return best_v

    def search(colored: int, used: int):
        if best[0] <= lower:
            return
        if colored == n:
            if used < best[0]:
                best[0], best[1] = used, {v: color[v] for v in range(n)}
            return
        v = pick()
        forbidden = {color[u] for u in nb[v] if color[u] >= 0}
        for c in range(min(used + 1, best[0] - 1)):
            if c in forbidden:
                continue
            color[v] = c
            search(colored + 1, max(used, c + 1))
            color[v] = -1

    search(0, 0)
    return ColoringResult(best[1], best[0], _clique_bound(cg))


def digital_latency(delta: int, K: int) -> int:
    """Orthogonal-access lower bound ceil(delta / K) in slots.

    Pass a colour count instead of the max degree to get the slots of the
    schedule that colouring realises.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return math.ceil(delta / K)


def air_latency(*_args) -> int:
    """Over-the-air aggregation completes in one slot for any graph."""
    return 1


def write_edge_list(graphs: SubcarrierGraphs, path) -> Path:
    """One ``k i j`` line per directed edge (transmitter i, receiver j)."""
    path = Path(path)
    K, n, _ = graphs.adjacency.shape
    with open(path, "w") as fh:
        fh.write(f"# subcarriers={K} nodes={n}\n")
        for k, i, j in zip(*np.nonzero(graphs.adjacency)):
            fh.write(f"{k} {i} {j}\n")
    return path


def read_edge_list(path, num_nodes: int | None = None, num_subcarriers: int | None = None) -> SubcarrierGraphs:
    triples = []
    header = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        key, val = tok.split("=", 1)
                        header[key] = int(val)
                continue
            triples.append(tuple(int(v) for v in line.split()))
    arr = np.array(triples, dtype=int).reshape(-1, 3)
    K = num_subcarriers or header.get("subcarriers") or (int(arr[:, 0].max()) + 1 if len(arr) else 1)
    n = num_nodes or header.get("nodes") or (int(arr[:, 1:].max()) + 1 if len(arr) else 0)
    adj = np.zeros((K, n, n), bool)
    adj[arr[:, 0], arr[:, 1], arr[:, 2]] = True
    return SubcarrierGraphs(adj)


def write_coloring_csv(result: ColoringResult, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "color"])
        for v in sorted(result.color_of):
            w.writerow([v, result.color_of[v]])
    return path
