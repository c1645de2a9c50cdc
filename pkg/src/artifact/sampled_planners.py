"""Roadmap planners over a finite set of sampled constraint parameters.

``mcr_plan`` finds a start-goal path violating the fewest sampled
constraints. ``btp_plan`` runs a shortest-path search whose edge weights add
``-beta * log p_safe`` to the length, where ``p_safe`` is the fraction of
samples under which the edge is collision-free.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .planning import InfeasiblePlan
from .scenario import STRICT_TOL, ConstraintModel

EXACT_STATE_LIMIT = 2_000_000
DEFAULT_BEAM = 8


class DisconnectedRoadmap(InfeasiblePlan):
    """No start-goal path exists on the usable edges."""


@dataclass
class Roadmap:
    """Undirected roadmap whose vertices live in the constraint space."""

    vertices: np.ndarray
    edges: list
    start: int
    goal: int

    def __post_init__(self):
        self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        n = self.vertices.shape[0]
        clean = []
        for e in self.edges:
            i, j, c = int(e[0]), int(e[1]), float(e[2])
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"edge {e} has invalid endpoints")
            if c < 0:
                raise ValueError(f"edge {e} has negative cost")
            clean.append((i, j, c))
        self.edges = clean
        if not (0 <= self.start < n and 0 <= self.goal < n):
            raise ValueError("start and goal must be vertex ids")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per vertex: ``(neighbor, edge index)`` pairs in edge order."""
        adj = [[] for _ in range(self.n_vertices)]
        for k, (i, j, _) in enumerate(self.edges):
            adj[i].append((j, k))
            adj[j].append((i, k))
        return adj

    def edge_points(self, spacing: float) -> list[np.ndarray]:
        """Points along each edge at ``<= spacing``, endpoints included."""
        out = []
        for i, j, _ in self.edges:
            a, b = self.vertices[i], self.vertices[j]
            n = max(1, int(math.ceil(np.max(np.abs(b - a)) / spacing - 1e-9)))
            s = np.linspace(0.0, 1.0, n + 1)[:, None]
            out.append(a * (1 - s) + b * s)
        return out

    def path_cost(self, path) -> float:
        lookup = {}
        for i, j, c in self.edges:
            key = (min(i, j), max(i, j))
            lookup[key] = min(c, lookup.get(key, math.inf))
        return float(sum(lookup[(min(a, b), max(a, b))] for a, b in zip(path, path[1:])))

    def to_dict(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "edges": [[i, j, c] for i, j, c in self.edges],
            "start": self.start,
            "goal": self.goal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Roadmap":
        unknown = set(d) - {"vertices", "edges", "start", "goal"}
        if unknown:
            raise ValueError(f"unknown roadmap fields {sorted(unknown)}")
        return cls(np.asarray(d["vertices"], dtype=float), list(d["edges"]), int(d["start"]), int(d["goal"]))


def read_roadmap(path) -> Roadmap:
    return Roadmap.from_dict(json.loads(Path(path).read_text()))


def write_roadmap(path, roadmap: Roadmap) -> None:
    Path(path).write_text(json.dumps(roadmap.to_dict(), indent=1) + "\n")


def random_roadmap(n_vertices: int, bounds, seed, k: int = 3) -> Roadmap:
    """Random geometric roadmap: each vertex joins its ``k`` nearest neighbours.

    The chain through vertices in index order is always added so the graph
    is connected; start is vertex 0 and goal the last vertex.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = np.asarray(bounds.lo, dtype=float), np.asarray(bounds.hi, dtype=float)
    v = lo + rng.random((n_vertices, lo.size)) * (hi - lo)
    pairs = set()
    for i in range(n_vertices - 1):
        pairs.add((i, i + 1))
    d = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=2)
    for i in range(n_vertices):
        for j in np.argsort(d[i])[1:k + 1]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    edges = [(i, j, float(d[i, j])) for i, j in sorted(pairs)]
    return Roadmap(v, edges, 0, n_vertices - 1)


def default_spacing(thetas, model: ConstraintModel) -> float:
    """A quarter of the smallest positive obstacle width among the samples."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    widths = []
    for idx in model.obstacle_facets:
        lower = idx[model.facet_sign[idx] > 0]
        upper = idx[model.facet_sign[idx] < 0]
        if len(lower) and len(upper) and len(lower) == len(upper):
            w = thetas[:, model.facet_theta[upper]] - thetas[:, model.facet_theta[lower]]
            widths.append(w[w > 0])
    allw = np.concatenate(widths) if widths else np.array([])
    if allw.size:
        return float(allw.min()) / 4.0
    kb = model.kappa_bounds
    return float(np.max(kb.hi - kb.lo)) / 40.0


def violation_matrix(roadmap: Roadmap, thetas, model: ConstraintModel,
                     spacing: float | None = None) -> np.ndarray:
    """``(n_edges, n_samples)`` flags: is the edge unsafe under each sample?"""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float)).reshape(-1, model.theta_dim)
    out = np.zeros((len(roadmap.edges), thetas.shape[0]), dtype=bool)
    if thetas.shape[0] == 0:
        return out
    spacing = spacing or default_spacing(thetas, model)
    for k, pts in enumerate(roadmap.edge_points(spacing)):
        out[k] = (model.g_many(thetas, pts) > STRICT_TOL).any(axis=1)
    return out


def _walk_back(parent, node):
    path = []
    while node is not None:
        path.append(node[0])
        node = parent[node]
    return path[::-1]


def _mcr_exact(roadmap: Roadmap, masks: list[int]):
    """Label search over (vertex, violated set) ordered by (count, length).

    A walk's violated set is the union over its edges and a simple path
    inside the walk violates a subset, so the optimum is a simple path.
    """
    adj = roadmap.adjacency()
    costs = [c for _, _, c in roadmap.edges]
    start = (roadmap.start, 0)
    best = {start: 0.0}
    parent = {start: None}
    heap = [(0, 0.0, roadmap.start, 0)]
    while heap:
        cnt, length, v, m = heapq.heappop(heap)
        if best.get((v, m), math.inf) < length:
            continue
        if v == roadmap.goal:
            return _walk_back(parent, (v, m)), m
        for w, k in adj[v]:
            m2 = m | masks[k]
            l2 = length + costs[k]
            if l2 < best.get((w, m2), math.inf):
                best[(w, m2)] = l2
                parent[(w, m2)] = (v, m)
                heapq.heappush(heap, (bin(m2).count("1"), l2, w, m2))
    return None


def _mcr_beam(roadmap: Roadmap, masks: list[int], beam: int):
    """Greedy-k search: like the exact search but keeps ``beam`` labels per vertex."""
    adj = roadmap.adjacency()
    costs = [c for _, _, c in roadmap.edges]
    kept = {roadmap.start: 1}
    parent = {(roadmap.start, 0): None}
    best = {(roadmap.start, 0): 0.0}
    heap = [(0, 0.0, roadmap.start, 0)]
    while heap:
        cnt, length, v, m = heapq.heappop(heap)
        if best.get((v, m), math.inf) < length:
            continue
        if v == roadmap.goal:
            return _walk_back(parent, (v, m)), m
        for w, k in adj[v]:
            m2 = m | masks[k]
            l2 = length + costs[k]
            if l2 < best.get((w, m2), math.inf):
                if (w, m2) not in best:
                    if kept.get(w, 0) >= beam:
                        continue
                    kept[w] = kept.get(w, 0) + 1
                best[(w, m2)] = l2
                parent[(w, m2)] = (v, m)
                heapq.heappush(heap, (bin(m2).count("1"), l2, w, m2))
    return None


def mcr_plan(roadmap: Roadmap, thetas, model: ConstraintModel, spacing: float | None = None,
             beam: int = DEFAULT_BEAM, exact: bool | None = None):
    """Path violating the fewest sampled constraints; ties go to the shorter path.

    Exact whenever ``n_vertices * 2**n_samples`` stays below a state budget
    (always for 12 or fewer vertices with up to 16 samples); otherwise a
    beam-limited label search.

    Returns
    -------
    path : list of int
    violated : list of int
        Sample indices the path violates.
    """
    V = violation_matrix(roadmap, thetas, model, spacing)
    masks = [int(sum(1 << i for i in np.flatnonzero(row))) for row in V]
    n_samples = V.shape[1]
    if exact is None:
        exact = roadmap.n_vertices * (2 ** n_samples) <= EXACT_STATE_LIMIT
    found = _mcr_exact(roadmap, masks) if exact else _mcr_beam(roadmap, masks, beam)
    if found is None:
        raise DisconnectedRoadmap("start and goal are not connected")
    path, m = found
    return path, [i for i in range(n_samples) if m >> i & 1]


@dataclass
class EdgeBeliefs:
    p_safe: np.ndarray

    def __post_init__(self):
        self.p_safe = np.asarray(self.p_safe, dtype=float)
        if np.any((self.p_safe < 0) | (self.p_safe > 1)):
            raise ValueError("edge safety probabilities must lie in [0, 1]")


def estimate_edge_safety(roadmap: Roadmap, thetas, model: ConstraintModel,
                         spacing: float | None = None) -> EdgeBeliefs:
    """Fraction of samples under which each edge is collision-free."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[0] < 1:
        raise ValueError("at least one sample is required")
    V = violation_matrix(roadmap, thetas, model, spacing)
    return EdgeBeliefs(1.0 - V.mean(axis=1))


def btp_weights(roadmap: Roadmap, beliefs: EdgeBeliefs, beta: float, linear: bool = False) -> np.ndarray:
    """Edge weights; ``inf`` marks edges that are never safe.

    The log form adds ``-beta * log p``. The linear form adds
    ``beta * (1 - p)``, a shift of ``-beta * p`` that keeps weights
    nonnegative.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    c = np.array([e[2] for e in roadmap.edges], dtype=float)
    p = beliefs.p_safe
    if p.shape != c.shape:
        raise ValueError("edge beliefs must align with roadmap edges")
    w = np.full_like(c, np.inf)
    ok = p > 0
    if linear:
        w[ok] = c[ok] + beta * (1.0 - p[ok])
    else:
        w[ok] = c[ok] - beta * np.log(p[ok])
    return w


def btp_plan(roadmap: Roadmap, beliefs: EdgeBeliefs, beta: float, linear: bool = False) -> list[int]:
    """Minimum total weight start-goal path (Dijkstra; weights are nonnegative)."""
    w = btp_weights(roadmap, beliefs, beta, linear)
    adj = roadmap.adjacency()
    dist = [math.inf] * roadmap.n_vertices
    parent = [None] * roadmap.n_vertices
    dist[roadmap.start] = 0.0
    heap = [(0.0, roadmap.start)]
    done = [False] * roadmap.n_vertices
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        if v == roadmap.goal:
            break
        for u, k in adj[v]:
            if not np.isfinite(w[k]):
                continue
            nd = d + w[k]
            if nd < dist[u]:
                dist[u] = nd
                parent[u] = v
                heapq.heappush(heap, (nd, u))
    if not np.isfinite(dist[roadmap.goal]):
        raise DisconnectedRoadmap("no start-goal path with positive safety probability")
    path = [roadmap.goal]
    while path[-1] != roadmap.start:
        path.append(parent[path[-1]])
    return path[::-1]


def path_weight(roadmap: Roadmap, path, beliefs: EdgeBeliefs, beta: float, linear: bool = False) -> float:
    """Total weight of ``path`` using the cheapest edge between consecutive vertices."""
    w = btp_weights(roadmap, beliefs, beta, linear)
    total = 0.0
    for a, b in zip(path, path[1:]):
        cand = [w[k] for k, (i, j, _) in enumerate(roadmap.edges) if {i, j} == {a, b}]
        total += min(cand)
    return total
