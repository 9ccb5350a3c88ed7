"""Measured communication graphs, incidence/Laplacian algebra, and reset trees.

Agents are numbered 1..n with agent 1 acting as the leader. Edges are stored
once per unordered pair {i, j} with i < j, in lexicographic order, together
with the standard deviation of the relative measurement taken across them.
The oriented incidence matrix puts +1 at the lower and -1 at the higher index
of every edge, which pins down a reproducible column layout.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np


class NearSingularBeyondNullspace(ValueError):
    """Second-smallest Laplacian eigenvalue below tolerance (graph effectively disconnected)."""


class ConnectivityRetriesExhausted(RuntimeError):
    """Random graph sampling failed to produce a connected graph within the retry budget."""


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _is_connected(n: int, edges) -> bool:
    uf = _UnionFind(n + 1)
    for i, j in edges:
        uf.union(i, j)
    root = uf.find(1)
    return all(uf.find(v) == root for v in range(2, n + 1))


@dataclass(frozen=True, eq=False)
class MeasuredGraph:
    """Connected undirected graph with one noise level per edge.

    Attributes:
        n: number of agents (vertices are 1..n, leader is 1).
        edges: tuple of (i, j) pairs with 1 <= i < j <= n, lexicographically
            sorted, no duplicates.
        sigma: per-edge measurement standard deviations, aligned with edges.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    sigma: np.ndarray

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 agents, got n={self.n}")
        edges = [(int(i), int(j)) for i, j in self.edges]
        for i, j in edges:
            if not (1 <= i < j <= self.n):
                raise ValueError(f"edge ({i},{j}) violates 1 <= i < j <= n={self.n}")
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        order = sorted(range(len(edges)), key=lambda k: edges[k])
        sigma = np.asarray(self.sigma, dtype=float)[order]
        edges = tuple(edges[k] for k in order)
        if sigma.shape != (len(edges),):
            raise ValueError("sigma must hold one value per edge")
        if np.any(sigma <= 0):
            raise ValueError("every sigma must be positive")
        if not _is_connected(self.n, edges):
            raise ValueError("graph is not connected")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "sigma", sigma)
        self.sigma.setflags(write=False)

    @property
    def m(self) -> int:
        return len(self.edges)

    def edge_index(self) -> dict[tuple[int, int], int]:
        """Map (i, j) with i < j to its column index in the incidence matrix."""
        return {e: k for k, e in enumerate(self.edges)}

    def neighbors(self) -> dict[int, list[int]]:
        """Adjacency lists in ascending vertex order."""
        adj: dict[int, list[int]] = {v: [] for v in range(1, self.n + 1)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        for v in adj:
            adj[v].sort()
        return adj

    def to_json(self, seed: int | None = None) -> str:
        payload = {
            "n": self.n,
            "edges": [[i, j, float(s)] for (i, j), s in zip(self.edges, self.sigma)],
        }
        if seed is not None:
            payload["seed"] = seed
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MeasuredGraph":
        payload = json.loads(text)
        edges = [(int(i), int(j)) for i, j, _ in payload["edges"]]
        sigma = np.array([s for _, _, s in payload["edges"]], dtype=float)
        return cls(n=int(payload["n"]), edges=tuple(edges), sigma=sigma)


def incidence_matrix(g: MeasuredGraph) -> np.ndarray:
    """Oriented n x m incidence matrix: column k has +1 at i, -1 at j for edge k = (i, j)."""
    B = np.zeros((g.n, g.m), dtype=np.int64)
    for k, (i, j) in enumerate(g.edges):
        B[i - 1, k] = 1
        B[j - 1, k] = -1
    return B


def laplacian(B: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Weighted Laplacian L = B diag(1/sigma^2) B^T (symmetric PSD, rows sum to 0)."""
    w = 1.0 / np.asarray(sigma, dtype=float) ** 2
    return (B * w) @ B.T


def pseudoinverse(L: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a connected-graph Laplacian.

    Uses the symmetric eigendecomposition and inverts every eigenvalue above
    rel_tol * lambda_max. For a connected graph exactly one eigenvalue (the
    one for the all-ones vector) falls below the cut.

    Raises:
        NearSingularBeyondNullspace: if the second-smallest eigenvalue is
            below tolerance, which signals a disconnected or ill-conditioned
            graph.
    """
    evals, evecs = np.linalg.eigh(np.asarray(L, dtype=float))
    cut = rel_tol * evals[-1]
    if evals[1] <= cut:
        raise NearSingularBeyondNullspace(
            f"second-smallest eigenvalue {evals[1]:.3e} below tolerance {cut:.3e}"
        )
    inv = np.where(evals > cut, 1.0 / np.where(evals > cut, evals, 1.0), 0.0)
    return (evecs * inv) @ evecs.T


def laplacian_spectrum(L: np.ndarray) -> np.ndarray:
    """Eigenvalues of L in ascending order."""
    return np.linalg.eigvalsh(np.asarray(L, dtype=float))


@dataclass(frozen=True, eq=False)
class ResetTree:
    """Leader-rooted spanning tree with path matrix and height.

    parent maps every follower to its parent node; path_matrix is m x n with
    column i holding the signed edge indicator p_i of the tree path from the
    leader to agent i (B @ p_i = e_1 - e_i, p_1 = 0).
    """

    parent: dict[int, int]
    children: dict[int, tuple[int, ...]]
    depth: dict[int, int]
    height: int
    path_matrix: np.ndarray
    subtree_size: dict[int, int] = field(repr=False, default_factory=dict)

    def path_vector(self, i: int) -> np.ndarray:
        return self.path_matrix[:, i - 1]

    def nodes_by_depth_desc(self) -> list[int]:
        return sorted(self.depth, key=lambda v: (-self.depth[v], v))


def build_reset_tree(g: MeasuredGraph) -> ResetTree:
    """Breadth-first spanning tree rooted at the leader (node 1).

    Neighbors are visited in ascending index order, which makes the tree (and
    therefore the path matrix) reproducible. BFS yields minimal height, which
    minimizes the number of reset steps.
    """
    adj = g.neighbors()
    parent: dict[int, int] = {}
    depth: dict[int, int] = {1: 0}
    order = deque([1])
    while order:
        v = order.popleft()
        for u in adj[v]:
            if u not in depth:
                depth[u] = depth[v] + 1
                parent[u] = v
                order.append(u)

    children: dict[int, list[int]] = {v: [] for v in range(1, g.n + 1)}
    for child, par in parent.items():
        children[par].append(child)
    for v in children:
        children[v].sort()

    idx = g.edge_index()
    P = np.zeros((g.m, g.n), dtype=np.int64)
    for i in range(2, g.n + 1):
        v = i
        while v != 1:
            par = parent[v]
            # hop par -> v traverses edge {par, v}; positive when it follows
            # the stored low-to-high orientation
            if par < v:
                P[idx[(par, v)], i - 1] += 1
            else:
                P[idx[(v, par)], i - 1] -= 1
            v = par

    size = {v: 1 for v in range(1, g.n + 1)}
    for v in sorted(depth, key=lambda u: -depth[u]):
        if v != 1:
            size[parent[v]] += size[v]

    return ResetTree(
        parent=parent,
        children={v: tuple(c) for v, c in children.items()},
        depth=depth,
        height=max(depth.values()),
        path_matrix=P,
        subtree_size=size,
    )


def random_graph(
    n: int,
    p_edge: float,
    rng: np.random.Generator | int,
    sigma_set=(0.1, 0.5, 0.9),
    max_retries: int = 1000,
) -> MeasuredGraph:
    """Erdos-Renyi style graph: each pair {i, j} kept with probability p_edge.

    Edge noise levels are drawn uniformly from sigma_set. Disconnected draws
    are discarded and resampled from scratch so the edge distribution stays
    clean.

    Raises:
        ConnectivityRetriesExhausted: after max_retries disconnected draws.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if not (0 < p_edge <= 1):
        raise ValueError("p_edge must lie in (0, 1]")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    pairs = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    sigma_set = np.asarray(sigma_set, dtype=float)
    for _ in range(max_retries):
        mask = rng.random(len(pairs)) < p_edge
        edges = tuple(p for p, keep in zip(pairs, mask) if keep)
        sigma = sigma_set[rng.integers(0, len(sigma_set), size=len(edges))]
        if len(edges) >= n - 1 and _is_connected(n, edges):
            return MeasuredGraph(n=n, edges=edges, sigma=sigma)
    raise ConnectivityRetriesExhausted(
        f"no connected draw in {max_retries} tries (n={n}, p_edge={p_edge})"
    )


def format_matrix(M: np.ndarray) -> str:
    """Dense row-major decimal text, one row per line."""
    M = np.asarray(M)
    rows = []
    for row in M:
        if np.issubdtype(M.dtype, np.integer):
            rows.append(" ".join(f"{int(v):3d}" for v in row))
        else:
            rows.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(rows)
