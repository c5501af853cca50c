"""
Communication digraphs and their robustness.

Agents are numbered 1..n in every public call; the adjacency matrix is stored
0-indexed with entry (i, j) true iff agent i+1 receives from agent j+1.
"""
import logging
import math
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import networkx as nx
import numpy as np

from ..config import settings
from ..errors import InfeasibleRobustnessError, InvalidArgumentError, SizeLimitError

logger = logging.getLogger(__name__)

VertexSet = FrozenSet[int]


class Digraph:
    """Immutable directed communication graph over agents 1..n."""

    __slots__ = ("_adj",)

    def __init__(self, adjacency):
        adj = np.array(adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise InvalidArgumentError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        if np.any(np.diag(adj)):
            loops = [int(i) + 1 for i in np.flatnonzero(np.diag(adj))]
            raise InvalidArgumentError(f"self-loops are not allowed (agents {loops})")
        adj.setflags(write=False)
        self._adj = adj

    # -- construction -------------------------------------------------------

    @classmethod
    def complete(cls, n: int) -> "Digraph":
        if n < 1:
            raise InvalidArgumentError(f"agent count must be positive, got {n}")
        return cls.from_networkx(nx.complete_graph(n, create_using=nx.DiGraph), n)

    @classmethod
    def empty(cls, n: int) -> "Digraph":
        return cls(np.zeros((n, n), dtype=bool))

    @classmethod
    def from_in_neighbors(cls, n: int, in_neighbors: Dict[int, Iterable[int]]) -> "Digraph":
        """Build from a map agent -> in-neighbors (1-indexed)."""
        adj = np.zeros((n, n), dtype=bool)
        for i, sources in in_neighbors.items():
            _check_vertex(n, i)
            for j in sources:
                _check_vertex(n, j)
                adj[i - 1, j - 1] = True
        return cls(adj)

    @classmethod
    def from_networkx(cls, graph: nx.DiGraph, n: Optional[int] = None) -> "Digraph":
        """Convert a networkx digraph.

        Nodes 0..n-1 map to agents 1..n; a networkx edge (u, v) means v receives from u.
        """
        n = graph.number_of_nodes() if n is None else n
        adj = np.zeros((n, n), dtype=bool)
        for u, v in graph.edges():
            adj[v, u] = True
        return cls(adj)

    def to_networkx(self) -> nx.DiGraph:
        """Inverse of from_networkx (edge u -> v for every transmission u to v)."""
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n))
        receivers, senders = np.nonzero(self._adj)
        graph.add_edges_from(zip(senders.tolist(), receivers.tolist()))
        return graph

    def with_edge(self, receiver: int, sender: int) -> "Digraph":
        _check_vertex(self.n, receiver)
        _check_vertex(self.n, sender)
        adj = self._adj.copy()
        adj[receiver - 1, sender - 1] = True
        return Digraph(adj)

    def without_edge(self, receiver: int, sender: int) -> "Digraph":
        _check_vertex(self.n, receiver)
        _check_vertex(self.n, sender)
        adj = self._adj.copy()
        adj[receiver - 1, sender - 1] = False
        return Digraph(adj)

    # -- queries ------------------------------------------------------------

    @property
    def n(self) -> int:
        return self._adj.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        return self._adj

    @property
    def vertices(self) -> range:
        return range(1, self.n + 1)

    def in_neighbors(self, i: int) -> List[int]:
        _check_vertex(self.n, i)
        return [int(j) + 1 for j in np.flatnonzero(self._adj[i - 1])]

    def out_neighbors(self, j: int) -> List[int]:
        _check_vertex(self.n, j)
        return [int(i) + 1 for i in np.flatnonzero(self._adj[:, j - 1])]

    def in_degrees(self) -> np.ndarray:
        return self._adj.sum(axis=1)

    def edges(self) -> List[Tuple[int, int]]:
        """All (receiver, sender) pairs, 1-indexed, row-major."""
        receivers, senders = np.nonzero(self._adj)
        return [(int(i) + 1, int(j) + 1) for i, j in zip(receivers, senders)]

    def degree_matrix(self) -> np.ndarray:
        return np.diag(self.in_degrees().astype(float))

    def laplacian(self) -> np.ndarray:
        return self.degree_matrix() - self._adj.astype(float)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Digraph):
            return NotImplemented
        return self._adj.shape == other._adj.shape and bool(np.array_equal(self._adj, other._adj))

    def __hash__(self) -> int:
        return hash((self.n, self._adj.tobytes()))

    def __repr__(self) -> str:
        return f"Digraph(n={self.n}, edges={int(self._adj.sum())})"


def _check_vertex(n: int, i: int) -> None:
    if isinstance(i, bool) or not isinstance(i, (int, np.integer)) or not 1 <= i <= n:
        raise InvalidArgumentError(f"vertex {i!r} outside 1..{n}")


def vertex_set(g: Digraph, members: Iterable[int], allow_empty: bool = True) -> VertexSet:
    """Validate and freeze a set of 1-indexed agents."""
    out = frozenset(int(m) for m in members)
    for m in out:
        _check_vertex(g.n, m)
    if not allow_empty and not out:
        raise InvalidArgumentError("vertex set must be nonempty")
    return out


def robustness_ceiling(n: int) -> int:
    """No digraph on n agents is (ceil(n/2)+1)-robust."""
    return math.ceil(n / 2)


# ---------------------------------------------------------------------------
# Reachability and robustness


def is_r_reachable(g: Digraph, s: Iterable[int], r: int) -> bool:
    """
    True iff some agent of s has at least r in-neighbors outside s.

    Raises:
        InvalidArgumentError: empty s, out-of-range vertex or negative r
    """
    members = vertex_set(g, s, allow_empty=False)
    if r < 0:
        raise InvalidArgumentError(f"r must be non-negative, got {r}")
    for i in members:
        outside = [j for j in g.in_neighbors(i) if j not in members]
        if len(outside) >= r:
            return True
    return False


def _check_enumerable(g: Digraph, cap: Optional[int]) -> None:
    cap = settings.robustness_cap if cap is None else cap
    if g.n < 2:
        raise InvalidArgumentError(f"robustness needs at least 2 agents, got {g.n}")
    if g.n > cap:
        raise SizeLimitError(f"exact robustness check is limited to {cap} agents, got {g.n}")


def _membership(n: int) -> np.ndarray:
    """Row m-1 lists which agents belong to subset mask m, for m = 1..2^n-1."""
    masks = np.arange(1, 1 << n, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(bool)


def _reachable_subsets(adj: np.ndarray, member: np.ndarray, r: int) -> np.ndarray:
    # outside[m, i] = |N_i \ S_m|
    indeg = adj.sum(axis=1)
    outside = indeg[None, :] - member.astype(np.int64) @ adj.T.astype(np.int64)
    return np.any(member & (outside >= r), axis=1)


def _has_disjoint_unreachable_pair(n: int, reachable: np.ndarray) -> bool:
    full = (1 << n) - 1
    unreachable = np.zeros(1 << n, dtype=bool)
    unreachable[1:] = ~reachable
    # contains[m]: some non-reachable nonempty subset lies inside m
    contains = unreachable.copy()
    for k in range(n):
        view = contains.reshape(-1, 2, 1 << k)
        view[:, 1, :] |= view[:, 0, :]
    masks = np.flatnonzero(unreachable)
    return bool(np.any(contains[full ^ masks]))


def is_r_robust(g: Digraph, r: int, cap: Optional[int] = None) -> bool:
    """
    Exact r-robustness test.

    Every pair of nonempty disjoint vertex sets is covered: all 2^n - 1 subsets
    are classified as r-reachable or not, then a subset-OR transform decides
    whether two disjoint non-reachable subsets exist.

    Args:
        g: digraph with 2 <= n <= cap agents
        r: robustness level
        cap: enumeration cap, defaults to settings.robustness_cap

    Returns:
        True iff g is r-robust
    """
    _check_enumerable(g, cap)
    if r < 0:
        raise InvalidArgumentError(f"r must be non-negative, got {r}")
    if r == 0:
        return True
    if r > 1 and int(g.in_degrees().min()) < r:
        return False
    reachable = _reachable_subsets(g.adjacency, _membership(g.n), r)
    return not _has_disjoint_unreachable_pair(g.n, reachable)


def max_robustness(g: Digraph, cap: Optional[int] = None) -> int:
    """Largest r for which g is r-robust (never above ceil(n/2))."""
    _check_enumerable(g, cap)
    member = _membership(g.n)
    best = 0
    for r in range(1, robustness_ceiling(g.n) + 1):
        if r > 1 and int(g.in_degrees().min()) < r:
            break
        if _has_disjoint_unreachable_pair(g.n, _reachable_subsets(g.adjacency, member, r)):
            break
        best = r
    return best


def is_f_local_attack(g: Digraph, byz: Iterable[int], f: int) -> bool:
    """Every normal agent has at most f Byzantine in-neighbors."""
    members = vertex_set(g, byz)
    if f < 0:
        raise InvalidArgumentError(f"f must be non-negative, got {f}")
    for i in g.vertices:
        if i in members:
            continue
        if sum(1 for j in g.in_neighbors(i) if j in members) > f:
            return False
    return True


def is_f_total_attack(g: Digraph, byz: Iterable[int], f: int) -> bool:
    """At most f Byzantine agents in the whole network."""
    members = vertex_set(g, byz)
    if f < 0:
        raise InvalidArgumentError(f"f must be non-negative, got {f}")
    return len(members) <= f


def generate_r_robust_digraph(
    n: int,
    r: int,
    seed: int,
    base: Optional[Digraph] = None,
    cap: Optional[int] = None,
) -> Digraph:
    """
    Generate a certified r-robust digraph.

    Starts from `base` (the complete digraph by default) and visits its edges in
    a seeded random order, deleting each one whose removal keeps the graph
    r-robust.

    Args:
        n: agent count
        r: required robustness, 1 <= r <= ceil(n/2)
        seed: random seed; equal seeds give equal graphs
        base: starting digraph, must itself be r-robust
        cap: enumeration cap

    Returns:
        Digraph g with is_r_robust(g, r) true
    """
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 agents, got {n}")
    if r < 1:
        raise InvalidArgumentError(f"r must be positive, got {r}")
    if r > robustness_ceiling(n):
        raise InfeasibleRobustnessError(
            f"no graph with {n} agents can be {r}-robust (ceiling is ceil(n/2) = {robustness_ceiling(n)})"
        )
    g = Digraph.complete(n) if base is None else base
    if g.n != n:
        raise InvalidArgumentError(f"base digraph has {g.n} agents, expected {n}")
    if not is_r_robust(g, r, cap):
        raise InfeasibleRobustnessError(f"base digraph is not {r}-robust")

    rng = np.random.default_rng(seed)
    edges = g.edges()
    removed = 0
    for idx in rng.permutation(len(edges)):
        receiver, sender = edges[int(idx)]
        if len(g.in_neighbors(receiver)) <= r:
            continue
        candidate = g.without_edge(receiver, sender)
        if is_r_robust(candidate, r, cap):
            g = candidate
            removed += 1
    logger.debug(f"[Graph] generated {r}-robust digraph n={n} seed={seed}, removed {removed} of {len(edges)} edges")
    return g
