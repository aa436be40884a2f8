"""Known causal DAGs: parent lists, topological order, depths and degrees.

Node ids are 1-based and the reward node is always the last id ``N``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import CycleDetected


@dataclass(frozen=True)
class GraphStats:
    depths: tuple[int, ...]
    in_degrees: tuple[int, ...]
    max_in_degree: int
    max_depth: int

    def depth(self, node: int) -> int:
        return self.depths[node - 1]


@dataclass(frozen=True)
class Dag:
    """A DAG over nodes ``1..node_count`` given by ordered parent lists.

    ``parents[i - 1]`` lists the parents of node ``i``. The topological order is
    computed (and the graph validated) once at construction.
    """

    node_count: int
    parents: tuple[tuple[int, ...], ...]
    _order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        parents = tuple(tuple(int(p) for p in ps) for ps in self.parents)
        object.__setattr__(self, "parents", parents)
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        if len(parents) != self.node_count:
            raise ValueError(
                f"expected {self.node_count} parent lists, got {len(parents)}"
            )
        for i, ps in enumerate(parents, start=1):
            if len(set(ps)) != len(ps):
                raise ValueError(f"duplicate parent in node {i}")
            for p in ps:
                if not 1 <= p <= self.node_count:
                    raise ValueError(f"parent id {p} of node {i} outside [1, {self.node_count}]")
        object.__setattr__(self, "_order", _kahn(self.node_count, parents))

    @property
    def reward_node(self) -> int:
        return self.node_count

    @property
    def order(self) -> tuple[int, ...]:
        return self._order

    def parents_of(self, node: int) -> tuple[int, ...]:
        return self.parents[node - 1]

    def children_of(self, node: int) -> tuple[int, ...]:
        return tuple(i for i in range(1, self.node_count + 1) if node in self.parents[i - 1])

    def ancestors_of(self, node: int) -> frozenset[int]:
        seen: set[int] = set()
        stack = list(self.parents_of(node))
        while stack:
            j = stack.pop()
            if j not in seen:
                seen.add(j)
                stack.extend(self.parents_of(j))
        return frozenset(seen)

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple((p, i) for i in range(1, self.node_count + 1) for p in self.parents[i - 1])

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[Sequence[int]]) -> "Dag":
        parents: list[list[int]] = [[] for _ in range(node_count)]
        for e in edges:
            if len(e) != 2:
                raise ValueError(f"edge {e!r} must be a [from, to] pair")
            src, dst = int(e[0]), int(e[1])
            if not 1 <= dst <= node_count:
                raise ValueError(f"edge target {dst} outside [1, {node_count}]")
            parents[dst - 1].append(src)
        return cls(node_count, tuple(tuple(ps) for ps in parents))


def _kahn(n: int, parents: tuple[tuple[int, ...], ...]) -> tuple[int, ...]:
    indeg = [len(ps) for ps in parents]
    children: list[list[int]] = [[] for _ in range(n)]
    for i, ps in enumerate(parents, start=1):
        for p in ps:
            children[p - 1].append(i)
    heap = [i for i in range(1, n + 1) if indeg[i - 1] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for c in children[u - 1]:
            indeg[c - 1] -= 1
            if indeg[c - 1] == 0:
                heapq.heappush(heap, c)
    if len(order) != n:
        stuck = sorted(i for i in range(1, n + 1) if i not in set(order))
        raise CycleDetected(f"no topological order; nodes on or after a cycle: {stuck}")
    return tuple(order)


def validate_and_order(dag: Dag) -> list[int]:
    """Topological order with ties broken by ascending node id."""
    return list(dag.order)


def compute_stats(dag: Dag) -> GraphStats:
    depths = [0] * dag.node_count
    for i in dag.order:
        ps = dag.parents_of(i)
        depths[i - 1] = 0 if not ps else 1 + max(depths[p - 1] for p in ps)
    in_degrees = tuple(len(ps) for ps in dag.parents)
    return GraphStats(
        depths=tuple(depths),
        in_degrees=in_degrees,
        max_in_degree=max(in_degrees),
        max_depth=max(depths),
    )


def hierarchical_graph(d: int, L: int) -> Dag:
    """``L`` fully connected layers of ``d`` nodes feeding one reward node.

    Layer ``k`` holds nodes ``(k-1)*d + 1 .. k*d``; the reward node is ``d*L + 1``.
    """
    if d < 1 or L < 1:
        raise ValueError("hierarchical graph needs d >= 1 and L >= 1")
    n = d * L + 1
    parents: list[tuple[int, ...]] = []
    for k in range(1, L + 1):
        prev = tuple(range((k - 2) * d + 1, (k - 1) * d + 1)) if k > 1 else ()
        parents.extend([prev] * d)
    parents.append(tuple(range((L - 1) * d + 1, L * d + 1)))
    return Dag(n, tuple(parents))


def layer_of(node: int, d: int, L: int) -> int:
    """Layer index (1..L, or L+1 for the reward node) in a hierarchical graph."""
    if node == d * L + 1:
        return L + 1
    return (node - 1) // d + 1
