"""Temporal graphs under the point model: closure, reduction, consistency.

Overlap is read as equality of time points and Before as strict precedence,
so the composition table is::

    Before  o Before  -> Before
    Before  o Overlap -> Before
    Overlap o Before  -> Before
    Overlap o Overlap -> Overlap

together with Overlap symmetry and Before(a, b) <=> After(b, a).  After is
folded into Before (endpoints swapped) when a graph is built.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

from .schema import AFTER, BEFORE, OVERLAP

Node = Hashable
Edge = tuple[Node, str, Node]

# Composition of (first, second) -> implied relation.  Kept as a single table so
# that an interval-aware variant can replace it; the matrix closure below
# implements exactly these four entries.
COMPOSITION = {
    (BEFORE, BEFORE): BEFORE,
    (BEFORE, OVERLAP): BEFORE,
    (OVERLAP, BEFORE): BEFORE,
    (OVERLAP, OVERLAP): OVERLAP,
}


class InconsistentGraphError(ValueError):
    def __init__(self, cycle: list[Node]):
        super().__init__(f"inconsistent temporal graph; cycle through {cycle}")
        self.cycle = cycle


def _precedes(a, b) -> bool:
    try:
        return b < a
    except TypeError:
        return repr(b) < repr(a)


def _sorted_nodes(nodes: Iterable[Node]) -> list[Node]:
    nodes = list(nodes)
    try:
        return sorted(nodes)
    except TypeError:
        return sorted(nodes, key=repr)


def _sorted_edges(edges: Iterable[Edge]) -> list[Edge]:
    edges = list(edges)
    try:
        return sorted(edges)
    except TypeError:
        return sorted(edges, key=repr)


def normalize_edge(head: Node, rtype: str, tail: Node) -> Edge:
    """Fold After into Before and put Overlap endpoints in canonical order."""
    if head == tail:
        raise ValueError(f"self-loop on {head!r}")
    if rtype == AFTER:
        return tail, BEFORE, head
    if rtype == BEFORE:
        return head, BEFORE, tail
    if rtype == OVERLAP:
        return (tail, OVERLAP, head) if _precedes(head, tail) else (head, OVERLAP, tail)
    raise ValueError(f"unknown temporal relation {rtype!r}")


@dataclass(frozen=True)
class TemporalGraph:
    nodes: frozenset = frozenset()
    edges: frozenset = frozenset()
    # Edges that contradicted earlier ones while closing; empty for consistent input.
    conflicts: tuple = field(default=(), compare=False)

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[Node, str, Node]], nodes: Iterable[Node] = ()) -> "TemporalGraph":
        edges = frozenset(normalize_edge(h, r, t) for h, r, t in triples)
        all_nodes = set(nodes)
        for h, _, t in edges:
            all_nodes.update((h, t))
        return cls(frozenset(all_nodes), edges)

    def __len__(self) -> int:
        return len(self.edges)

    def __contains__(self, triple) -> bool:
        return normalize_edge(*triple) in self.edges

    def __le__(self, other: "TemporalGraph") -> bool:
        return self.edges <= other.edges

    def with_edges(self, edges: Iterable[Edge]) -> "TemporalGraph":
        return TemporalGraph(self.nodes, frozenset(edges))

    def to_json(self) -> dict:
        return {
            "nodes": [_jsonable(n) for n in _sorted_nodes(self.nodes)],
            "edges": [[_jsonable(h), r, _jsonable(t)] for h, r, t in _sorted_edges(self.edges)],
            "conflicts": [[_jsonable(h), r, _jsonable(t)] for h, r, t in self.conflicts],
        }

    def to_dot(self, name: str = "temporal") -> str:
        lines = [f'digraph "{name}" {{']
        ids = {n: i for i, n in enumerate(_sorted_nodes(self.nodes))}
        for n, i in ids.items():
            lines.append(f'  n{i} [label="{n}"];')
        for h, r, t in _sorted_edges(self.edges):
            style = 'label="<"' if r == BEFORE else 'label="=", dir=none'
            lines.append(f"  n{ids[h]} -> n{ids[t]} [{style}];")
        lines.append("}")
        return "\n".join(lines)


def _jsonable(x):
    return list(x) if isinstance(x, tuple) else x


class _PointClosure:
    """Incremental closure over boolean precedence/equality matrices."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes
        self.index = {n: i for i, n in enumerate(nodes)}
        n = len(nodes)
        self.before = np.zeros((n, n), dtype=bool)
        self.equal = np.eye(n, dtype=bool)

    def add(self, edge: Edge) -> bool:
        """Add ``edge``; return False (leaving state untouched) if it contradicts the closure."""
        h, r, t = edge
        a, b = self.index[h], self.index[t]
        B, Q = self.before, self.equal
        if r == BEFORE:
            if Q[a, b] or B[b, a]:
                return False
            preds = Q[:, a] | B[:, a]
            succs = Q[b, :] | B[b, :]
            B |= np.outer(preds, succs)
        else:
            if B[a, b] or B[b, a]:
                return False
            cls = Q[a] | Q[b]
            Q |= np.outer(cls, cls)
            preds = B[:, cls].any(axis=1)
            succs = B[cls, :].any(axis=0)
            B |= np.outer(preds, cls) | np.outer(cls, succs) | np.outer(preds, succs)
        return True

    def edges(self) -> set[Edge]:
        out = set()
        for i, j in zip(*np.nonzero(self.before)):
            out.add((self.nodes[i], BEFORE, self.nodes[j]))
        for i, j in zip(*np.nonzero(np.triu(self.equal, k=1))):
            out.add(normalize_edge(self.nodes[i], OVERLAP, self.nodes[j]))
        return out


def temporal_closure(graph: TemporalGraph) -> TemporalGraph:
    """Least fixpoint of ``graph`` under the composition table.

    Edges are added in sorted order; an edge that contradicts the closure of
    the edges before it is skipped and listed in ``conflicts`` of the result.
    """
    state = _PointClosure(_sorted_nodes(graph.nodes))
    conflicts = []
    for edge in _sorted_edges(graph.edges):
        if not state.add(edge):
            conflicts.append(edge)
    return TemporalGraph(graph.nodes, frozenset(state.edges()), tuple(conflicts))


def is_consistent(graph: TemporalGraph) -> bool:
    return not temporal_closure(graph).conflicts


def _adjacency(edges: Iterable[Edge]):
    adj: dict[Node, list[tuple[Node, bool]]] = {}
    for h, r, t in edges:
        strict = r == BEFORE
        adj.setdefault(h, []).append((t, strict))
        if not strict:
            adj.setdefault(t, []).append((h, False))
    return adj


def entails(edges: Iterable[Edge], edge: Edge) -> bool:
    """Whether a consistent edge set implies ``edge`` under the point model."""
    h, r, t = edge
    adj = _adjacency(edges)
    if r == OVERLAP:
        seen, queue = {h}, deque([h])
        while queue:
            u = queue.popleft()
            for v, strict in adj.get(u, ()):
                if not strict and v not in seen:
                    if v == t:
                        return True
                    seen.add(v)
                    queue.append(v)
        return False
    seen_states, queue = {(h, False)}, deque([(h, False)])
    while queue:
        u, used = queue.popleft()
        for v, strict in adj.get(u, ()):
            state = (v, used or strict)
            if state == (t, True):
                return True
            if state not in seen_states:
                seen_states.add(state)
                queue.append(state)
    return False


def _path(adj, src: Node, dst: Node) -> list[Node] | None:
    prev = {src: None}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        if u == dst:
            out = []
            while u is not None:
                out.append(u)
                u = prev[u]
            return out[::-1]
        for v, _ in adj.get(u, ()):
            if v not in prev:
                prev[v] = u
                queue.append(v)
    return None


def _find_cycle(edges: list[Edge], conflict: Edge) -> list[Node]:
    h, _, t = conflict
    adj = _adjacency(edges)
    back = _path(adj, t, h)
    if back is not None:
        return [h] + back
    forward = _path(adj, h, t)
    if forward is not None:
        return forward + [h]
    return [h, t, h]


def temporal_reduction(graph: TemporalGraph) -> TemporalGraph:
    """Remove, in sorted edge order, every edge implied by the edges that remain.

    The result has the same closure as ``graph``.  Raises
    :class:`InconsistentGraphError` when ``graph`` is inconsistent.
    """
    closed = temporal_closure(graph)
    if closed.conflicts:
        conflict = closed.conflicts[0]
        before = [e for e in _sorted_edges(graph.edges) if e != conflict]
        raise InconsistentGraphError(_find_cycle(before, conflict))
    remaining = set(graph.edges)
    for edge in _sorted_edges(graph.edges):
        remaining.discard(edge)
        if not entails(remaining, edge):
            remaining.add(edge)
    return graph.with_edges(remaining)


def scoring_reduction(graph: TemporalGraph) -> TemporalGraph:
    """Reduction used for scoring possibly inconsistent system output.

    The consistent part is reduced as usual; conflicting edges cannot be
    derived from anything and are kept.
    """
    closed = temporal_closure(graph)
    if not closed.conflicts:
        return temporal_reduction(graph)
    consistent = graph.with_edges(graph.edges - set(closed.conflicts))
    return graph.with_edges(temporal_reduction(consistent).edges | set(closed.conflicts))
