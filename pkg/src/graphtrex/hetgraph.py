"""Document-level heterogeneous graph built from span-model predictions.

Three node families share one graph:

* entity nodes, typed by their predicted entity type and initialised with
  the span embedding;
* CONTEXT nodes holding the pooled tokens between two nearby entities;
* WINDOW nodes, one per fixed-length token segment, chained in reading order.

Edge types are strings.  Entity-entity edges use the full
``"HEAD|Rel|TAIL"`` triple.  Structural edges (context, window) can be
mirrored by ``rev:``-prefixed edge types so that information also flows
back towards entity nodes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import torch

from .schema import AFTER, BEFORE, CONTEXT, NO_RELATION, NOT_ENTITY, OVERLAP, TEMPORAL_RELATIONS, WINDOW, Schema, get_schema
from .spantrex import EntityPrediction, RelationPrediction, Span, context_pool

BEFORE_CONTEXT = "BEFORE-CONTEXT"
AFTER_CONTEXT = "AFTER-CONTEXT"
BELONGS_TO = "BELONGS-TO"
TO = "TO"
REVERSE = "rev:"

_FLIP = {BEFORE: AFTER, AFTER: BEFORE, OVERLAP: OVERLAP}


def temporal_edge_type(head_type: str, rtype: str, tail_type: str) -> str:
    return f"{head_type}|{rtype}|{tail_type}"


def node_type_vocabulary(schema: str | Schema) -> list[str]:
    return list(get_schema(schema).entity_types) + [CONTEXT, WINDOW]


def edge_type_vocabulary(schema: str | Schema, reverse: bool = True) -> list[str]:
    """Every edge type a graph over ``schema`` can contain."""
    types = get_schema(schema).entity_types
    out = [temporal_edge_type(h, r, t) for h in types for r in TEMPORAL_RELATIONS for t in types]
    structural = [BEFORE_CONTEXT, AFTER_CONTEXT, BELONGS_TO, TO]
    out += structural
    if reverse:
        out += [REVERSE + s for s in structural]
    return out


@dataclass
class HeteroGraph:
    node_types: list[str] = field(default_factory=list)
    features: list[torch.Tensor] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)  # "entity" | "context" | "window"
    refs: list = field(default_factory=list)
    edges: list[tuple[int, str, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.node_types)

    def add_node(self, node_type: str, feature: torch.Tensor, kind: str, ref) -> int:
        self.node_types.append(node_type)
        self.features.append(feature)
        self.kinds.append(kind)
        self.refs.append(ref)
        return len(self.node_types) - 1

    def add_edge(self, source: int, edge_type: str, target: int) -> None:
        self.edges.append((source, edge_type, target))

    def copy(self) -> "HeteroGraph":
        return HeteroGraph(list(self.node_types), list(self.features), list(self.kinds), list(self.refs), list(self.edges))

    def nodes_of_kind(self, kind: str) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == kind]

    def entity_spans(self) -> dict[int, Span]:
        return {i: self.refs[i][1] for i in self.nodes_of_kind("entity")}

    def meta_relations(self) -> set[tuple[str, str, str]]:
        return {(self.node_types[s], e, self.node_types[t]) for s, e, t in self.edges}

    def entity_edges(self) -> set[tuple[int, str, int]]:
        return {(s, e, t) for s, e, t in self.edges if self.kinds[s] == "entity" and self.kinds[t] == "entity"}

    def validate(self, node_types: Sequence[str] | None = None, edge_types: Sequence[str] | None = None) -> None:
        n = len(self.node_types)
        for s, e, t in self.edges:
            if not (0 <= s < n and 0 <= t < n):
                raise ValueError(f"edge ({s}, {e}, {t}) has a missing endpoint")
            if edge_types is not None and e not in edge_types:
                raise ValueError(f"edge type {e!r} is not registered")
        if node_types is not None:
            unknown = set(self.node_types) - set(node_types)
            if unknown:
                raise ValueError(f"node types {sorted(unknown)} are not registered")

    def to_json(self) -> dict:
        return {
            "nodes": [
                {"id": i, "type": nt, "kind": k, "feature_dim": int(f.shape[-1])}
                for i, (nt, k, f) in enumerate(zip(self.node_types, self.kinds, self.features))
            ],
            "edges": [
                {"source": s, "type": e, "target": t, "meta_relation": [self.node_types[s], e, self.node_types[t]]}
                for s, e, t in self.edges
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def to_dot(self, name: str = "hetero") -> str:
        shapes = {"entity": "ellipse", "context": "box", "window": "doubleoctagon"}
        lines = [f'digraph "{name}" {{']
        for i, (nt, k) in enumerate(zip(self.node_types, self.kinds)):
            label = nt if k != "entity" else f"{nt}\\n{self.refs[i][1].token_start}-{self.refs[i][1].token_end}"
            lines.append(f'  n{i} [label="{label}", shape={shapes[k]}];')
        for s, e, t in self.edges:
            lines.append(f'  n{s} -> n{t} [label="{e}"];')
        lines.append("}")
        return "\n".join(lines)


def build_entity_subgraph(entity_preds: Sequence[EntityPrediction], relation_preds: Sequence[RelationPrediction],
                          tau: float = 0.4, reverse: bool = True) -> HeteroGraph:
    """Entity nodes plus confident temporal edges.

    ``relation_preds`` index into ``entity_preds``.  An edge is added when the
    predicted class is not NO-RELATION and its probability is at least
    ``tau``.  Overlap edges are added in both directions; Before/After edges
    also get their inverse when ``reverse`` is set.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    graph = HeteroGraph()
    node_of: dict[int, int] = {}
    for i, pred in enumerate(entity_preds):
        if pred.etype == NOT_ENTITY:
            continue
        node_of[i] = graph.add_node(pred.etype, pred.embedding, "entity", (i, pred.span))
    for rel in relation_preds:
        if rel.rtype == NO_RELATION or rel.probability < tau:
            continue
        if rel.head not in node_of or rel.tail not in node_of:
            continue
        s, t = node_of[rel.head], node_of[rel.tail]
        hs, ts = graph.node_types[s], graph.node_types[t]
        graph.add_edge(s, temporal_edge_type(hs, rel.rtype, ts), t)
        if rel.rtype == OVERLAP or reverse:
            graph.add_edge(t, temporal_edge_type(ts, _FLIP[rel.rtype], hs), s)
    return graph


def context_pairs(spans: dict[int, Span], d_c: float) -> list[tuple[int, int]]:
    """Entity node pairs (lexical order) whose gap ``start_j - end_i`` lies in ``(1, d_c]``."""
    nodes = sorted(spans, key=lambda n: spans[n])
    out = []
    for a, u in enumerate(nodes):
        for v in nodes[a + 1 :]:
            gap = spans[v].token_start - spans[u].token_end
            if 1 < gap <= d_c:
                out.append((u, v))
    return out


def add_context_nodes(graph: HeteroGraph, rho: torch.Tensor, d_c: float,
                      pairs: Sequence[tuple[int, int]] | None = None, reverse: bool = True) -> HeteroGraph:
    """Add one CONTEXT node per nearby entity pair, fed by BEFORE-/AFTER-CONTEXT edges.

    ``pairs`` are entity node ids; by default all pairs within ``d_c`` tokens.
    Pairs without a strictly-between token never get a context node.
    """
    if d_c < 2:
        raise ValueError(f"d_c must be >= 2, got {d_c}")
    graph = graph.copy()
    spans = graph.entity_spans()
    if pairs is None:
        pairs = context_pairs(spans, d_c)
    else:
        ordered = [(u, v) if spans[u] < spans[v] else (v, u) for u, v in pairs]
        pairs = [(u, v) for u, v in ordered if 1 < spans[v].token_start - spans[u].token_end <= d_c]
    if not pairs:
        return graph
    left = torch.tensor([spans[u].token_end for u, _ in pairs], device=rho.device)
    right = torch.tensor([spans[v].token_start for _, v in pairs], device=rho.device)
    pooled = context_pool(rho, left, right)
    for k, (u, v) in enumerate(pairs):
        c = graph.add_node(CONTEXT, pooled[k], "context", (u, v))
        graph.add_edge(u, BEFORE_CONTEXT, c)
        graph.add_edge(v, AFTER_CONTEXT, c)
        if reverse:
            graph.add_edge(c, REVERSE + BEFORE_CONTEXT, u)
            graph.add_edge(c, REVERSE + AFTER_CONTEXT, v)
    return graph


def window_of(token_index: int, window_length: int) -> int:
    return token_index // window_length


def add_window_nodes(graph: HeteroGraph, window_summaries: torch.Tensor, doc_length: int, window_length: int,
                     token_window: Sequence[int] | None = None, reverse: bool = True) -> HeteroGraph:
    """Add ``ceil(L / L_w)`` WINDOW nodes over disjoint token segments.

    Entities attach to the segment containing their start token.  Segment
    ``k`` takes the summary of the encoding window that owns token
    ``k * L_w`` (``token_window`` maps tokens to encoding windows; without
    it segment ``k`` reads summary ``k``).
    """
    if window_length < 1:
        raise ValueError(f"window_length must be >= 1, got {window_length}")
    graph = graph.copy()
    count = math.ceil(doc_length / window_length) if doc_length > 0 else 0
    ids = []
    for k in range(count):
        first = k * window_length
        src = token_window[first] if token_window is not None else min(k, window_summaries.shape[0] - 1)
        ids.append(graph.add_node(WINDOW, window_summaries[src], "window", k))
    for node, span in graph.entity_spans().items():
        w = ids[window_of(span.token_start, window_length)]
        graph.add_edge(node, BELONGS_TO, w)
        if reverse:
            graph.add_edge(w, REVERSE + BELONGS_TO, node)
    for a, b in zip(ids, ids[1:]):
        graph.add_edge(a, TO, b)
        if reverse:
            graph.add_edge(b, REVERSE + TO, a)
    return graph
