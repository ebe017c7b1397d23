"""Heterogeneous Graph Transformer layers.

For an edge ``s --e--> t`` and head ``i``::

    score_i = mu[type(s), type(e), type(t)] / sqrt(d) * K_i(s) @ W_att[e] @ Q_i(t)
    attn    = softmax of score_i over the in-edges of t (per head)
    msg_i   = M_i(s) @ W_msg[e]
    h'(t)   = G[type(t)](gelu(sum_s attn * msg)) + h(t)

K, Q, M and G are per node type, W_att and W_msg per edge type, and ``mu``
is a learned prior over meta-relations initialised to ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .hetgraph import HeteroGraph


@dataclass
class GraphIndex:
    """Integer view of a :class:`HeteroGraph` against a fixed type registry."""

    node_type: torch.Tensor  # (N,)
    src: torch.Tensor  # (E,)
    dst: torch.Tensor  # (E,)
    edge_type: torch.Tensor  # (E,)

    @property
    def num_nodes(self) -> int:
        return self.node_type.shape[0]

    @classmethod
    def from_graph(cls, graph: HeteroGraph, node_types: Sequence[str], edge_types: Sequence[str],
                   device=None) -> "GraphIndex":
        n_idx = {t: i for i, t in enumerate(node_types)}
        e_idx = {t: i for i, t in enumerate(edge_types)}
        try:
            nt = [n_idx[t] for t in graph.node_types]
        except KeyError as exc:
            raise KeyError(f"node type {exc.args[0]!r} has no registered parameters") from None
        try:
            et = [e_idx[e] for _, e, _ in graph.edges]
        except KeyError as exc:
            raise KeyError(f"edge type {exc.args[0]!r} has no registered parameters") from None
        src = [s for s, _, _ in graph.edges]
        dst = [t for _, _, t in graph.edges]
        as_long = lambda xs: torch.tensor(xs, dtype=torch.long, device=device)
        return cls(as_long(nt), as_long(src), as_long(dst), as_long(et))


def segment_softmax(scores: torch.Tensor, index: torch.Tensor, num_segments: int) -> torch.Tensor:
    """Softmax of ``scores`` (E, H) within groups of rows sharing ``index``."""
    heads = scores.shape[1]
    expanded = index[:, None].expand(-1, heads)
    peak = scores.new_full((num_segments, heads), float("-inf"))
    peak = peak.scatter_reduce(0, expanded, scores.detach(), reduce="amax", include_self=True)
    ex = torch.exp(scores - peak[index])
    denom = scores.new_zeros((num_segments, heads)).index_add(0, index, ex)
    return ex / denom[index]


class HGTLayer(nn.Module):
    def __init__(self, node_types: Sequence[str], edge_types: Sequence[str], dim: int, num_heads: int = 2,
                 dropout: float = 0.0, bias: bool = True):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} is not divisible by num_heads {num_heads}")
        self.node_types = list(node_types)
        self.edge_types = list(edge_types)
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        nt, et = len(self.node_types), len(self.edge_types)
        self.k_linear = nn.ModuleList(nn.Linear(dim, dim, bias=bias) for _ in range(nt))
        self.q_linear = nn.ModuleList(nn.Linear(dim, dim, bias=bias) for _ in range(nt))
        self.m_linear = nn.ModuleList(nn.Linear(dim, dim, bias=bias) for _ in range(nt))
        self.g_head = nn.ModuleList(nn.Linear(dim, dim, bias=False) for _ in range(nt))
        self.w_att = nn.Parameter(torch.empty(et, num_heads, self.head_dim, self.head_dim))
        self.w_msg = nn.Parameter(torch.empty(et, num_heads, self.head_dim, self.head_dim))
        self.mu = nn.Parameter(torch.ones(nt, et, nt))
        self.dropout = nn.Dropout(dropout)
        nn.init.xavier_uniform_(self.w_att.view(-1, self.head_dim, self.head_dim))
        nn.init.xavier_uniform_(self.w_msg.view(-1, self.head_dim, self.head_dim))

    def _typed(self, mods: nn.ModuleList, h: torch.Tensor, types: torch.Tensor) -> torch.Tensor:
        out = h.new_zeros((h.shape[0], mods[0].out_features))
        for t in torch.unique(types).tolist():
            rows = torch.nonzero(types == t).flatten()
            out = out.index_put((rows,), mods[t](h[rows]))
        return out

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        return x.view(x.shape[0], self.num_heads, self.head_dim)

    def _per_edge_type(self, x: torch.Tensor, weights: torch.Tensor, edge_type: torch.Tensor) -> torch.Tensor:
        """``x[e] @ weights[edge_type[e]]`` for per-head row vectors ``x`` (E, H, dk)."""
        out = torch.zeros_like(x)
        for r in torch.unique(edge_type).tolist():
            rows = torch.nonzero(edge_type == r).flatten()
            out = out.index_put((rows,), torch.einsum("nhd,hde->nhe", x[rows], weights[r]))
        return out

    def mutual_attention(self, h: torch.Tensor, index: GraphIndex) -> torch.Tensor:
        """Per-edge, per-head attention weights (E, H), normalised over each target's in-edges."""
        k = self._heads(self._typed(self.k_linear, h, index.node_type))
        q = self._heads(self._typed(self.q_linear, h, index.node_type))
        k_att = self._per_edge_type(k[index.src], self.w_att, index.edge_type)
        prior = self.mu[index.node_type[index.src], index.edge_type, index.node_type[index.dst]]
        scores = (k_att * q[index.dst]).sum(-1) * prior[:, None] / math.sqrt(self.dim)
        return segment_softmax(scores, index.dst, index.num_nodes)

    def message(self, h: torch.Tensor, index: GraphIndex) -> torch.Tensor:
        """Per-edge, per-head messages (E, H, d / H)."""
        m = self._heads(self._typed(self.m_linear, h, index.node_type))
        return self._per_edge_type(m[index.src], self.w_msg, index.edge_type)

    def aggregate(self, h: torch.Tensor, index: GraphIndex, attention: torch.Tensor,
                  messages: torch.Tensor) -> torch.Tensor:
        weighted = attention[..., None] * messages
        pooled = h.new_zeros((index.num_nodes, self.num_heads, self.head_dim)).index_add(0, index.dst, weighted)
        update = self._typed(self.g_head, F.gelu(pooled.reshape(index.num_nodes, self.dim)), index.node_type)
        return self.dropout(update) + h

    def forward(self, h: torch.Tensor, index: GraphIndex) -> torch.Tensor:
        return self.aggregate(h, index, self.mutual_attention(h, index), self.message(h, index))


class HGT(nn.Module):
    """A stack of :class:`HGTLayer` applied for several refinement iterations.

    With ``share_iterations`` every iteration reuses the same stack.
    """

    def __init__(self, node_types: Sequence[str], edge_types: Sequence[str], dim: int, num_heads: int = 2,
                 num_layers: int = 2, dropout: float = 0.3, iterations: int = 2, share_iterations: bool = True,
                 bias: bool = True):
        super().__init__()
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        self.node_types = list(node_types)
        self.edge_types = list(edge_types)
        self.iterations = iterations
        self.share_iterations = share_iterations
        n_stacks = 1 if share_iterations else iterations
        self.stacks = nn.ModuleList(
            nn.ModuleList(HGTLayer(node_types, edge_types, dim, num_heads, dropout, bias) for _ in range(num_layers))
            for _ in range(n_stacks)
        )

    def index(self, graph: HeteroGraph, device=None) -> GraphIndex:
        return GraphIndex.from_graph(graph, self.node_types, self.edge_types, device)

    def apply_stack(self, h: torch.Tensor, index: GraphIndex, stack: int = 0) -> torch.Tensor:
        for layer in self.stacks[stack]:
            h = layer(h, index)
        return h

    def refine(self, h: torch.Tensor, index: GraphIndex, iterations: int | None = None) -> torch.Tensor:
        iterations = iterations or self.iterations
        for it in range(iterations):
            h = self.apply_stack(h, index, 0 if self.share_iterations else it % len(self.stacks))
        return h

    forward = refine


def combine_residual(span_embeddings: torch.Tensor, node_states: torch.Tensor, entity_nodes: Sequence[int],
                     coefficient: float = 1.0) -> torch.Tensor:
    """``node_states[entity_nodes[i]] + coefficient * span_embeddings[i]``."""
    if coefficient < 0:
        raise ValueError("residual coefficient must be >= 0")
    if len(entity_nodes) != span_embeddings.shape[0]:
        raise ValueError(f"{span_embeddings.shape[0]} spans but {len(entity_nodes)} entity nodes")
    if any(n is None or n < 0 or n >= node_states.shape[0] for n in entity_nodes):
        raise ValueError("a span has no entity node in the graph")
    rows = torch.as_tensor(list(entity_nodes), dtype=torch.long, device=node_states.device)
    return node_states[rows] + coefficient * span_embeddings
