"""Span-based joint entity and temporal-relation extraction.

Spans up to ``k_max`` tokens are embedded from their boundary token vectors
and a width embedding, classified into entity types (or NOT-ENTITY), and
every pair of predicted entities is classified into Before/After/Overlap or
NO-RELATION from a pair vector::

    [e_i; e_j; e_i * e_j; type(i); type(j); maxpool(tokens strictly between)]

Pairs are always taken in lexical order; direction is carried by the label.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import Document
from .schema import (
    INVERSE,
    NO_RELATION,
    NOT_ENTITY,
    RELATION_CLASSES,
    Schema,
    get_schema,
)


@dataclass(frozen=True, order=True)
class Span:
    token_start: int
    token_end: int  # inclusive

    @property
    def width(self) -> int:
        return self.token_end - self.token_start + 1

    def overlaps(self, other: "Span") -> bool:
        return self.token_start <= other.token_end and other.token_start <= self.token_end


def enumerate_spans(token_count: int, k_max: int = 7) -> list[Span]:
    """All contiguous spans of width ``1..k_max``, ordered by start then width."""
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    return [
        Span(s, s + w - 1)
        for s in range(token_count)
        for w in range(1, min(k_max, token_count - s) + 1)
    ]


def span_count(token_count: int, k_max: int) -> int:
    """Closed form for ``len(enumerate_spans(n, k))``."""
    k = min(k_max, token_count)
    return token_count * k - k * (k - 1) // 2


def argmax_first(probs: torch.Tensor) -> torch.Tensor:
    """Row-wise argmax that breaks ties towards the lowest class index."""
    p = probs.detach().cpu().numpy()
    return torch.as_tensor(np.argmax(p, axis=-1), device=probs.device)


# ---------------------------------------------------------------------------
# modules


class SpanEmbedder(nn.Module):
    """``e_sp = FFNN([rho_start; rho_end; width_embedding])``."""

    def __init__(self, token_dim: int, span_dim: int, k_max: int = 7, width_dim: int = 7,
                 num_layers: int = 1, dropout: float = 0.0):
        super().__init__()
        self.k_max = k_max
        self.width_embedding = nn.Embedding(k_max, width_dim)
        in_dim = 2 * token_dim + width_dim
        if num_layers == 1:
            self.ffnn = nn.Sequential(nn.Linear(in_dim, span_dim), nn.Dropout(dropout))
        else:
            self.ffnn = nn.Sequential(
                nn.Linear(in_dim, span_dim), nn.ReLU(), nn.Dropout(dropout), nn.Linear(span_dim, span_dim)
            )
        self.span_dim = span_dim

    def forward(self, rho: torch.Tensor, starts: torch.Tensor, ends: torch.Tensor) -> torch.Tensor:
        widths = ends - starts + 1
        if widths.numel() and (int(widths.min()) < 1 or int(widths.max()) > self.k_max):
            raise ValueError(f"span widths must lie in 1..{self.k_max}")
        feats = torch.cat([rho[starts], rho[ends], self.width_embedding(widths - 1)], dim=-1)
        return self.ffnn(feats)


def embed_span(span: Span, rho: torch.Tensor, embedder: SpanEmbedder) -> torch.Tensor:
    starts = torch.tensor([span.token_start], device=rho.device)
    ends = torch.tensor([span.token_end], device=rho.device)
    return embedder(rho, starts, ends)[0]


class FeedForwardDecoder(nn.Module):
    """Two linear layers with ReLU, followed by dropout on the hidden layer."""

    def __init__(self, in_dim: int, hidden: int, num_classes: int, dropout: float = 0.35):
        super().__init__()
        self.net = nn.Sequential(
            nn.Dropout(dropout),
            nn.Linear(in_dim, hidden),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, num_classes),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


# ---------------------------------------------------------------------------
# entities


@dataclass
class EntityPrediction:
    span: Span
    etype: str
    type_distribution: np.ndarray
    embedding: torch.Tensor | None = field(default=None, repr=False, compare=False)

    @property
    def score(self) -> float:
        return float(self.type_distribution.max())


def classify_entities(embeddings: torch.Tensor, decoder: nn.Module, schema: str | Schema,
                      spans: Sequence[Span] | None = None) -> list[EntityPrediction]:
    """Softmax entity decoding; one prediction per input row."""
    schema = get_schema(schema)
    classes = schema.entity_classes
    probs = F.softmax(decoder(embeddings), dim=-1)
    labels = argmax_first(probs)
    dist = probs.detach().cpu().numpy()
    spans = spans if spans is not None else [Span(-1, -1)] * len(dist)
    return [
        EntityPrediction(sp, classes[int(k)], dist[i], embeddings[i])
        for i, (sp, k) in enumerate(zip(spans, labels.tolist()))
    ]


def select_entities(spans: Sequence[Span], probs: torch.Tensor) -> list[int]:
    """Indices of spans predicted as entities, with overlaps removed greedily by score.

    Returned in lexical order.
    """
    labels = argmax_first(probs).tolist()
    scores = probs.detach().max(dim=-1).values.tolist()
    cand = [i for i, k in enumerate(labels) if k != 0]
    cand.sort(key=lambda i: (-scores[i], spans[i]))
    kept: list[int] = []
    for i in cand:
        if not any(spans[i].overlaps(spans[j]) for j in kept):
            kept.append(i)
    return sorted(kept, key=lambda i: spans[i])


def entity_targets(spans: Sequence[Span], doc: Document, schema: str | Schema) -> torch.Tensor:
    classes = get_schema(schema).entity_classes
    index = {c: i for i, c in enumerate(classes)}
    gold = {(e.token_start, e.token_end): index[e.etype] for e in doc.gold_entities if e.etype in index}
    return torch.tensor([gold.get((s.token_start, s.token_end), 0) for s in spans], dtype=torch.long)


def postprocess_predictions(preds: Iterable[EntityPrediction], schema: str | Schema) -> list[EntityPrediction]:
    """Append a co-located DATE for every ADMISSION/DISCHARGE prediction (I2B2 only)."""
    schema = get_schema(schema)
    preds = list(preds)
    if not schema.sectime_date:
        return preds
    out = list(preds)
    for p in preds:
        if p.etype in ("ADMISSION", "DISCHARGE"):
            out.append(EntityPrediction(p.span, "DATE", p.type_distribution, p.embedding))
    return out


# ---------------------------------------------------------------------------
# pairs


def context_pool(rho: torch.Tensor, left_ends: torch.Tensor, right_starts: torch.Tensor) -> torch.Tensor:
    """Max-pool ``rho[k]`` for ``left_end < k < right_start``; zero rows where nothing lies between.

    Uses a sparse table so every query costs two gathers regardless of its length.
    """
    num, dim = left_ends.shape[0], rho.shape[-1]
    out = rho.new_zeros((num, dim))
    if num == 0:
        return out
    lo = left_ends + 1
    hi = right_starts - 1
    length = hi - lo + 1
    valid = length > 0
    if not bool(valid.any()):
        return out
    levels = [rho]
    max_len = int(length.max())
    step = 1
    while 2 * step <= max_len:
        prev = levels[-1]
        levels.append(torch.maximum(prev[:-step], prev[step:]))
        step *= 2
    level_of = torch.zeros_like(length)
    level_of[valid] = torch.floor(torch.log2(length[valid].double())).long()
    rows = []
    idx = []
    for j in torch.unique(level_of[valid]).tolist():
        sel = torch.nonzero(valid & (level_of == j)).flatten()
        table = levels[j]
        a = table[lo[sel]]
        b = table[hi[sel] - (1 << j) + 1]
        rows.append(torch.maximum(a, b))
        idx.append(sel)
    idx = torch.cat(idx)
    return out.index_put((idx,), torch.cat(rows))


def pair_features(span_emb: torch.Tensor, type_emb: torch.Tensor, ctx: torch.Tensor,
                  heads: torch.Tensor, tails: torch.Tensor) -> torch.Tensor:
    """Batched pair vectors for entity index pairs ``(heads[k], tails[k])``."""
    e_i, e_j = span_emb[heads], span_emb[tails]
    return torch.cat([e_i, e_j, e_i * e_j, type_emb[heads], type_emb[tails], ctx], dim=-1)


def pair_dim(span_dim: int, type_dim: int, token_dim: int) -> int:
    return 3 * span_dim + 2 * type_dim + token_dim


@dataclass
class PairRepresentation:
    vector: torch.Tensor
    head: EntityPrediction
    tail: EntityPrediction
    swapped: bool = False  # True when the caller passed the later span first


def build_pair_representation(i: EntityPrediction, j: EntityPrediction, rho: torch.Tensor,
                              type_embedding: nn.Embedding, schema: str | Schema) -> PairRepresentation:
    if i.span == j.span:
        raise ValueError("cannot pair a span with itself")
    if NOT_ENTITY in (i.etype, j.etype):
        raise ValueError("NOT-ENTITY spans do not take part in relations")
    swapped = j.span < i.span
    if swapped:
        i, j = j, i
    classes = get_schema(schema).entity_classes
    types = torch.tensor([classes.index(i.etype), classes.index(j.etype)], device=rho.device)
    ctx = context_pool(rho, torch.tensor([i.span.token_end]), torch.tensor([j.span.token_start]))
    emb = torch.stack([i.embedding, j.embedding])
    vec = pair_features(emb, type_embedding(types), ctx, torch.tensor([0]), torch.tensor([1]))[0]
    return PairRepresentation(vec, i, j, swapped)


@dataclass
class RelationPrediction:
    head: int  # index into the document's entity predictions
    tail: int
    rtype: str
    probability: float
    distribution: np.ndarray = field(repr=False)


def classify_relations(pairs: Sequence[PairRepresentation] | torch.Tensor, decoder: nn.Module,
                       index_pairs: Sequence[tuple[int, int]] | None = None) -> list[RelationPrediction]:
    """Softmax over (NO-RELATION, Before, After, Overlap) for each pair."""
    if isinstance(pairs, torch.Tensor):
        x = pairs
    else:
        x = torch.stack([p.vector for p in pairs]) if pairs else torch.zeros((0, 0))
    if x.shape[0] == 0:
        return []
    probs = F.softmax(decoder(x), dim=-1)
    labels = argmax_first(probs).tolist()
    dist = probs.detach().cpu().numpy()
    index_pairs = index_pairs or [(-1, -1)] * len(labels)
    return [
        RelationPrediction(h, t, RELATION_CLASSES[k], float(dist[n].max()), dist[n])
        for n, ((h, t), k) in enumerate(zip(index_pairs, labels))
    ]


def orient(head: Span, rtype: str, tail: Span) -> tuple[Span, str, Span]:
    """Put a labelled pair into lexical order, inverting Before/After when swapped."""
    if tail < head:
        return tail, INVERSE[rtype], head
    return head, rtype, tail


def gold_pair_labels(doc: Document) -> dict[tuple[Span, Span], str]:
    """Gold TLinks keyed by lexically ordered span pairs; the first annotation wins on conflict."""
    ents = doc.entity_index()
    out: dict[tuple[Span, Span], str] = {}
    for link in doc.gold_tlinks:
        h, t = ents[link.head_id], ents[link.tail_id]
        a, r, b = orient(Span(h.token_start, h.token_end), link.rtype, Span(t.token_start, t.token_end))
        out.setdefault((a, b), r)
    return out


def relation_targets(pairs: Sequence[tuple[Span, Span]], doc: Document) -> torch.Tensor:
    gold = gold_pair_labels(doc)
    return torch.tensor([RELATION_CLASSES.index(gold.get(p, NO_RELATION)) for p in pairs], dtype=torch.long)


def joint_loss(entity_logits: torch.Tensor, entity_gold: torch.Tensor,
               relation_logits: torch.Tensor | None = None, relation_gold: torch.Tensor | None = None,
               entity_only: bool = False) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Return ``(L, L_n, L_r)`` with ``L = L_n + L_r``, or ``L = L_n`` when ``entity_only``."""
    if entity_logits.shape[0] != entity_gold.shape[0]:
        raise ValueError(f"entity logits {tuple(entity_logits.shape)} vs targets {tuple(entity_gold.shape)}")
    loss_n = F.cross_entropy(entity_logits, entity_gold) if entity_gold.numel() else entity_logits.sum() * 0
    loss_r = loss_n.new_zeros(())
    if not entity_only and relation_logits is not None:
        if relation_gold is None or relation_logits.shape[0] != relation_gold.shape[0]:
            raise ValueError("relation logits and targets are misaligned")
        if relation_gold.numel():
            loss_r = F.cross_entropy(relation_logits, relation_gold)
    if entity_only:
        return loss_n, loss_n, loss_r
    return loss_n + loss_r, loss_n, loss_r

