"""The joint span model with optional graph refinement.

``GraphTrexModel`` holds every learnable part: the contextual encoder, span
embedder, entity/relation decoders, the type embedding, feature adapters for
structural nodes and the HGT stack.  The HGT parameters exist in both modes
so one checkpoint can be decoded either way.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .config import TrainConfig
from .corpus import Document
from .encoding import ConfigError, ContextualEncoder, HashEncoder, PretrainedEncoder, encode_document, set_frozen
from .evaluation import DocumentPrediction, EntityOut, RelationOut
from .hetgraph import (
    HeteroGraph,
    add_context_nodes,
    add_window_nodes,
    build_entity_subgraph,
    edge_type_vocabulary,
    node_type_vocabulary,
)
from .hgt import HGT, combine_residual
from .schema import NO_RELATION, NOT_ENTITY, RELATION_CLASSES, get_schema
from .spantrex import (
    EntityPrediction,
    FeedForwardDecoder,
    RelationPrediction,
    Span,
    SpanEmbedder,
    argmax_first,
    context_pool,
    entity_targets,
    enumerate_spans,
    pair_dim,
    pair_features,
    postprocess_predictions,
    relation_targets,
    select_entities,
)


def build_encoder(config: TrainConfig) -> ContextualEncoder:
    if config.encoder == "hash":
        return HashEncoder(
            hidden_size=config.encoder_dim,
            max_length=config.window_size,
            num_layers=config.encoder_layers,
            num_heads=config.encoder_heads,
            seed=config.seed,
        )
    return PretrainedEncoder(config.encoder)


@dataclass
class ForwardOutput:
    spans: list[Span]
    entity_logits: torch.Tensor
    entities: list[Span] = field(default_factory=list)  # relation candidates, lexical order
    entity_types: list[int] = field(default_factory=list)
    entity_rows: list[int] = field(default_factory=list)  # index into ``spans``
    pairs: list[tuple[int, int]] = field(default_factory=list)  # indices into ``entities``
    initial_logits: torch.Tensor | None = None
    relation_logits: torch.Tensor | None = None
    graph: HeteroGraph | None = None


class GraphTrexModel(nn.Module):
    def __init__(self, config: TrainConfig, encoder: ContextualEncoder | None = None):
        super().__init__()
        self.config = config.validate()
        self.schema = get_schema(config.schema)
        self.encoder = encoder if encoder is not None else build_encoder(config)
        if config.freeze_encoder:
            set_frozen(self.encoder, True)
        d_rho = self.encoder.hidden_size
        n_ent = len(self.schema.entity_classes)
        self.span_embedder = SpanEmbedder(d_rho, config.span_dim, config.k_max, config.width_dim, config.span_layers)
        self.entity_decoder = FeedForwardDecoder(config.span_dim, config.hidden_dim, n_ent, config.dropout)
        self.type_embedding = nn.Embedding(n_ent, config.type_dim)
        self.relation_decoder = FeedForwardDecoder(
            pair_dim(config.span_dim, config.type_dim, d_rho), config.hidden_dim, len(RELATION_CLASSES), config.dropout
        )
        self.context_adapter = nn.Linear(d_rho, config.span_dim)
        self.window_adapter = nn.Linear(d_rho, config.span_dim)
        self.hgt = HGT(
            node_type_vocabulary(self.schema),
            edge_type_vocabulary(self.schema, reverse=config.reverse_edges),
            config.span_dim,
            num_heads=config.hgt_heads,
            num_layers=config.hgt_layers,
            dropout=config.hgt_dropout,
            iterations=config.hgt_iterations,
            share_iterations=config.share_iterations,
        )

    def encoder_parameters(self):
        return [p for p in self.encoder.parameters() if p.requires_grad]

    def head_parameters(self):
        enc = {id(p) for p in self.encoder.parameters()}
        return [p for p in self.parameters() if id(p) not in enc and p.requires_grad]

    # ------------------------------------------------------------------

    def forward(self, doc: Document, mode: str | None = None, entity_only: bool = False,
                gold_candidates: bool = False) -> ForwardOutput:
        """Run the network on one document.

        ``gold_candidates`` pairs the gold entities (teacher forcing) instead of
        the entities decoded from ``entity_logits``.
        """
        cfg = self.config
        mode = mode or cfg.mode
        if len(doc) > cfg.max_tokens:
            raise ConfigError(
                f"document {doc.doc_id} has {len(doc)} tokens, above max_tokens={cfg.max_tokens}; "
                "raise max_tokens or split the document"
            )
        window = min(cfg.window_size, self.encoder.max_length)
        enc = encode_document(doc.token_strings, self.encoder, window)
        rho = enc.token_embeddings
        spans = enumerate_spans(len(doc), cfg.k_max)
        device = rho.device
        starts = torch.tensor([s.token_start for s in spans], dtype=torch.long, device=device)
        ends = torch.tensor([s.token_end for s in spans], dtype=torch.long, device=device)
        span_emb = self.span_embedder(rho, starts, ends) if spans else rho.new_zeros((0, cfg.span_dim))
        entity_logits = self.entity_decoder(span_emb)
        out = ForwardOutput(spans, entity_logits)
        if entity_only or not spans:
            return out

        row_of = {s: i for i, s in enumerate(spans)}
        if gold_candidates:
            classes = self.schema.entity_classes
            cand = sorted(
                {(Span(e.token_start, e.token_end), classes.index(e.etype))
                 for e in doc.gold_entities if e.etype in classes and Span(e.token_start, e.token_end) in row_of}
            )
            seen, uniq = set(), []
            for sp, t in cand:
                if sp not in seen:
                    seen.add(sp)
                    uniq.append((sp, t))
            out.entities = [sp for sp, _ in uniq]
            out.entity_types = [t for _, t in uniq]
        else:
            probs = F.softmax(entity_logits.detach(), dim=-1)
            keep = select_entities(spans, probs)
            labels = argmax_first(probs)
            out.entities = [spans[i] for i in keep]
            out.entity_types = [int(labels[i]) for i in keep]
        out.entity_rows = [row_of[s] for s in out.entities]
        out.pairs = list(itertools.combinations(range(len(out.entities)), 2))
        if not out.pairs:
            return out

        emb = span_emb[out.entity_rows]
        types = self.type_embedding(torch.tensor(out.entity_types, dtype=torch.long, device=device))
        heads = torch.tensor([a for a, _ in out.pairs], dtype=torch.long, device=device)
        tails = torch.tensor([b for _, b in out.pairs], dtype=torch.long, device=device)
        left = torch.tensor([out.entities[a].token_end for a, _ in out.pairs], dtype=torch.long, device=device)
        right = torch.tensor([out.entities[b].token_start for _, b in out.pairs], dtype=torch.long, device=device)
        ctx = context_pool(rho, left, right)
        out.initial_logits = self.relation_decoder(pair_features(emb, types, ctx, heads, tails))
        if mode == "spantrex":
            out.relation_logits = out.initial_logits
            return out

        graph = self.build_graph(out, emb, rho, enc, len(doc))
        out.graph = graph
        h = self.node_features(graph)
        index = self.hgt.index(graph, device=device)
        h = self.hgt.refine(h, index)
        entity_nodes = graph.nodes_of_kind("entity")
        enhanced = combine_residual(emb, h, entity_nodes, cfg.residual_coefficient)
        out.relation_logits = self.relation_decoder(pair_features(enhanced, types, ctx, heads, tails))
        return out

    def build_graph(self, out: ForwardOutput, emb: torch.Tensor, rho: torch.Tensor, enc, doc_length: int) -> HeteroGraph:
        cfg = self.config
        classes = self.schema.entity_classes
        probs = F.softmax(out.initial_logits.detach(), dim=-1)
        labels = argmax_first(probs).tolist()
        ent_preds = [
            EntityPrediction(sp, classes[t], None, emb[k]) for k, (sp, t) in enumerate(zip(out.entities, out.entity_types))
        ]
        rel_preds = [
            RelationPrediction(a, b, RELATION_CLASSES[k], float(probs[n, k]), None)
            for n, ((a, b), k) in enumerate(zip(out.pairs, labels))
        ]
        graph = build_entity_subgraph(ent_preds, rel_preds, cfg.tau, reverse=cfg.reverse_edges)
        d_c = cfg.delta * doc_length
        if cfg.use_context_nodes and d_c >= 2:
            graph = add_context_nodes(graph, rho, d_c, reverse=cfg.reverse_edges)
        if cfg.use_window_nodes:
            token_window = enc.window_plan.owners()[:, 0].tolist()
            graph = add_window_nodes(graph, enc.window_summaries, doc_length, cfg.window_length, token_window,
                                     reverse=cfg.reverse_edges)
        return graph

    def node_features(self, graph: HeteroGraph) -> torch.Tensor:
        """Initial HGT states: span embeddings for entities, adapted encoder vectors otherwise."""
        rows = []
        for feat, kind in zip(graph.features, graph.kinds):
            if kind == "entity":
                rows.append(feat)
            elif kind == "context":
                rows.append(self.context_adapter(feat))
            else:
                rows.append(self.window_adapter(feat))
        return torch.stack(rows)

    # ------------------------------------------------------------------

    def loss(self, doc: Document, entity_only: bool = False, generator: torch.Generator | None = None):
        """``(L, L_n, L_r)`` for one training document."""
        cfg = self.config
        out = self(doc, entity_only=entity_only, gold_candidates=cfg.relation_candidates == "gold")
        ent_gold = entity_targets(out.spans, doc, self.schema).to(out.entity_logits.device)
        loss_n = F.cross_entropy(out.entity_logits, ent_gold) if len(out.spans) else out.entity_logits.sum() * 0
        loss_r = loss_n.new_zeros(())
        if not entity_only and out.pairs:
            span_pairs = [(out.entities[a], out.entities[b]) for a, b in out.pairs]
            rel_gold = relation_targets(span_pairs, doc).to(loss_n.device)
            keep = torch.ones_like(rel_gold, dtype=torch.bool)
            if cfg.relation_negative_rate is not None:
                draw = torch.rand(rel_gold.shape, generator=generator).to(loss_n.device)
                keep = (rel_gold != 0) | (draw < cfg.relation_negative_rate)
            if bool(keep.any()):
                loss_r = F.cross_entropy(out.relation_logits[keep], rel_gold[keep])
                if out.relation_logits is not out.initial_logits:
                    # The first-pass decoder also feeds the graph; keep it supervised.
                    loss_r = loss_r + F.cross_entropy(out.initial_logits[keep], rel_gold[keep])
        return loss_n + loss_r, loss_n, loss_r

    @torch.no_grad()
    def predict(self, doc: Document, mode: str | None = None) -> tuple[DocumentPrediction, list[EntityPrediction]]:
        was_training = self.training
        self.eval()
        try:
            out = self(doc, mode=mode)
        finally:
            self.train(was_training)
        classes = self.schema.entity_classes
        probs = F.softmax(out.entity_logits, dim=-1).cpu().numpy() if out.spans else None
        ent_preds = [
            EntityPrediction(sp, classes[t], probs[r]) for sp, t, r in zip(out.entities, out.entity_types, out.entity_rows)
        ]
        ent_preds = [p for p in postprocess_predictions(ent_preds, self.schema) if p.etype != NOT_ENTITY]
        pred = DocumentPrediction(
            doc.doc_id, [EntityOut((p.span.token_start, p.span.token_end), p.etype, p.score) for p in ent_preds]
        )
        if out.relation_logits is not None:
            rel_probs = F.softmax(out.relation_logits, dim=-1)
            labels = argmax_first(rel_probs).tolist()
            for n, ((a, b), k) in enumerate(zip(out.pairs, labels)):
                if RELATION_CLASSES[k] != NO_RELATION:
                    pred.relations.append(RelationOut(a, b, RELATION_CLASSES[k], float(rel_probs[n, k])))
        return pred, ent_preds
