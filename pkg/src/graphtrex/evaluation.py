"""Scoring: tempeval (temporal awareness), entity span F1 / type accuracy,
E3C-style micro F1 and distance-stratified breakdowns.

Predictions and gold standards share one JSON layout::

    {"doc_id": ..., "entities": [{"span": [s, e], "etype": ..., "score": ...}],
     "relations": [{"head_idx": i, "tail_idx": j, "rtype": ..., "prob": ...}]}
"""
from __future__ import annotations

import json
from collections import namedtuple
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .corpus import Document
from .schema import AFTER, BEFORE, INVERSE, OVERLAP, Schema, get_schema
from .temporal import TemporalGraph, normalize_edge, scoring_reduction, temporal_closure

PRF = namedtuple("PRF", "precision recall f1")


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def prf(tp_p: float, n_p: float, tp_r: float, n_r: float) -> PRF:
    p, r = _ratio(tp_p, n_p), _ratio(tp_r, n_r)
    return PRF(p, r, f1_score(p, r))


def improvement(baseline_f1: float, system_f1: float) -> float:
    """Relative F1 gain in percent, as in ``%IMP`` columns."""
    return 100.0 * (system_f1 - baseline_f1) / baseline_f1 if baseline_f1 else 0.0


# ---------------------------------------------------------------------------
# predictions


@dataclass
class EntityOut:
    span: tuple[int, int]
    etype: str
    score: float = 1.0


@dataclass
class RelationOut:
    head_idx: int
    tail_idx: int
    rtype: str
    prob: float = 1.0


@dataclass
class DocumentPrediction:
    doc_id: str
    entities: list[EntityOut] = field(default_factory=list)
    relations: list[RelationOut] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "entities": [{"span": list(e.span), "etype": e.etype, "score": e.score} for e in self.entities],
            "relations": [asdict(r) for r in self.relations],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "DocumentPrediction":
        return cls(
            obj.get("doc_id", ""),
            [EntityOut(tuple(e["span"]), e["etype"], float(e.get("score", 1.0))) for e in obj.get("entities", [])],
            [
                RelationOut(int(r["head_idx"]), int(r["tail_idx"]), r["rtype"], float(r.get("prob", 1.0)))
                for r in obj.get("relations", [])
            ],
        )

    def temporal_graph(self) -> TemporalGraph:
        """Graph over entity indices."""
        triples = [(r.head_idx, r.rtype, r.tail_idx) for r in self.relations if r.head_idx != r.tail_idx]
        return TemporalGraph.from_triples(triples, nodes=range(len(self.entities)))


def gold_prediction(doc: Document) -> DocumentPrediction:
    """Express a document's gold annotations in the prediction layout."""
    index = {e.entity_id: i for i, e in enumerate(doc.gold_entities)}
    return DocumentPrediction(
        doc.doc_id,
        [EntityOut((e.token_start, e.token_end), e.etype) for e in doc.gold_entities],
        [RelationOut(index[l.head_id], index[l.tail_id], l.rtype) for l in doc.gold_tlinks],
    )


def read_predictions(path) -> list[DocumentPrediction]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read().strip()
    if not text:
        return []
    if text.startswith("["):
        return [DocumentPrediction.from_json(o) for o in json.loads(text)]
    return [DocumentPrediction.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# tempeval


def tempeval_counts(system: TemporalGraph, gold: TemporalGraph) -> tuple[int, int, int, int]:
    """``(|S- & G+|, |S-|, |G- & S+|, |G-|)`` for one document."""
    sys_reduced, sys_closed = scoring_reduction(system), temporal_closure(system)
    gold_reduced, gold_closed = scoring_reduction(gold), temporal_closure(gold)
    return (
        len(sys_reduced.edges & gold_closed.edges),
        len(sys_reduced.edges),
        len(gold_reduced.edges & sys_closed.edges),
        len(gold_reduced.edges),
    )


def tempeval_scores(system: TemporalGraph, gold: TemporalGraph) -> PRF:
    """Temporal-awareness precision, recall and F1.

    Precision checks the reduced system graph against the closed gold graph,
    recall the reduced gold graph against the closed system graph.  Both
    graphs must already use shared node ids for aligned entities.
    """
    return prf(*tempeval_counts(system, gold))


# ---------------------------------------------------------------------------
# entities


def _overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def match_entities(pred: Sequence[tuple[tuple[int, int], str]], gold: Sequence[tuple[tuple[int, int], str]],
                   exact: bool = False, same_type: bool = False) -> dict[int, int]:
    """Greedy one-to-one matching in lexical order; returns ``{pred_idx: gold_idx}``."""
    taken: set[int] = set()
    out: dict[int, int] = {}
    gold_order = sorted(range(len(gold)), key=lambda g: gold[g][0])
    for p in sorted(range(len(pred)), key=lambda i: pred[i][0]):
        span, etype = pred[p]
        for g in gold_order:
            if g in taken:
                continue
            gspan, gtype = gold[g]
            hit = span == gspan if exact else _overlap(span, gspan)
            if hit and (not same_type or etype == gtype):
                out[p] = g
                taken.add(g)
                break
    return out


@dataclass
class EntityScores:
    precision: float
    recall: float
    f1: float
    accuracy: float
    matched: int
    predicted: int
    gold: int


def entity_scores(pred: Sequence[tuple[tuple[int, int], str]], gold: Sequence[tuple[tuple[int, int], str]],
                  exact: bool = False, types: Iterable[str] | None = None) -> EntityScores:
    """Span identification F1 (partial overlap by default) and type accuracy on matched spans.

    ``types`` restricts both sides to a group of entity types (predictions by
    predicted type, gold by gold type).
    """
    if types is not None:
        keep = set(types)
        pred = [p for p in pred if p[1] in keep]
        gold = [g for g in gold if g[1] in keep]
    matches = match_entities(pred, gold, exact=exact)
    correct = sum(pred[p][1] == gold[g][1] for p, g in matches.items())
    n = len(matches)
    p, r = _ratio(n, len(pred)), _ratio(n, len(gold))
    return EntityScores(p, r, f1_score(p, r), _ratio(correct, n), n, len(pred), len(gold))


def align_entities(pred: Sequence[tuple[tuple[int, int], str]], gold: Sequence[tuple[tuple[int, int], str]]) -> dict[int, int]:
    """System-to-gold node alignment for relation scoring: span overlap and equal type."""
    return match_entities(pred, gold, exact=False, same_type=True)


# ---------------------------------------------------------------------------
# E3C micro F1


def _span_triple(head: tuple[int, int], rtype: str, tail: tuple[int, int]):
    if rtype == AFTER:
        return tail, BEFORE, head
    if rtype == OVERLAP and tail < head:
        return tail, OVERLAP, head
    return head, rtype, tail


def relation_tuples(pred: DocumentPrediction) -> set:
    out = set()
    for r in pred.relations:
        h, t = tuple(pred.entities[r.head_idx].span), tuple(pred.entities[r.tail_idx].span)
        if h != t:
            out.add(_span_triple(h, r.rtype, t))
    return out


def micro_f1(pred: Iterable[tuple], gold: Iterable[tuple]) -> PRF:
    """Exact-match micro P/R/F1 over ``(head_span, rtype, tail_span)`` tuples.

    After is folded into Before and Overlap is symmetric.
    """
    p = {_span_triple(*t) for t in pred}
    g = {_span_triple(*t) for t in gold}
    tp = len(p & g)
    return prf(tp, len(p), tp, len(g))


# ---------------------------------------------------------------------------
# relation-class and distance filters


def filter_relations(pred: DocumentPrediction, rtype: str, flip: bool) -> DocumentPrediction:
    """Keep relations of class ``rtype``.

    With ``flip`` the inverse label is rewritten first (``A After B`` becomes
    ``B Before A``), mirroring the flip augmentation used in training.
    """
    rels = []
    for r in pred.relations:
        if flip and r.rtype == INVERSE[rtype] and rtype != OVERLAP:
            r = RelationOut(r.tail_idx, r.head_idx, rtype, r.prob)
        if r.rtype == rtype:
            rels.append(r)
    return DocumentPrediction(pred.doc_id, pred.entities, rels)


def window_distance(a: tuple[int, int], b: tuple[int, int], window_length: int) -> int:
    return abs(a[0] // window_length - b[0] // window_length)


STRATA: dict[str, Callable[[int], bool]] = {
    "d_r=0": lambda d: d == 0,
    "d_r>0": lambda d: d > 0,
    "d_r>1": lambda d: d > 1,
}


def filter_by_distance(pred: DocumentPrediction, predicate: Callable[[int], bool], window_length: int) -> DocumentPrediction:
    rels = [
        r for r in pred.relations
        if predicate(window_distance(pred.entities[r.head_idx].span, pred.entities[r.tail_idx].span, window_length))
    ]
    return DocumentPrediction(pred.doc_id, pred.entities, rels)


# ---------------------------------------------------------------------------
# corpus-level report


class TempevalAccumulator:
    """Micro-averages tempeval counts over documents."""

    def __init__(self):
        self.counts = [0, 0, 0, 0]
        self.gold_links = 0
        self.documents = 0
        self.conflicts = 0
        self.gold_conflicts = 0

    def add(self, system: DocumentPrediction, gold: DocumentPrediction) -> None:
        sys_graph, gold_graph = aligned_graphs(system, gold)
        for i, c in enumerate(tempeval_counts(sys_graph, gold_graph)):
            self.counts[i] += c
        self.gold_links += len(gold.relations)
        self.documents += 1
        self.conflicts += len(temporal_closure(sys_graph).conflicts)
        # inconsistent gold is scored on its pre-contradiction fixpoint; count it
        self.gold_conflicts += len(temporal_closure(gold_graph).conflicts)

    def result(self) -> PRF:
        return prf(*self.counts)


def aligned_graphs(system: DocumentPrediction, gold: DocumentPrediction) -> tuple[TemporalGraph, TemporalGraph]:
    """Temporal graphs with aligned system entities renamed to their gold ids."""
    sys_ents = [(tuple(e.span), e.etype) for e in system.entities]
    gold_ents = [(tuple(e.span), e.etype) for e in gold.entities]
    mapping = align_entities(sys_ents, gold_ents)
    name = lambda i: ("g", mapping[i]) if i in mapping else ("s", i)
    sys_triples = []
    for r in system.relations:
        h, t = name(r.head_idx), name(r.tail_idx)
        if h != t:
            sys_triples.append((h, r.rtype, t))
    gold_triples = [(("g", r.head_idx), r.rtype, ("g", r.tail_idx)) for r in gold.relations if r.head_idx != r.tail_idx]
    sys_graph = TemporalGraph.from_triples(sys_triples)
    gold_graph = TemporalGraph.from_triples(gold_triples)
    return sys_graph, gold_graph


@dataclass
class StratumRow:
    name: str
    precision: float
    recall: float
    f1: float
    mean_gold_tlinks: float


@dataclass
class MetricReport:
    tempeval: PRF
    per_class: dict[str, PRF] = field(default_factory=dict)
    entities: dict[str, EntityScores] = field(default_factory=dict)
    strata: list[StratumRow] = field(default_factory=list)
    micro: dict[str, PRF] = field(default_factory=dict)
    documents: int = 0
    system_conflicts: int = 0
    gold_conflicts: int = 0

    def to_json(self) -> dict:
        as_prf = lambda x: {"precision": x.precision, "recall": x.recall, "f1": x.f1}
        return {
            "tempeval": as_prf(self.tempeval),
            "per_class": {k: as_prf(v) for k, v in self.per_class.items()},
            "entities": {k: asdict(v) for k, v in self.entities.items()},
            "strata": [asdict(s) for s in self.strata],
            "micro": {k: as_prf(v) for k, v in self.micro.items()},
            "documents": self.documents,
            "system_conflicts": self.system_conflicts,
            "gold_conflicts": self.gold_conflicts,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "MetricReport":
        to_prf = lambda d: PRF(d["precision"], d["recall"], d["f1"])
        return cls(
            to_prf(obj["tempeval"]),
            {k: to_prf(v) for k, v in obj.get("per_class", {}).items()},
            {k: EntityScores(**v) for k, v in obj.get("entities", {}).items()},
            [StratumRow(**s) for s in obj.get("strata", [])],
            {k: to_prf(v) for k, v in obj.get("micro", {}).items()},
            obj.get("documents", 0),
            obj.get("system_conflicts", 0),
            obj.get("gold_conflicts", 0),
        )

    def to_table(self, baseline: "MetricReport | None" = None) -> str:
        pct = lambda x: f"{100 * x:6.2f}"
        lines = []
        head = f"{'group':<14} {'EI F1':>7} {'EC Acc':>7}"
        lines.append(head)
        for group, s in self.entities.items():
            lines.append(f"{group:<14} {pct(s.f1):>7} {pct(s.accuracy):>7}")
        lines.append("")
        lines.append(f"{'TLink':<14} {'P':>7} {'R':>7} {'F1':>7}")
        lines.append(f"{'tempeval':<14} {pct(self.tempeval.precision):>7} {pct(self.tempeval.recall):>7} {pct(self.tempeval.f1):>7}")
        for k, v in self.per_class.items():
            lines.append(f"{k:<14} {pct(v.precision):>7} {pct(v.recall):>7} {pct(v.f1):>7}")
        for k, v in self.micro.items():
            lines.append(f"{'micro:' + k:<14} {pct(v.precision):>7} {pct(v.recall):>7} {pct(v.f1):>7}")
        if self.strata:
            lines.append("")
            base_rows = {s.name: s for s in baseline.strata} if baseline else {}
            cols = f"{'distance':<14} {'n_r':>7} {'P':>7} {'R':>7} {'F1':>7}" + (f" {'%IMP':>7}" if baseline else "")
            lines.append(cols)
            for s in self.strata:
                row = f"{s.name:<14} {s.mean_gold_tlinks:7.1f} {pct(s.precision):>7} {pct(s.recall):>7} {pct(s.f1):>7}"
                if s.name in base_rows:
                    row += f" {improvement(base_rows[s.name].f1, s.f1):7.1f}"
                lines.append(row)
        if self.system_conflicts or self.gold_conflicts:
            lines.append("")
            lines.append(f"skipped contradictory edges: system {self.system_conflicts}, gold {self.gold_conflicts}")
        if baseline is not None:
            lines.append("")
            lines.append(f"%IMP tempeval F1: {improvement(baseline.tempeval.f1, self.tempeval.f1):.2f}")
        return "\n".join(lines)


def evaluate_predictions(pairs: Iterable[tuple[DocumentPrediction, DocumentPrediction]], schema: str | Schema = "I2B2",
                         window_length: int = 512, strata: Mapping[str, Callable[[int], bool]] | None = None,
                         exact_spans: bool = False) -> MetricReport:
    """Corpus-level report over ``(system, gold)`` document pairs.

    Tempeval counts are pooled over documents before dividing.
    """
    schema = get_schema(schema)
    strata = STRATA if strata is None else strata
    pairs = list(pairs)
    overall = TempevalAccumulator()
    # The decoder labels lexically ordered pairs only, so an inverted After is
    # its way of saying Before; both sides are flipped before filtering.
    classes = [OVERLAP, BEFORE]
    per_class = {c: TempevalAccumulator() for c in classes}
    per_stratum = {k: TempevalAccumulator() for k in strata}
    sys_ents: dict[str, list] = {"EVENT": [], "TIMEX": []}
    gold_ents: dict[str, list] = {"EVENT": [], "TIMEX": []}
    ent_scores: dict[str, list[EntityScores]] = {"EVENT": [], "TIMEX": []}
    sys_rel, gold_rel = set(), set()
    sys_exact, gold_exact = set(), set()

    for n, (system, gold) in enumerate(pairs):
        overall.add(system, gold)
        for c, acc in per_class.items():
            acc.add(filter_relations(system, c, flip=True), filter_relations(gold, c, flip=True))
        for k, pred in strata.items():
            per_stratum[k].add(filter_by_distance(system, pred, window_length), filter_by_distance(gold, pred, window_length))
        s = [(tuple(e.span), e.etype) for e in system.entities]
        g = [(tuple(e.span), e.etype) for e in gold.entities]
        for group, types in (("EVENT", schema.event_types), ("TIMEX", schema.timex_types)):
            if types:
                ent_scores[group].append(entity_scores(s, g, exact=exact_spans, types=types))
        sys_rel |= {(n,) + t for t in relation_tuples(system)}
        gold_rel |= {(n,) + t for t in relation_tuples(gold)}
        sys_exact |= {(n, sp, et) for sp, et in s}
        gold_exact |= {(n, sp, et) for sp, et in g}

    entities = {}
    for group, rows in ent_scores.items():
        if not rows:
            continue
        matched = sum(r.matched for r in rows)
        npred = sum(r.predicted for r in rows)
        ngold = sum(r.gold for r in rows)
        correct = sum(r.accuracy * r.matched for r in rows)
        p, r = _ratio(matched, npred), _ratio(matched, ngold)
        entities[group] = EntityScores(p, r, f1_score(p, r), _ratio(correct, matched), matched, npred, ngold)

    tp = len(sys_rel & gold_rel)
    tp_e = len(sys_exact & gold_exact)
    micro = {
        "relation": prf(tp, len(sys_rel), tp, len(gold_rel)),
        "entity": prf(tp_e, len(sys_exact), tp_e, len(gold_exact)),
    }
    rows = [
        StratumRow(k, *acc.result(), _ratio(acc.gold_links, acc.documents))
        for k, acc in per_stratum.items()
    ]
    return MetricReport(
        tempeval=overall.result(),
        per_class={c: acc.result() for c, acc in per_class.items()},
        entities=entities,
        strata=rows,
        micro=micro,
        documents=len(pairs),
        system_conflicts=overall.conflicts,
        gold_conflicts=overall.gold_conflicts,
    )


def distance_stratified_scores(pairs: Iterable[tuple[DocumentPrediction, DocumentPrediction]], window_length: int = 512,
                               strata: Mapping[str, Callable[[int], bool]] | None = None) -> list[StratumRow]:
    strata = STRATA if strata is None else strata
    pairs = list(pairs)
    rows = []
    for k, pred in strata.items():
        acc = TempevalAccumulator()
        for system, gold in pairs:
            acc.add(filter_by_distance(system, pred, window_length), filter_by_distance(gold, pred, window_length))
        rows.append(StratumRow(k, *acc.result(), _ratio(acc.gold_links, acc.documents)))
    return rows
