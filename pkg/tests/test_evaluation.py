import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphtrex.corpus import Document, EntityAnnotation, TLinkAnnotation
from graphtrex.evaluation import (
    PRF,
    DocumentPrediction,
    EntityOut,
    MetricReport,
    RelationOut,
    aligned_graphs,
    distance_stratified_scores,
    entity_scores,
    evaluate_predictions,
    filter_relations,
    gold_prediction,
    improvement,
    micro_f1,
    read_predictions,
    tempeval_scores,
    window_distance,
)
from graphtrex.temporal import TemporalGraph

B, A, O = "Before", "After", "Overlap"


def G(*triples):
    return TemporalGraph.from_triples(triples)


def test_identity_scores_one():
    g = G(("A", B, "B"), ("B", B, "C"))
    assert tempeval_scores(g, g) == PRF(1.0, 1.0, 1.0)


def test_worked_example():
    p, r, f = tempeval_scores(G(("A", B, "C")), G(("A", B, "B"), ("B", B, "C")))
    assert (p, r, f) == (1.0, 0.0, 0.0)


def test_empty_denominators():
    assert tempeval_scores(TemporalGraph(), TemporalGraph()) == PRF(0.0, 0.0, 0.0)


def test_flip_invariance():
    sys = G(("A", B, "B"), ("C", O, "B"))
    flipped = G(("B", A, "A"), ("B", O, "C"))
    gold = G(("A", B, "B"), ("B", B, "C"))
    assert tempeval_scores(sys, gold) == tempeval_scores(flipped, gold)


def test_improvement():
    assert round(improvement(66.63, 68.81), 2) == 3.27
    assert improvement(0.0, 1.0) == 0.0


def test_entity_scores_partial_and_exact():
    pred = [((4, 6), "PROBLEM")]
    gold = [((3, 6), "PROBLEM")]
    s = entity_scores(pred, gold)
    assert s.f1 == 1.0 and s.accuracy == 1.0
    assert entity_scores(pred, gold, exact=True).f1 == 0.0
    assert entity_scores([], gold).f1 == 0.0
    wrong = entity_scores([((3, 6), "TEST")], gold)
    assert wrong.f1 == 1.0 and wrong.accuracy == 0.0


def test_entity_matching_is_one_to_one():
    pred = [((0, 5), "PROBLEM")]
    gold = [((0, 1), "PROBLEM"), ((3, 4), "PROBLEM")]
    s = entity_scores(pred, gold)
    assert s.matched == 1 and s.recall == 0.5


def test_micro_f1():
    x = [((0, 0), B, (2, 2)), ((3, 3), O, (5, 5))]
    assert micro_f1(x, x).f1 == 1.0
    assert micro_f1(x, [((7, 7), B, (9, 9))]).f1 == 0.0
    assert micro_f1([((2, 2), O, (0, 0))], [((0, 0), O, (2, 2))]).f1 == 1.0
    assert micro_f1([((2, 2), A, (0, 0))], [((0, 0), B, (2, 2))]).f1 == 1.0


def test_window_distance_strata():
    assert window_distance((0, 1), (1030, 1031), 512) == 2
    assert window_distance((3, 3), (200, 201), 512) == 0


def _doc():
    ents = [EntityAnnotation("e0", 0, 0, "PROBLEM"), EntityAnnotation("e1", 2, 2, "TEST"),
            EntityAnnotation("e2", 600, 600, "DATE"), EntityAnnotation("e3", 1100, 1101, "TREATMENT")]
    tokens = [(f"w{i}", 3 * i, 3 * i + 2) for i in range(1200)]
    links = [TLinkAnnotation("e0", "e1", B), TLinkAnnotation("e2", "e1", A), TLinkAnnotation("e0", "e3", O)]
    return Document("d", "", tokens, ents, links, "I2B2")


def test_gold_prediction_scores_perfectly():
    gold = gold_prediction(_doc())
    rep = evaluate_predictions([(gold, gold)], "I2B2")
    assert rep.tempeval.f1 == 1.0
    assert all(v.f1 == 1.0 for v in rep.per_class.values())
    assert rep.entities["EVENT"].f1 == 1.0 and rep.entities["TIMEX"].f1 == 1.0
    assert rep.micro["relation"].f1 == 1.0
    strata = {s.name: s for s in rep.strata}
    assert strata["d_r=0"].mean_gold_tlinks == 1.0
    assert strata["d_r>0"].mean_gold_tlinks == 2.0
    assert strata["d_r>1"].mean_gold_tlinks == 1.0


def test_per_class_filter_flips_gold():
    gold = gold_prediction(_doc())
    before = filter_relations(gold, B, flip=True)
    # e2 After e1 becomes e1 Before e2
    assert {(r.head_idx, r.rtype, r.tail_idx) for r in before.relations} == {(0, B, 1), (1, B, 2)}
    overlap = filter_relations(gold, O, flip=True)
    assert [(r.head_idx, r.tail_idx) for r in overlap.relations] == [(0, 3)]


def test_alignment_requires_type_and_overlap():
    gold = DocumentPrediction("d", [EntityOut((0, 1), "PROBLEM"), EntityOut((5, 5), "TEST")], [RelationOut(0, 1, B)])
    sys = DocumentPrediction("d", [EntityOut((1, 2), "PROBLEM"), EntityOut((5, 5), "DATE")], [RelationOut(0, 1, B)])
    s, g = aligned_graphs(sys, gold)
    assert s.edges != g.edges
    assert tempeval_scores(s, g).f1 == 0.0
    sys.entities[1] = EntityOut((5, 6), "TEST")
    s, g = aligned_graphs(sys, gold)
    assert tempeval_scores(s, g).f1 == 1.0


def test_report_json_round_trip_and_table():
    gold = gold_prediction(_doc())
    rep = evaluate_predictions([(gold, gold)])
    back = MetricReport.from_json(json.loads(json.dumps(rep.to_json())))
    assert back.tempeval == rep.tempeval
    table = rep.to_table(baseline=back)
    assert "tempeval" in table and "%IMP" in table


def test_distance_rows():
    gold = gold_prediction(_doc())
    rows = distance_stratified_scores([(gold, gold)])
    assert [r.name for r in rows] == ["d_r=0", "d_r>0", "d_r>1"]
    assert all(r.f1 == 1.0 for r in rows)


def test_prediction_io(tmp_path):
    pred = gold_prediction(_doc())
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps(pred.to_json()) + "\n")
    assert read_predictions(path)[0].to_json() == pred.to_json()
    path.write_text(json.dumps([pred.to_json()]))
    assert read_predictions(path)[0].doc_id == "d"


edges = st.lists(
    st.tuples(st.sampled_from("ABCDE"), st.sampled_from([B, A, O]), st.sampled_from("ABCDE")).filter(lambda t: t[0] != t[2]),
    max_size=8,
)


@settings(max_examples=80, deadline=None)
@given(edges, edges)
def test_property_bounds(sys_edges, gold_edges):
    p, r, f = tempeval_scores(G(*sys_edges), G(*gold_edges))
    for x in (p, r, f):
        assert 0.0 <= x <= 1.0
    expected = 2 * p * r / (p + r) if p + r else 0.0
    assert f == pytest.approx(expected)


def test_inconsistent_gold_is_flagged():
    ents = [EntityOut((0, 0), "PROBLEM"), EntityOut((2, 2), "PROBLEM"), EntityOut((4, 4), "PROBLEM")]
    cycle = [RelationOut(0, 1, "Before"), RelationOut(1, 2, "Before"), RelationOut(2, 0, "Before")]
    gold = DocumentPrediction("d", ents, cycle)
    system = DocumentPrediction("d", ents, cycle[:2])
    rep = evaluate_predictions([(system, gold)], schema="SYNTHETIC")
    assert rep.gold_conflicts == 1 and rep.system_conflicts == 0
    # closure stops before the contradiction; the contradicting gold edge stays
    # in the reduced gold graph and can never be recalled
    assert rep.tempeval.precision == 1.0 and rep.tempeval.recall == pytest.approx(2 / 3)
    assert MetricReport.from_json(rep.to_json()).gold_conflicts == 1
    assert "gold 1" in rep.to_table()
