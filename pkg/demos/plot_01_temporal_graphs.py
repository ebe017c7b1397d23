"""
Closing, reducing and scoring temporal graphs
=============================================

Temporal links are read as constraints between time points.  Closure adds
everything they entail, reduction strips what is redundant, and the tempeval
score compares two graphs through both.
"""

from graphtrex.evaluation import tempeval_scores
from graphtrex.temporal import TemporalGraph, is_consistent, temporal_closure, temporal_reduction

# fever starts before the admission; aspirin is given at admission and
# the chest x-ray happens after the aspirin
g = TemporalGraph.from_triples([
    ("fever", "Before", "admission"),
    ("aspirin", "Overlap", "admission"),
    ("x-ray", "After", "aspirin"),
    ("fever", "Before", "x-ray"),
])
print("stored edges (After folded into Before):")
for e in sorted(g.edges):
    print("  ", e)

closed = temporal_closure(g)
print("closure has", len(closed), "edges")
for e in sorted(closed.edges - g.edges):
    print("   entailed:", e)

# the last input edge follows from the others, so reduction drops it
reduced = temporal_reduction(g)
print("reduction keeps", len(reduced), "of", len(g), "edges")
assert temporal_closure(reduced) == closed

# a cycle of Before links has no timeline
print("consistent with x-ray < fever added?",
      is_consistent(g.with_edges(g.edges | {("x-ray", "Before", "fever")})))

# scoring: a system that says A < C when the gold says A < B < C is precise
# (its edge is implied by gold) but recalls nothing (gold's edges are not
# implied by the system graph)
system = TemporalGraph.from_triples([("A", "Before", "C")])
gold = TemporalGraph.from_triples([("A", "Before", "B"), ("B", "Before", "C")])
print(tempeval_scores(system, gold))
