"""
Sliding windows and the document graph
======================================

Long notes are split into overlapping encoder windows in which every token is
owned by exactly one window.  After span extraction the entities, their
predicted relations, the text between nearby entities and the windows
themselves become nodes of one heterogeneous graph.
"""

import torch

from graphtrex.config import TrainConfig
from graphtrex.encoding import build_window_plan
from graphtrex.model import GraphTrexModel
from graphtrex.synthetic import synthetic_corpus

# 8 tokens, windows of 6 slots (CLS and SEP included)
plan = build_window_plan(8, 6)
print("masks: 1 owned, -2 context only, -3 CLS/SEP, -4 pad")
print(plan.masks)
print("token slots per window")
print(plan.slots)

# a short synthetic note with hidden timestamps behind its links
doc = synthetic_corpus(1, seed=3)[0]
print(" ".join(doc.token_strings))
for link in doc.gold_tlinks:
    print("  ", link.head_id, link.rtype, link.tail_id)

# an untrained toy model still builds the full graph when it is fed the
# gold entities; small windows make several window nodes appear
config = TrainConfig(schema="SYNTHETIC", span_dim=16, hidden_dim=16, type_dim=4, encoder_dim=8,
                     window_size=16, window_length=16)
torch.manual_seed(0)
model = GraphTrexModel(config).eval()
with torch.no_grad():
    out = model(doc, gold_candidates=True)
graph = out.graph
for kind in ("entity", "context", "window"):
    print(kind, "nodes:", len(graph.nodes_of_kind(kind)))
print("meta relations:")
for meta in sorted(graph.meta_relations())[:8]:
    print("  ", meta)

# the same graph in DOT form, ready for graphviz
print(graph.to_dot(doc.doc_id)[:400])
