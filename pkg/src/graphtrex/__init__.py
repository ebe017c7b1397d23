"""Temporal relation extraction from long clinical documents.

Submodules
----------
corpus      annotation loaders, repair rules, splits and JSONL I/O
encoding    sliding-window plans and contextual encoders
spantrex    span enumeration, entity and relation decoders, joint loss
hetgraph    heterogeneous document graphs (entity, context, window nodes)
hgt         heterogeneous graph transformer layers
temporal    closure, reduction and consistency of temporal graphs
evaluation  tempeval, entity and distance-stratified scores
pipeline    training, prediction, evaluation and checkpoints
"""
from .config import TrainConfig
from .corpus import CorpusSplit, Document, EntityAnnotation, TLinkAnnotation
from .evaluation import MetricReport, tempeval_scores
from .model import GraphTrexModel
from .pipeline import Checkpoint, evaluate, predict, train
from .temporal import TemporalGraph, temporal_closure, temporal_reduction

__version__ = "0.1.0"
