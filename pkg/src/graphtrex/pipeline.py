"""Training, prediction and evaluation drivers."""
from __future__ import annotations

import copy
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .config import TrainConfig
from .corpus import CorpusSplit, Document
from .evaluation import DocumentPrediction, MetricReport, evaluate_predictions, gold_prediction
from .model import GraphTrexModel
from .temporal import TemporalGraph

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class Checkpoint:
    state_dict: dict
    config: TrainConfig
    dev_report: MetricReport | None = None
    epoch: int = -1
    history: list[dict] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "state_dict": self.state_dict,
                "config": self.config.to_dict(),
                "dev_report": self.dev_report.to_json() if self.dev_report else None,
                "epoch": self.epoch,
                "history": self.history,
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        obj = torch.load(path, map_location="cpu", weights_only=False)
        report = MetricReport.from_json(obj["dev_report"]) if obj.get("dev_report") else None
        return cls(obj["state_dict"], TrainConfig.from_dict(obj["config"]), report, obj["epoch"], obj.get("history", []))

    def model(self) -> GraphTrexModel:
        torch.manual_seed(self.config.seed)
        model = GraphTrexModel(self.config)
        model.load_state_dict(self.state_dict)
        dtype = next(iter(self.state_dict.values())).dtype
        model.to(dtype)
        model.eval()
        return model


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def _lr_lambda(total_steps: int, warmup_fraction: float):
    warmup = max(int(round(total_steps * warmup_fraction)), 0)

    def f(step: int) -> float:
        if warmup and step < warmup:
            return (step + 1) / warmup
        if total_steps <= warmup:
            return 1.0
        return max(0.0, (total_steps - step) / (total_steps - warmup))

    return f


def make_optimizer(model: GraphTrexModel, config: TrainConfig, total_steps: int):
    groups = [{"params": model.head_parameters(), "lr": config.learning_rate}]
    enc = model.encoder_parameters()
    if enc:
        groups.append({"params": enc, "lr": config.encoder_learning_rate})
    opt = torch.optim.Adam(groups)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, _lr_lambda(total_steps, config.lr_warmup_fraction))
    return opt, sched


def _as_model(model_or_checkpoint) -> GraphTrexModel:
    if isinstance(model_or_checkpoint, Checkpoint):
        return model_or_checkpoint.model()
    return model_or_checkpoint


def train(config: TrainConfig, split: CorpusSplit, dtype: torch.dtype = torch.float32,
          model: GraphTrexModel | None = None, callback=None) -> Checkpoint:
    """Fit a model and return the checkpoint with the best dev tempeval F1.

    The first ``warmup_entity_only_epochs`` epochs optimise the entity loss
    only and skip relation decoding and graph refinement.  Documents in a
    batch accumulate gradients before one optimiser step.  Without dev
    documents the final epoch is returned.
    """
    config.validate()
    if not split.train:
        raise ValueError("training split is empty")
    seed_everything(config.seed)
    model = model if model is not None else GraphTrexModel(config)
    model.to(dtype)
    steps_per_epoch = math.ceil(len(split.train) / config.batch_size_docs)
    opt, sched = make_optimizer(model, config, max(config.epochs * steps_per_epoch, 1))
    order_rng = random.Random(config.seed)
    sample_gen = torch.Generator().manual_seed(config.seed)

    best: Checkpoint | None = None
    history: list[dict] = []
    docs = list(split.train)
    for epoch in range(config.epochs):
        model.train()
        entity_only = epoch < config.warmup_entity_only_epochs
        order_rng.shuffle(docs)
        totals = np.zeros(3)
        for b in range(steps_per_epoch):
            batch = docs[b * config.batch_size_docs : (b + 1) * config.batch_size_docs]
            opt.zero_grad(set_to_none=True)
            for doc in batch:
                loss, loss_n, loss_r = model.loss(doc, entity_only=entity_only, generator=sample_gen)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(epoch, b, loss.item())
                (loss / len(batch)).backward()
                totals += [loss.item(), loss_n.item(), loss_r.item()]
            opt.step()
            sched.step()
        row = {"epoch": epoch, "loss": totals[0] / len(docs), "loss_n": totals[1] / len(docs),
               "loss_r": totals[2] / len(docs), "entity_only": entity_only}
        report = None
        if split.dev:
            report = evaluate(model, split.dev)
            row["dev_f1"] = report.tempeval.f1
        history.append(row)
        log.info("epoch %d %s", epoch, row)
        if callback is not None:
            callback(epoch, model, row)
        if report is None or best is None or report.tempeval.f1 > best.dev_report.tempeval.f1:
            best = Checkpoint(copy.deepcopy(model.state_dict()), config, report, epoch)
    if best is None:
        best = Checkpoint(copy.deepcopy(model.state_dict()), config, None, -1)
    best.history = history
    return best


def predict(model_or_checkpoint, doc: Document, mode: str | None = None) -> tuple[TemporalGraph, DocumentPrediction]:
    """Decode one document; returns the temporal graph over entity indices and the full prediction."""
    model = _as_model(model_or_checkpoint)
    pred, _ = model.predict(doc, mode=mode)
    return pred.temporal_graph(), pred


def predict_corpus(model_or_checkpoint, docs: Iterable[Document], mode: str | None = None) -> list[DocumentPrediction]:
    model = _as_model(model_or_checkpoint)
    return [model.predict(doc, mode=mode)[0] for doc in docs]


def evaluate(model_or_checkpoint, docs: Sequence[Document], mode: str | None = None, strata=None,
             exact_spans: bool = False) -> MetricReport:
    model = _as_model(model_or_checkpoint)
    preds = predict_corpus(model, docs, mode)
    gold = [gold_prediction(d) for d in docs]
    return evaluate_predictions(zip(preds, gold), model.config.schema, model.config.window_length, strata, exact_spans)
