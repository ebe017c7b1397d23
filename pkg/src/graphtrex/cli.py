"""Command-line entry point: ``python -m graphtrex <command>``.

Commands
--------
preprocess    raw I2B2/E3C annotation files -> normalized JSONL + repair logs
train         config file + JSONL corpus -> checkpoint
predict       checkpoint + JSONL documents -> prediction JSONL
evaluate      predictions (or a checkpoint) + gold JSONL -> metric report
closure       temporal graph JSON -> closed and reduced graph (JSON, DOT)
export-graph  checkpoint + one document -> heterogeneous graph (JSON, DOT)

Relative corpus paths are resolved against ``$GRAPHTREX_CORPUS_ROOT`` when set.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

CORPUS_ROOT_ENV = "GRAPHTREX_CORPUS_ROOT"


def corpus_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(CORPUS_ROOT_ENV)
    if root and not path.is_absolute() and not path.exists():
        return Path(root) / path
    return path


def _write(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def cmd_preprocess(args) -> int:
    from .corpus import augment_flip_relations, load_e3c_document, load_i2b2_document, write_jsonl, write_repair_log

    src = corpus_path(args.input)
    loader, pattern = (load_i2b2_document, "*.xml") if args.format == "i2b2" else (load_e3c_document, "*.xmi")
    files = sorted(src.glob(pattern)) if src.is_dir() else [src]
    docs = [loader(f) for f in files]
    if args.flip:
        for d in docs:
            d.gold_tlinks = augment_flip_relations(d.gold_tlinks, "I2B2" if args.format == "i2b2" else "E3C")
    write_jsonl(docs, args.output)
    if args.repair_dir:
        Path(args.repair_dir).mkdir(parents=True, exist_ok=True)
        for d in docs:
            write_repair_log(d, args.repair_dir)
    repairs = sum(len(d.repair_log) for d in docs)
    print(f"wrote {len(docs)} documents to {args.output} ({repairs} repair-log entries)")
    return 0


def cmd_train(args) -> int:
    from .config import TrainConfig
    from .corpus import CorpusSplit, read_jsonl, split_corpus
    from .pipeline import train

    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    if overrides:
        typed = {}
        for k, v in overrides.items():
            try:
                typed[k] = json.loads(v)
            except json.JSONDecodeError:
                typed[k] = v
        config = config.replace(**typed)
    docs = read_jsonl(corpus_path(args.train))
    if args.dev:
        split = CorpusSplit(docs, read_jsonl(corpus_path(args.dev)))
    else:
        split = split_corpus(docs, dev=args.dev_size, seed=config.seed)
    ckpt = train(config, split)
    ckpt.save(args.output)
    f1 = ckpt.dev_report.tempeval.f1 if ckpt.dev_report else float("nan")
    print(f"saved epoch {ckpt.epoch} checkpoint to {args.output} (dev tempeval F1 {f1:.4f})")
    return 0


def cmd_predict(args) -> int:
    from .corpus import read_jsonl
    from .pipeline import Checkpoint, predict_corpus

    model = Checkpoint.load(args.checkpoint).model()
    preds = predict_corpus(model, read_jsonl(corpus_path(args.input)), mode=args.mode)
    _write("\n".join(json.dumps(p.to_json()) for p in preds), args.output)
    return 0


def cmd_evaluate(args) -> int:
    from .corpus import read_jsonl
    from .evaluation import evaluate_predictions, gold_prediction, read_predictions
    from .pipeline import Checkpoint, predict_corpus

    gold_docs = read_jsonl(corpus_path(args.gold))
    gold = {d.doc_id: gold_prediction(d) for d in gold_docs}

    def load(path):
        if str(path).endswith((".pt", ".ckpt")):
            return predict_corpus(Checkpoint.load(path).model(), gold_docs, mode=args.mode)
        return read_predictions(path)

    def report(preds):
        missing = [p.doc_id for p in preds if p.doc_id not in gold]
        if missing:
            raise SystemExit(f"predictions for unknown documents: {missing[:5]}")
        return evaluate_predictions([(p, gold[p.doc_id]) for p in preds], args.schema, args.window_length,
                                    exact_spans=args.exact)

    main = report(load(args.predictions))
    base = report(load(args.baseline)) if args.baseline else None
    if args.format == "json":
        obj = main.to_json()
        if base is not None:
            from .evaluation import improvement

            obj["baseline"] = base.to_json()
            obj["improvement"] = improvement(base.tempeval.f1, main.tempeval.f1)
        _write(json.dumps(obj, indent=2), args.output)
    else:
        _write(main.to_table(base), args.output)
    return 0


def cmd_closure(args) -> int:
    from .temporal import TemporalGraph, scoring_reduction, temporal_closure

    obj = json.loads(Path(args.input).read_text(encoding="utf-8"))
    to_node = lambda x: tuple(x) if isinstance(x, list) else x
    graph = TemporalGraph.from_triples(
        [(to_node(h), r, to_node(t)) for h, r, t in obj["edges"]], [to_node(n) for n in obj.get("nodes", [])]
    )
    closed = temporal_closure(graph)
    reduced = scoring_reduction(graph)
    _write(json.dumps({"closure": closed.to_json(), "reduction": reduced.to_json(),
                       "consistent": not closed.conflicts}, indent=2), args.output)
    if args.dot:
        target = reduced if args.dot_graph == "reduction" else closed
        Path(args.dot).write_text(target.to_dot() + "\n", encoding="utf-8")
    return 0


def cmd_export_graph(args) -> int:
    import torch

    from .corpus import read_jsonl
    from .pipeline import Checkpoint

    model = Checkpoint.load(args.checkpoint).model()
    docs = read_jsonl(corpus_path(args.input))
    doc = next((d for d in docs if d.doc_id == args.doc_id), None) if args.doc_id else docs[0]
    if doc is None:
        raise SystemExit(f"no document {args.doc_id!r} in {args.input}")
    with torch.no_grad():
        out = model(doc, mode="graphtrex")
    if out.graph is None:
        raise SystemExit(f"document {doc.doc_id} has fewer than two predicted entities; no graph was built")
    _write(out.graph.to_dot(doc.doc_id) if args.format == "dot" else out.graph.dumps(), args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphtrex", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="normalize a raw corpus to JSONL")
    s.add_argument("input", help="annotation file or directory")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--format", choices=("i2b2", "e3c"), default="i2b2")
    s.add_argument("--repair-dir", help="write <doc_id>.repair.json files here")
    s.add_argument("--flip", action="store_true", help="add inverse TLinks (training augmentation)")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("train", help="training JSONL")
    s.add_argument("-o", "--output", required=True, help="checkpoint path")
    s.add_argument("-c", "--config", help="JSON or YAML file with TrainConfig keys")
    s.add_argument("--dev", help="dev JSONL; sampled from the training pool when omitted")
    s.add_argument("--dev-size", type=float, default=None, help="dev count (>= 1) or fraction (< 1)")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="decode documents with a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("input", help="JSONL documents")
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--mode", choices=("graphtrex", "spantrex"))
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="score predictions against gold")
    s.add_argument("predictions", help="prediction JSONL or a checkpoint (.pt/.ckpt)")
    s.add_argument("gold", help="gold JSONL documents")
    s.add_argument("--baseline", help="second system for the %%IMP column")
    s.add_argument("--schema", default="I2B2")
    s.add_argument("--window-length", type=int, default=512)
    s.add_argument("--exact", action="store_true", help="exact instead of partial span matching")
    s.add_argument("--mode", choices=("graphtrex", "spantrex"))
    s.add_argument("--format", choices=("table", "json"), default="table")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("closure", help="close and reduce a temporal graph")
    s.add_argument("input", help='JSON object with "edges": [[head, rel, tail], ...]')
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--dot", help="also write a DOT file")
    s.add_argument("--dot-graph", choices=("closure", "reduction"), default="reduction")
    s.set_defaults(func=cmd_closure)

    s = sub.add_parser("export-graph", help="dump the heterogeneous graph built for a document")
    s.add_argument("checkpoint")
    s.add_argument("input", help="JSONL documents")
    s.add_argument("--doc-id")
    s.add_argument("--format", choices=("json", "dot"), default="json")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_export_graph)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
