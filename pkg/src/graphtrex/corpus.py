"""Corpus ingestion: I2B2 2012 and E3C readers, annotation repair and splits.

Both readers return :class:`Document` objects whose gold annotations are
expressed over token indices.  Every correction applied to the distributed
annotations is written to ``Document.repair_log`` so that it can be audited
(see :func:`write_repair_log`).
"""
from __future__ import annotations

import json
import random
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .schema import AFTER, BEFORE, INVERSE, OVERLAP, SECTIME_TYPES, Schema, get_schema

Token = tuple[str, int, int]
Tokenizer = Callable[[str], list[Token]]

SOURCES = ("I2B2", "E3C", "SYNTHETIC")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def regex_tokenize(text: str) -> list[Token]:
    """Split ``text`` into word and punctuation tokens with character offsets."""
    return [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


class ParseError(ValueError):
    """Raised when an annotation file cannot be parsed.

    ``offset`` is the byte offset in the file at which parsing failed.
    """

    def __init__(self, message: str, offset: int, path: str | None = None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (byte offset {offset})")
        self.offset = offset
        self.path = path


@dataclass(frozen=True)
class EntityAnnotation:
    entity_id: str
    token_start: int
    token_end: int  # inclusive
    etype: str

    def __post_init__(self):
        if self.token_start > self.token_end:
            raise ValueError(f"entity {self.entity_id}: start {self.token_start} > end {self.token_end}")

    @property
    def width(self) -> int:
        return self.token_end - self.token_start + 1

    def overlaps(self, other: "EntityAnnotation") -> bool:
        return self.token_start <= other.token_end and other.token_start <= self.token_end


@dataclass(frozen=True)
class TLinkAnnotation:
    head_id: str
    tail_id: str
    rtype: str

    def __post_init__(self):
        if self.head_id == self.tail_id:
            raise ValueError(f"self-loop TLink on {self.head_id}")
        if self.rtype not in (BEFORE, AFTER, OVERLAP):
            raise ValueError(f"unknown TLink type {self.rtype!r}")


@dataclass(frozen=True)
class RepairEntry:
    kind: str
    item: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "item": self.item, "detail": self.detail}


@dataclass
class Document:
    doc_id: str
    # Whitespace outside tokens is not carried by the JSONL format, so the raw
    # text is excluded from equality.
    text: str = field(compare=False, repr=False)
    tokens: list[Token]
    gold_entities: list[EntityAnnotation] = field(default_factory=list)
    gold_tlinks: list[TLinkAnnotation] = field(default_factory=list)
    source: str = "SYNTHETIC"
    repair_log: list[RepairEntry] = field(default_factory=list, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def token_strings(self) -> list[str]:
        return [t[0] for t in self.tokens]

    def entity_index(self) -> dict[str, EntityAnnotation]:
        return {e.entity_id: e for e in self.gold_entities}

    def validate(self) -> None:
        last_end = -1
        for i, (_, start, end) in enumerate(self.tokens):
            if start < last_end or end < start:
                raise ValueError(f"{self.doc_id}: token {i} overlaps or is out of order")
            last_end = end
        ids = set()
        for ent in self.gold_entities:
            if not 0 <= ent.token_start <= ent.token_end < len(self.tokens):
                raise ValueError(f"{self.doc_id}: entity {ent.entity_id} outside token range")
            ids.add(ent.entity_id)
        for link in self.gold_tlinks:
            if link.head_id not in ids or link.tail_id not in ids:
                raise ValueError(f"{self.doc_id}: TLink {link} references a missing entity")


@dataclass
class CorpusSplit:
    train: list[Document]
    dev: list[Document]
    test: list[Document] = field(default_factory=list)


# ---------------------------------------------------------------------------
# annotation utilities


def snap_to_tokens(tokens: Sequence[Token], char_start: int, char_end: int) -> tuple[int, int] | None:
    """Return the smallest token range covering ``[char_start, char_end)``."""
    covered = [i for i, (_, s, e) in enumerate(tokens) if s < char_end and e > char_start]
    if not covered:
        return None
    return covered[0], covered[-1]


def _normalize_surface(s: str) -> str:
    return " ".join(s.split()).lower()


def repair_offsets(text: str, start: int, end: int, surface: str | None) -> tuple[int, int] | None:
    """Re-align ``[start, end)`` so that the slice matches ``surface``.

    Returns the corrected offsets, or ``None`` when the surface form occurs
    nowhere in ``text``.  Among several occurrences the one nearest to the
    annotated start wins.
    """
    if not surface or not surface.strip():
        return (start, end) if 0 <= start <= end <= len(text) else None
    if 0 <= start <= end <= len(text) and _normalize_surface(text[start:end]) == _normalize_surface(surface):
        return start, end
    pattern = r"\s+".join(re.escape(part) for part in surface.split())
    best = None
    for m in re.finditer(pattern, text, flags=re.IGNORECASE):
        dist = abs(m.start() - start)
        if best is None or dist < best[0]:
            best = (dist, m.start(), m.end())
    if best is None:
        return None
    return best[1], best[2]


def resolve_overlaps(entities: Sequence[EntityAnnotation]) -> list[EntityAnnotation]:
    """Drop overlapping annotations so that no two survivors share a token.

    ADMISSION/DISCHARGE win against every other type; otherwise the earliest
    annotation wins.  Survivors keep their annotation order.
    """
    kept: list[EntityAnnotation] = []
    priority = [e for e in entities if e.etype in SECTIME_TYPES]
    rest = [e for e in entities if e.etype not in SECTIME_TYPES]
    for ent in priority + rest:
        if not any(ent.overlaps(k) for k in kept):
            kept.append(ent)
    order = {id(e): i for i, e in enumerate(entities)}
    return sorted(kept, key=lambda e: order[id(e)])


def augment_flip_relations(tlinks: Iterable[TLinkAnnotation], schema: str | Schema = "I2B2") -> list[TLinkAnnotation]:
    """Add the inverse of every TLink (``A<B`` gives ``B>A``; ``A=B`` gives ``B=A``).

    Under a schema without an After class only Overlap links are mirrored.
    """
    schema = get_schema(schema)
    out: dict[TLinkAnnotation, None] = {}
    for link in tlinks:
        out[link] = None
        if link.rtype == OVERLAP or schema.flip_before:
            out[TLinkAnnotation(link.tail_id, link.head_id, INVERSE[link.rtype])] = None
    return list(out)


def _dedupe(links: Iterable[TLinkAnnotation]) -> list[TLinkAnnotation]:
    return list(dict.fromkeys(links))


def _byte_offset(raw: str, char_pos: int) -> int:
    return len(raw[:char_pos].encode("utf-8"))


# ---------------------------------------------------------------------------
# I2B2 2012

_I2B2_TEXT_RE = re.compile(r"<TEXT>\s*<!\[CDATA\[(.*?)\]\]>\s*</TEXT>", re.S)
_I2B2_TAGS_RE = re.compile(r"<TAGS>(.*?)</TAGS>", re.S)
_I2B2_TAG_RE = re.compile(r"<(EVENT|TIMEX3|SECTIME|TLINK)\b([^<>]*?)/>", re.S)
_ATTR_RE = re.compile(r'([\w:-]+)\s*=\s*"([^"]*)"')

_I2B2_EVENT_TYPES = {
    "PROBLEM": "PROBLEM",
    "TEST": "TEST",
    "TREATMENT": "TREATMENT",
    "CLINICAL_DEPT": "CLINICAL_DEPARTMENT",
    "CLINICAL_DEPARTMENT": "CLINICAL_DEPARTMENT",
    "EVIDENTIAL": "EVIDENTIAL",
    "OCCURRENCE": "OCCURRENCE",
}
_I2B2_TIMEX_TYPES = {t: t for t in ("DATE", "TIME", "DURATION", "FREQUENCY")}
_I2B2_SECTIME_TYPES = {t: t for t in SECTIME_TYPES}

# The 2012 release merged the TimeML inventory into three classes; stray
# fine-grained labels are folded the same way.
I2B2_TLINK_TYPES = {
    "BEFORE": BEFORE,
    "AFTER": AFTER,
    "OVERLAP": OVERLAP,
    "SIMULTANEOUS": OVERLAP,
    "DURING": OVERLAP,
    "BEGUN_BY": OVERLAP,
    "ENDED_BY": OVERLAP,
    "BEFORE_OVERLAP": BEFORE,
}


def _parse_i2b2(raw: str, path: str | None):
    m = _I2B2_TEXT_RE.search(raw)
    if m is None:
        pos = raw.find("<TEXT>")
        raise ParseError("missing <TEXT><![CDATA[...]]></TEXT> block", _byte_offset(raw, max(pos, 0)), path)
    text = m.group(1)
    tags_m = _I2B2_TAGS_RE.search(raw, m.end())
    if tags_m is None:
        pos = raw.find("<TAGS", m.end())
        raise ParseError("missing <TAGS>...</TAGS> block", _byte_offset(raw, pos if pos >= 0 else len(raw)), path)
    body, base = tags_m.group(1), tags_m.start(1)
    tags = []
    pos = 0
    while True:
        lt = body.find("<", pos)
        if lt < 0:
            break
        tag_m = _I2B2_TAG_RE.match(body, lt)
        if tag_m is None:
            raise ParseError("malformed or unknown tag", _byte_offset(raw, base + lt), path)
        tags.append((tag_m.group(1), dict(_ATTR_RE.findall(tag_m.group(2)))))
        pos = tag_m.end()
    return text, tags


def load_i2b2_document(
    path: str | Path,
    tokenizer: Tokenizer = regex_tokenize,
    doc_id: str | None = None,
) -> Document:
    """Read one I2B2 2012 ``.xml`` annotation file.

    Offsets are re-aligned to the annotated surface forms, overlapping
    annotations are resolved with :func:`resolve_overlaps`, and TLinks whose
    endpoints cannot be resolved are dropped.  TLinks pointing at an
    unannotated ``Discharge`` id are re-bound to an entity whose text is
    "Discharge" when one exists.
    """
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    text, tags = _parse_i2b2(raw, str(path))
    tokens = tokenizer(text)
    log: list[RepairEntry] = []

    entities: list[EntityAnnotation] = []
    surfaces: dict[str, str] = {}
    raw_links = []
    for tag, attrs in tags:
        if tag == "TLINK":
            raw_links.append(attrs)
            continue
        eid = attrs.get("id", "")
        table = {"EVENT": _I2B2_EVENT_TYPES, "TIMEX3": _I2B2_TIMEX_TYPES, "SECTIME": _I2B2_SECTIME_TYPES}[tag]
        etype = table.get(attrs.get("type", "").strip().upper())
        if etype is None:
            log.append(RepairEntry("unannotated_type", eid, f"{tag} type={attrs.get('type', '')!r}"))
            continue
        ent = _align_entity(text, tokens, eid, etype, attrs.get("start"), attrs.get("end"), attrs.get("text"), log)
        if ent is not None:
            entities.append(ent)
            surfaces[eid] = text[tokens[ent.token_start][1] : tokens[ent.token_end][2]]

    survivors, rebound = _resolve_with_rebinding(entities, log)
    alive = {e.entity_id for e in survivors}
    all_ids = {e.entity_id for e in entities}

    discharge_id = next(
        (e.entity_id for e in survivors if surfaces.get(e.entity_id, "").strip().lower() == "discharge"),
        None,
    )
    links = []
    for attrs in raw_links:
        lid = attrs.get("id", "")
        head, tail = attrs.get("fromID", "").strip(), attrs.get("toID", "").strip()
        rtype = I2B2_TLINK_TYPES.get(attrs.get("type", "").strip().upper())
        if rtype is None:
            log.append(RepairEntry("unknown_tlink_type", lid, attrs.get("type", "")))
            continue
        if not head or not tail:
            log.append(RepairEntry("missing_endpoint", lid, f"fromID={head!r} toID={tail!r}"))
            continue
        endpoints = []
        for ep in (head, tail):
            if ep not in all_ids and ep.lower() == "discharge":
                if discharge_id is None:
                    log.append(RepairEntry("unbound_discharge", lid, "no entity with text 'Discharge'"))
                    break
                log.append(RepairEntry("rebound_discharge", lid, f"{ep} -> {discharge_id}"))
                ep = discharge_id
            ep = rebound.get(ep, ep)
            if ep not in alive:
                log.append(RepairEntry("dangling_endpoint", lid, ep))
                break
            endpoints.append(ep)
        else:
            if endpoints[0] == endpoints[1]:
                log.append(RepairEntry("self_loop", lid, endpoints[0]))
                continue
            links.append(TLinkAnnotation(endpoints[0], endpoints[1], rtype))

    return Document(
        doc_id=doc_id or path.stem,
        text=text,
        tokens=tokens,
        gold_entities=survivors,
        gold_tlinks=_dedupe(links),
        source="I2B2",
        repair_log=log,
    )


def _align_entity(text, tokens, eid, etype, start, end, surface, log) -> EntityAnnotation | None:
    try:
        start_i, end_i = int(start), int(end)
    except (TypeError, ValueError):
        log.append(RepairEntry("bad_offsets", eid, f"start={start!r} end={end!r}"))
        return None
    fixed = repair_offsets(text, start_i, end_i, surface)
    if fixed is None:
        log.append(RepairEntry("unresolvable_offsets", eid, f"{surface!r} not found near {start_i}"))
        return None
    if fixed != (start_i, end_i):
        log.append(RepairEntry("offset_shift", eid, f"[{start_i},{end_i}) -> [{fixed[0]},{fixed[1]})"))
    span = snap_to_tokens(tokens, *fixed)
    if span is None:
        log.append(RepairEntry("no_tokens", eid, f"[{fixed[0]},{fixed[1]}) covers no token"))
        return None
    return EntityAnnotation(eid, span[0], span[1], etype)


def _resolve_with_rebinding(entities, log):
    survivors = resolve_overlaps(entities)
    alive = {e.entity_id for e in survivors}
    rebound = {}
    for ent in entities:
        if ent.entity_id in alive:
            continue
        winner = next(s for s in survivors if s.overlaps(ent))
        if (winner.token_start, winner.token_end) == (ent.token_start, ent.token_end):
            rebound[ent.entity_id] = winner.entity_id
            log.append(RepairEntry("overlap_merged", ent.entity_id, f"same span as {winner.entity_id}"))
        else:
            log.append(RepairEntry("overlap_dropped", ent.entity_id, f"overlaps {winner.entity_id}"))
    return survivors, rebound


# ---------------------------------------------------------------------------
# E3C

_XMI_ID = "{http://www.omg.org/XMI}id"
E3C_ENTITY_TAGS = {"EVENT", "TIMEX3", "BODYPART", "ACTOR", "RML", "ENTITY", "CLINENTITY"}
_E3C_ENDPOINT_ATTRS = (("Governor", "Dependent"), ("source", "target"), ("fromID", "toID"), ("from", "to"))


def merge_e3c_labels(head: str, label: str, tail: str) -> tuple[str, str, str] | None:
    """Map an E3C TLink label onto the Before/Overlap inventory.

    Contains, Overlap and Simultaneous become Overlap; Before and Ends-On
    become Before; Begins-On becomes Before with the endpoints swapped.
    Returns ``None`` for labels outside that inventory.
    """
    key = label.strip().upper().replace("_", "-")
    if key in ("CONTAINS", "OVERLAP", "SIMULTANEOUS"):
        return head, OVERLAP, tail
    if key in ("BEFORE", "ENDS-ON"):
        return head, BEFORE, tail
    if key == "BEGINS-ON":
        return tail, BEFORE, head
    return None


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def load_e3c_document(
    path: str | Path,
    tokenizer: Tokenizer = regex_tokenize,
    doc_id: str | None = None,
) -> Document:
    """Read one E3C layer-1 UIMA XMI file, keeping EVENT entities and EVENT-EVENT TLinks."""
    path = Path(path)
    raw_bytes = path.read_bytes()
    try:
        root = ET.fromstring(raw_bytes)
    except ET.ParseError as exc:
        line, col = exc.position
        lines = raw_bytes.split(b"\n")
        offset = sum(len(lines[i]) + 1 for i in range(line - 1)) + col
        raise ParseError(f"malformed XMI: {exc}", offset, str(path)) from exc

    text = None
    for el in root.iter():
        if _local(el.tag) == "Sofa" and "sofaString" in el.attrib:
            text = el.attrib["sofaString"]
            break
    if text is None:
        raise ParseError("no Sofa element with sofaString", 0, str(path))
    tokens = tokenizer(text)
    log: list[RepairEntry] = []

    entities = []
    kinds: dict[str, str] = {}
    links = []
    for el in root.iter():
        name = _local(el.tag).upper()
        xid = el.attrib.get(_XMI_ID, "")
        if name in E3C_ENTITY_TAGS and "begin" in el.attrib:
            kinds[xid] = name
            if name != "EVENT":
                continue
            ent = _align_entity(text, tokens, xid, "EVENT", el.attrib.get("begin"), el.attrib.get("end"), el.attrib.get("text"), log)
            if ent is not None:
                entities.append(ent)
        elif name == "TLINK":
            links.append((xid, el.attrib))

    survivors, rebound = _resolve_with_rebinding(entities, log)
    alive = {e.entity_id for e in survivors}
    tlinks = []
    for xid, attrs in links:
        pair = next(((attrs[a], attrs[b]) for a, b in _E3C_ENDPOINT_ATTRS if a in attrs and b in attrs), None)
        label = attrs.get("type") or attrs.get("relType") or attrs.get("label") or ""
        if pair is None:
            log.append(RepairEntry("missing_endpoint", xid, "no governor/dependent"))
            continue
        if kinds.get(pair[0]) != "EVENT" or kinds.get(pair[1]) != "EVENT":
            log.append(RepairEntry("non_event_tlink", xid, f"{kinds.get(pair[0])}-{kinds.get(pair[1])}"))
            continue
        merged = merge_e3c_labels(pair[0], label, pair[1])
        if merged is None:
            log.append(RepairEntry("unknown_tlink_type", xid, label))
            continue
        head, rtype, tail = merged
        head, tail = rebound.get(head, head), rebound.get(tail, tail)
        if head not in alive or tail not in alive:
            log.append(RepairEntry("dangling_endpoint", xid, f"{head}->{tail}"))
            continue
        if head == tail:
            log.append(RepairEntry("self_loop", xid, head))
            continue
        tlinks.append(TLinkAnnotation(head, tail, rtype))

    return Document(
        doc_id=doc_id or path.stem,
        text=text,
        tokens=tokens,
        gold_entities=survivors,
        gold_tlinks=_dedupe(tlinks),
        source="E3C",
        repair_log=log,
    )


# ---------------------------------------------------------------------------
# splits


def split_corpus(
    docs: Sequence[Document],
    dev: int | float | None = None,
    seed: int = 0,
    test_docs: Sequence[Document] = (),
) -> CorpusSplit:
    """Sample a development set from the training pool ``docs``.

    ``dev`` is either a document count or a fraction of the pool.  When it is
    omitted, 9 documents are sampled for I2B2 and 20% for other corpora.
    """
    docs = list(docs)
    if dev is None:
        dev = 9 if docs and docs[0].source == "I2B2" else 0.2
    if isinstance(dev, float) and not isinstance(dev, bool):
        if not 0.0 <= dev < 1.0:
            raise ValueError(f"dev fraction must lie in [0, 1), got {dev}")
        n_dev = int(round(dev * len(docs)))
    else:
        n_dev = int(dev)
    if n_dev < 0 or n_dev > len(docs):
        raise ValueError(f"cannot sample {n_dev} dev documents from a pool of {len(docs)}")
    ids = [d.doc_id for d in docs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate doc_id in training pool")
    test_ids = {d.doc_id for d in test_docs}
    if test_ids & set(ids):
        raise ValueError("train and test pools share doc_ids")
    chosen = set(random.Random(seed).sample(range(len(docs)), n_dev))
    train = [d for i, d in enumerate(docs) if i not in chosen]
    dev_docs = [d for i, d in enumerate(docs) if i in chosen]
    return CorpusSplit(train=train, dev=dev_docs, test=list(test_docs))


# ---------------------------------------------------------------------------
# serialization


def document_to_dict(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "tokens": [[t, s, e] for t, s, e in doc.tokens],
        "entities": [
            {"id": e.entity_id, "start": e.token_start, "end": e.token_end, "type": e.etype}
            for e in doc.gold_entities
        ],
        "tlinks": [{"head": l.head_id, "tail": l.tail_id, "type": l.rtype} for l in doc.gold_tlinks],
        "source": doc.source,
    }


def _text_from_tokens(tokens: Sequence[Token]) -> str:
    chars: list[str] = []
    for tok, start, _ in tokens:
        if len(chars) < start:
            chars.extend(" " * (start - len(chars)))
        chars[start : start + len(tok)] = tok
    return "".join(chars)


def document_from_dict(obj: dict) -> Document:
    tokens = [(str(t), int(s), int(e)) for t, s, e in obj["tokens"]]
    source = obj.get("source", "SYNTHETIC")
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}")
    return Document(
        doc_id=obj["doc_id"],
        text=_text_from_tokens(tokens),
        tokens=tokens,
        gold_entities=[EntityAnnotation(e["id"], e["start"], e["end"], e["type"]) for e in obj["entities"]],
        gold_tlinks=[TLinkAnnotation(l["head"], l["tail"], l["type"]) for l in obj["tlinks"]],
        source=source,
    )


def write_jsonl(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_dict(doc), ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[Document]:
    with open(path, encoding="utf-8") as fh:
        return [document_from_dict(json.loads(line)) for line in fh if line.strip()]


def write_repair_log(doc: Document, directory: str | Path) -> Path:
    out = Path(directory) / f"{doc.doc_id}.repair.json"
    payload = {"doc_id": doc.doc_id, "entries": [r.to_dict() for r in doc.repair_log]}
    out.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return out
