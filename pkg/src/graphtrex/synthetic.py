"""Small synthetic clinical-style documents with time-consistent TLinks.

Each entity gets a hidden integer timestamp; every annotated relation is
read off the timestamps, so the gold graph is always consistent.  Cue words
between consecutive entities hint at their order.
"""
from __future__ import annotations

import itertools
import random

from .corpus import Document, EntityAnnotation, TLinkAnnotation
from .schema import AFTER, BEFORE, OVERLAP

LEXICON = {
    "PROBLEM": ["fever", "cough", "pneumonia", "chest pain", "sepsis", "anemia", "rash", "nausea"],
    "TREATMENT": ["aspirin", "surgery", "heparin", "antibiotics", "insulin", "dialysis"],
    "TEST": ["ct scan", "x-ray", "biopsy", "ecg", "blood culture", "mri"],
    "OCCURRENCE": ["admitted", "transferred", "discharged", "seen"],
    "DATE": ["monday", "06/12", "yesterday", "march 3"],
}
FILLER = ("the patient was noted to have a mild course and no further issues and remained stable on the ward "
          "as family members were present for discussion of plan").split()
CUES = {BEFORE: ["then", "later", "followed by"], AFTER: ["after", "following"], OVERLAP: ["with", "during", "while"]}


def _relation(t_a: int, t_b: int) -> str:
    if t_a < t_b:
        return BEFORE
    if t_a > t_b:
        return AFTER
    return OVERLAP


def _walk(rng: random.Random, n: int, backward_rate: float) -> list[int]:
    """Timestamps that mostly stay level or move forward in text order."""
    times = [0]
    for _ in range(n - 1):
        u = rng.random()
        step = -1 if u < backward_rate else (0 if u < backward_rate + (1 - backward_rate) / 2 else 1)
        times.append(times[-1] + step)
    return times


def generate_document(doc_id: str, rng: random.Random, num_entities: int = 6, num_relations: int = 8,
                      target_tokens: int = 50, max_time: int = 3, backward_rate: float | None = None) -> Document:
    """One document; ``backward_rate`` switches from uniform timestamps to a
    mostly-chronological walk, which makes links between distant entities
    inferable from the chain of cues between neighbours."""
    types = list(LEXICON)
    if backward_rate is None:
        ents = [(rng.choice(types), rng.randint(0, max_time)) for _ in range(num_entities)]
    else:
        ents = list(zip((rng.choice(types) for _ in range(num_entities)), _walk(rng, num_entities, backward_rate)))
    words: list[str] = []
    spans = []

    def gap(n):
        words.extend(rng.choice(FILLER) for _ in range(n))

    ent_tokens = [rng.choice(LEXICON[t]).split() for t, _ in ents]
    budget = max(target_tokens - sum(map(len, ent_tokens)), 0)
    per_gap = max(budget // (num_entities + 1), 3)
    gap(per_gap - 1)
    for k, ((etype, time), toks) in enumerate(zip(ents, ent_tokens)):
        if k > 0:
            cue = rng.choice(CUES[_relation(ents[k - 1][1], time)]).split()
            gap(max(per_gap - len(cue) - 1, 1))
            words.extend(cue)
        start = len(words)
        words.extend(toks)
        spans.append((start, len(words) - 1))
    gap(max(target_tokens - len(words), 1))

    tokens, pos = [], 0
    for w in words:
        tokens.append((w, pos, pos + len(w)))
        pos += len(w) + 1
    text = " ".join(words)
    entities = [EntityAnnotation(f"E{k}", s, e, etype) for k, ((s, e), (etype, _)) in enumerate(zip(spans, ents))]
    pairs = list(itertools.combinations(range(num_entities), 2))
    chosen = sorted(rng.sample(pairs, min(num_relations, len(pairs))))
    tlinks = [TLinkAnnotation(f"E{a}", f"E{b}", _relation(ents[a][1], ents[b][1])) for a, b in chosen]
    doc = Document(doc_id, text, tokens, entities, tlinks, "SYNTHETIC")
    doc.validate()
    return doc


def synthetic_corpus(num_docs: int = 5, seed: int = 0, **kwargs) -> list[Document]:
    rng = random.Random(seed)
    return [generate_document(f"synthetic-{i:03d}", rng, **kwargs) for i in range(num_docs)]
