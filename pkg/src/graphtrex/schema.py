"""Label inventories shared by every stage of the pipeline."""
from __future__ import annotations

from dataclasses import dataclass

NOT_ENTITY = "NOT-ENTITY"
NO_RELATION = "NO-RELATION"

BEFORE = "Before"
AFTER = "After"
OVERLAP = "Overlap"
TEMPORAL_RELATIONS = (BEFORE, AFTER, OVERLAP)

# "none" classes sit at index 0 so that the lowest-index tie-break favours them.
RELATION_CLASSES = (NO_RELATION, BEFORE, AFTER, OVERLAP)

I2B2_EVENT_TYPES = (
    "PROBLEM",
    "TREATMENT",
    "TEST",
    "CLINICAL_DEPARTMENT",
    "EVIDENTIAL",
    "OCCURRENCE",
)
I2B2_TIMEX_TYPES = ("DATE", "TIME", "DURATION", "FREQUENCY")
SECTIME_TYPES = ("ADMISSION", "DISCHARGE")

CONTEXT = "CONTEXT"
WINDOW = "WINDOW"

INVERSE = {BEFORE: AFTER, AFTER: BEFORE, OVERLAP: OVERLAP}


@dataclass(frozen=True)
class Schema:
    name: str
    entity_types: tuple[str, ...]
    # E3C has no After class in its gold standard, so Before links are never mirrored.
    flip_before: bool = True
    sectime_date: bool = False

    @property
    def entity_classes(self) -> tuple[str, ...]:
        return (NOT_ENTITY,) + self.entity_types

    @property
    def relation_classes(self) -> tuple[str, ...]:
        return RELATION_CLASSES

    @property
    def event_types(self) -> tuple[str, ...]:
        return tuple(t for t in self.entity_types if t not in I2B2_TIMEX_TYPES + SECTIME_TYPES)

    @property
    def timex_types(self) -> tuple[str, ...]:
        return tuple(t for t in self.entity_types if t in I2B2_TIMEX_TYPES + SECTIME_TYPES)


I2B2 = Schema("I2B2", I2B2_EVENT_TYPES + I2B2_TIMEX_TYPES + SECTIME_TYPES, True, True)
E3C = Schema("E3C", ("EVENT",), flip_before=False)
# the generated notes only use these types; a smaller inventory keeps toy models small
SYNTHETIC = Schema("SYNTHETIC", ("PROBLEM", "TREATMENT", "TEST", "OCCURRENCE", "DATE"), True, False)

SCHEMAS = {s.name: s for s in (I2B2, E3C, SYNTHETIC)}


def get_schema(name: str | Schema) -> Schema:
    if isinstance(name, Schema):
        return name
    try:
        return SCHEMAS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown schema {name!r}; expected one of {sorted(SCHEMAS)}") from None
