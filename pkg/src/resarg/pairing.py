"""Ordered component pairs, gold labels, and distance encoding.

Every ordered pair (a, b) of distinct same-document components carries four
gold labels: the two component classes, a boolean link label, and a relation
label over the extended domain (forward types, their inverses, NONE).
Exactly one of {link & forward}, {no-link & inverse}, {no-link & NONE}
holds per pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

from .corpus import NONE_LABEL, ArgComponent, CorpusSchema, Document

DISTANCE_BITS = 10
DISTANCE_CAP = 5


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class PairPolicy:
    """Filters applied while enumerating ordered pairs."""

    max_abs_distance: Optional[int] = None
    same_paragraph_only: bool = False
    same_section_only: bool = False
    include_self_pairs: bool = False

    def __post_init__(self):
        if self.max_abs_distance is not None and self.max_abs_distance < 1:
            raise PairingError("max_abs_distance must be >= 1")

    def to_dict(self) -> dict:
        return {
            "max_abs_distance": self.max_abs_distance,
            "same_paragraph_only": self.same_paragraph_only,
            "same_section_only": self.same_section_only,
            "include_self_pairs": self.include_self_pairs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairPolicy":
        return cls(
            max_abs_distance=d.get("max_abs_distance"),
            same_paragraph_only=bool(d.get("same_paragraph_only", False)),
            same_section_only=bool(d.get("same_section_only", False)),
            include_self_pairs=bool(d.get("include_self_pairs", False)),
        )

    @classmethod
    def load(cls, path) -> "PairPolicy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class PairInstance:
    doc_id: str
    source_id: str
    target_id: str
    distance: int
    source_label: str
    target_label: str
    link: bool
    relation: str
    is_self_pair: bool = False


def argumentative_distance(source: ArgComponent, target: ArgComponent) -> int:
    """Signed count of components separating source and target.

    Positive when the source precedes the target in document order.
    """
    if source.doc_id != target.doc_id or not source.doc_id:
        raise PairingError(
            f"distance undefined across documents: "
            f"{source.doc_id!r} vs {target.doc_id!r}")
    return target.order_index - source.order_index


def encode_distance(d: int):
    """10-bit distance code.

    The first 5 bits encode negative distances (ones right-aligned against
    the middle), the last 5 positive distances (ones left-aligned from the
    middle); |d| saturates at 5.  encode(-3) = 0011100000,
    encode(+2) = 0000011000.
    """
    bits = [0] * DISTANCE_BITS
    mag = min(abs(d), DISTANCE_CAP)
    if d < 0:
        for i in range(mag):
            bits[4 - i] = 1
    elif d > 0:
        for i in range(mag):
            bits[5 + i] = 1
    return bits


def collapse_for_test(relation: str) -> str:
    """Inverse labels become NONE at evaluation time; others unchanged."""
    from .corpus import INVERSE_SUFFIX

    if relation.endswith(INVERSE_SUFFIX):
        return NONE_LABEL
    return relation


def enumerate_pairs(doc: Document, policy: PairPolicy,
                    schema: CorpusSchema) -> List[PairInstance]:
    """All ordered pairs surviving the policy, with gold labels attached.

    Self pairs (a, a) are added only when the policy requests them and a's
    paragraph holds no other component; they are labeled no-link / NONE.
    When both a->b and b->a are annotated, the forward label wins for the
    pair (a, b) since it carries the link bit.
    """
    forward = {}
    for l in doc.links:
        key = (l.source_id, l.target_id)
        if key not in forward:  # duplicate annotations: first wins
            forward[key] = l.relation

    paragraph_counts = {}
    for c in doc.components:
        paragraph_counts[c.paragraph_id] = paragraph_counts.get(c.paragraph_id, 0) + 1

    pairs = []
    comps = doc.components
    for a in comps:
        for b in comps:
            if a.comp_id == b.comp_id:
                continue
            if policy.same_paragraph_only and a.paragraph_id != b.paragraph_id:
                continue
            if policy.same_section_only and a.section_id != b.section_id:
                continue
            d = argumentative_distance(a, b)
            if policy.max_abs_distance is not None and abs(d) > policy.max_abs_distance:
                continue
            if (a.comp_id, b.comp_id) in forward:
                link, rel = True, forward[(a.comp_id, b.comp_id)]
            elif (b.comp_id, a.comp_id) in forward:
                link, rel = False, schema.inverse_of(forward[(b.comp_id, a.comp_id)])
            else:
                link, rel = False, NONE_LABEL
            pairs.append(PairInstance(
                doc_id=doc.doc_id, source_id=a.comp_id, target_id=b.comp_id,
                distance=d, source_label=a.comp_type, target_label=b.comp_type,
                link=link, relation=rel))
        if policy.include_self_pairs and paragraph_counts[a.paragraph_id] == 1:
            pairs.append(PairInstance(
                doc_id=doc.doc_id, source_id=a.comp_id, target_id=a.comp_id,
                distance=0, source_label=a.comp_type, target_label=a.comp_type,
                link=False, relation=NONE_LABEL, is_self_pair=True))
    return pairs


# ---------------------------------------------------------------------------
# ndjson serialization
# ---------------------------------------------------------------------------

def pair_to_record(p: PairInstance) -> dict:
    return {
        "doc_id": p.doc_id,
        "source_id": p.source_id,
        "target_id": p.target_id,
        "distance": p.distance,
        "P_a": p.source_label,
        "P_b": p.target_label,
        "L": p.link,
        "R": p.relation,
        "is_self_pair": p.is_self_pair,
    }


def pair_from_record(d: dict) -> PairInstance:
    return PairInstance(
        doc_id=d["doc_id"], source_id=d["source_id"], target_id=d["target_id"],
        distance=int(d["distance"]), source_label=d["P_a"], target_label=d["P_b"],
        link=bool(d["L"]), relation=d["R"],
        is_self_pair=bool(d.get("is_self_pair", False)))


def save_pairs(path, pairs: Iterable[PairInstance],
               config_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as f:
        if config_hash:
            f.write(json.dumps({"_meta": {"config_hash": config_hash}},
                               sort_keys=True) + "\n")
        for p in pairs:
            f.write(json.dumps(pair_to_record(p), sort_keys=True) + "\n")


def load_pairs(path):
    """-> (pairs, meta)"""
    pairs = []
    meta = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if "_meta" in d:
                meta = d["_meta"]
                continue
            pairs.append(pair_from_record(d))
    return pairs, meta
