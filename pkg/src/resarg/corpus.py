"""Argument-annotated corpus model: parsing, validation, synthesis.

A corpus is a list of documents.  Each document owns an ordered list of
argumentative components (text spans with a class label) and a list of
directed links between them.  Offsets are byte offsets into the UTF-8
encoding of the document text, both in the normalized JSON form and in
standoff input.

Components may be discontinuous (several byte ranges separated by
non-argumentative text, written `start end;start end` in standoff files).
They are carried as multi-fragment components and split into independent
single-fragment components by :func:`split_discontinuous` at ingestion,
so downstream pair counts never see them.
"""

from __future__ import annotations

import json
import random
import re
import string
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

NONE_LABEL = "NONE"
INVERSE_SUFFIX = "_inv"

_PUNCT = set(string.punctuation)


class CorpusError(ValueError):
    """Malformed input that cannot be represented as a Document."""


class SplitTag(str, Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"
    UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class CorpusSchema:
    """Label domains of one corpus.

    The extended relation domain used at training time is
    ``forward ++ inverses ++ [NONE]``; inverses carry the ``_inv`` suffix.
    """

    corpus_id: str
    component_classes: tuple
    forward_relations: tuple

    def __post_init__(self):
        if len(set(self.component_classes)) != len(self.component_classes):
            raise CorpusError("duplicate component classes")
        if len(set(self.forward_relations)) != len(self.forward_relations):
            raise CorpusError("duplicate forward relations")

    @property
    def inverse_relations(self) -> tuple:
        return tuple(r + INVERSE_SUFFIX for r in self.forward_relations)

    @property
    def extended_relations(self) -> tuple:
        """forward ++ inverses ++ [NONE]; size 2*|forward| + 1."""
        return self.forward_relations + self.inverse_relations + (NONE_LABEL,)

    @property
    def test_relations(self) -> tuple:
        """Relation domain after inverse collapse: forward ++ [NONE]."""
        return self.forward_relations + (NONE_LABEL,)

    def inverse_of(self, relation: str) -> str:
        if relation.endswith(INVERSE_SUFFIX):
            return relation[: -len(INVERSE_SUFFIX)]
        return relation + INVERSE_SUFFIX

    def to_dict(self) -> dict:
        return {
            "corpus_id": self.corpus_id,
            "component_classes": list(self.component_classes),
            "forward_relations": list(self.forward_relations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSchema":
        return cls(
            corpus_id=d.get("corpus_id", ""),
            component_classes=tuple(d["component_classes"]),
            forward_relations=tuple(d["forward_relations"]),
        )

    @classmethod
    def load(cls, path) -> "CorpusSchema":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class ArgComponent:
    """One argumentative component.

    ``span`` is the hull (first fragment start, last fragment end);
    ``fragments`` has a single entry except for discontinuous components.
    ``doc_id`` and ``order_index`` are stamped by :meth:`Document.build`.
    """

    comp_id: str
    span: tuple
    tokens: tuple
    comp_type: str
    paragraph_id: int
    section_id: int
    order_index: int = -1
    fragments: tuple = ()
    doc_id: str = ""

    def __post_init__(self):
        if not self.fragments:
            object.__setattr__(self, "fragments", (self.span,))

    @property
    def start(self) -> int:
        return self.span[0]

    @property
    def end(self) -> int:
        return self.span[1]

    @property
    def is_discontinuous(self) -> bool:
        return len(self.fragments) > 1


@dataclass(frozen=True)
class LinkAnnotation:
    """Directed link; ``relation`` is always a forward label."""

    source_id: str
    target_id: str
    relation: str


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    components: tuple
    links: tuple
    split_tag: SplitTag = SplitTag.UNASSIGNED
    corpus_id: str = ""

    @classmethod
    def build(cls, doc_id, text, components, links, split_tag=SplitTag.UNASSIGNED,
              corpus_id="") -> "Document":
        """Normalize: sort components by start offset, stamp order_index and doc_id."""
        comps = sorted(components, key=lambda c: (c.start, c.end, c.comp_id))
        comps = tuple(
            replace(c, order_index=i, doc_id=doc_id) for i, c in enumerate(comps)
        )
        return cls(
            doc_id=doc_id,
            text=text,
            components=comps,
            links=tuple(links),
            split_tag=SplitTag(split_tag),
            corpus_id=corpus_id,
        )

    def component_by_id(self, comp_id: str) -> ArgComponent:
        for c in self.components:
            if c.comp_id == comp_id:
                return c
        raise KeyError(comp_id)

    @property
    def component_ids(self):
        return [c.comp_id for c in self.components]


@dataclass(frozen=True)
class Violation:
    rule: str
    ids: tuple
    message: str


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

def tokenize(text: str):
    """Whitespace split, then peel single leading/trailing punctuation chars.

    Deterministic by construction; off-the-shelf tokenizers misbehave on
    noisy user-generated text, so we keep the rule trivial.
    """
    tokens = []
    for chunk in text.split():
        lead = []
        trail = []
        while len(chunk) > 1 and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while len(chunk) > 1 and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


def _slice_bytes(text: str, start: int, end: int) -> str:
    return text.encode("utf-8")[start:end].decode("utf-8", errors="replace")


def component_text(text: str, fragments) -> str:
    return " ".join(_slice_bytes(text, s, e) for s, e in fragments)


# ---------------------------------------------------------------------------
# paragraph / section heuristics
# ---------------------------------------------------------------------------

_HEADING_RE = re.compile(r"^(#+\s+\S|\d+(\.\d+)*\.?\s+\S|[A-Z][A-Z0-9 \-]{2,78}$)")


def _line_byte_offsets(text: str):
    """(byte_offset, line) for each line of text."""
    out = []
    pos = 0
    for line in text.split("\n"):
        out.append((pos, line))
        pos += len(line.encode("utf-8")) + 1
    return out


def paragraph_and_section_ids(text: str):
    """Map byte offset -> (paragraph_id, section_id).

    Paragraphs are separated by one or more blank lines.  A section starts
    at a heading line: markdown ``#`` prefixes, numbered headings
    (``3.`` / ``3.1``), or short all-caps lines.  Returns a function of a
    byte offset.
    """
    lines = _line_byte_offsets(text)
    bounds = []  # (start_byte, paragraph_id, section_id)
    para = 0
    sect = 0
    prev_blank = True
    for off, line in lines:
        blank = not line.strip()
        if blank:
            prev_blank = True
            continue
        if prev_blank and bounds:
            para += 1
        if _HEADING_RE.match(line.strip()) and bounds:
            sect += 1
        bounds.append((off, para, sect))
        prev_blank = False

    def lookup(offset: int):
        best = (0, 0)
        for off, p, s in bounds:
            if off <= offset:
                best = (p, s)
            else:
                break
        return best

    return lookup


# ---------------------------------------------------------------------------
# brat-style standoff
# ---------------------------------------------------------------------------

_ENTITY_RE = re.compile(r"^(T\S*)\t(\S+) (.+?)(?:\t(.*))?$")
_RELATION_RE = re.compile(r"^(R\S*)\t(\S+) Arg1:(\S+) Arg2:(\S+)\s*$")


def parse_standoff(text_blob: str, ann_blob: str, schema: CorpusSchema,
                   doc_id: str = "doc") -> Document:
    """Parse one text + .ann pair into a validated Document.

    Entity lines: ``Tk<TAB>Type Start End<TAB>surface`` (discontinuous
    spans use ``Start End;Start End``).  Relation lines:
    ``Rk<TAB>Type Arg1:Ti Arg2:Tj``.  Anything else is rejected.
    """
    text_bytes = text_blob.encode("utf-8")
    locate = paragraph_and_section_ids(text_blob)
    components = []
    links = []
    seen_entities = set()

    for lineno, raw in enumerate(ann_blob.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("T"):
            m = _ENTITY_RE.match(line)
            if not m:
                raise CorpusError(f"line {lineno}: malformed entity line: {line!r}")
            ent_id, ent_type, span_field = m.group(1), m.group(2), m.group(3)
            if ent_type not in schema.component_classes:
                raise CorpusError(
                    f"line {lineno}: unknown component type {ent_type!r}")
            fragments = []
            for part in span_field.split(";"):
                nums = part.split()
                if len(nums) != 2:
                    raise CorpusError(
                        f"line {lineno}: malformed span field {span_field!r}")
                try:
                    start, end = int(nums[0]), int(nums[1])
                except ValueError:
                    raise CorpusError(
                        f"line {lineno}: non-integer span in {span_field!r}") from None
                if start < 0 or end > len(text_bytes) or start >= end:
                    raise CorpusError(f"line {lineno}: span out of bounds "
                                      f"({start}, {end}) for {ent_id}")
                fragments.append((start, end))
            fragments.sort()
            hull = (fragments[0][0], fragments[-1][1])
            toks = tokenize(component_text(text_blob, fragments))
            if not toks:
                raise CorpusError(f"line {lineno}: empty component {ent_id}")
            para, sect = locate(hull[0])
            components.append(ArgComponent(
                comp_id=ent_id, span=hull, tokens=tuple(toks),
                comp_type=ent_type, paragraph_id=para, section_id=sect,
                fragments=tuple(fragments)))
            seen_entities.add(ent_id)
        elif line.startswith("R"):
            m = _RELATION_RE.match(line)
            if not m:
                raise CorpusError(f"line {lineno}: malformed relation line: {line!r}")
            _, rel_type, arg1, arg2 = m.groups()
            if rel_type not in schema.forward_relations:
                raise CorpusError(
                    f"line {lineno}: unknown relation type {rel_type!r}")
            links.append((lineno, LinkAnnotation(arg1, arg2, rel_type)))
        else:
            raise CorpusError(
                f"line {lineno}: unknown annotation type: {line.split(chr(9))[0]!r}")

    for lineno, link in links:
        for endpoint in (link.source_id, link.target_id):
            if endpoint not in seen_entities:
                raise CorpusError(
                    f"line {lineno}: dangling endpoint {endpoint!r}")

    doc = Document.build(doc_id, text_blob, components,
                         [l for _, l in links], corpus_id=schema.corpus_id)
    problems = validate(doc, schema)
    if problems:
        first = problems[0]
        raise CorpusError(f"{first.rule}: {first.message}")
    return doc


# ---------------------------------------------------------------------------
# normalized JSON form
# ---------------------------------------------------------------------------

def document_to_dict(doc: Document) -> dict:
    out = {
        "doc_id": doc.doc_id,
        "text": doc.text,
        "components": [
            {
                "comp_id": c.comp_id,
                "start": c.start,
                "end": c.end,
                "type": c.comp_type,
                "paragraph": c.paragraph_id,
                "section": c.section_id,
                **({"fragments": [list(f) for f in c.fragments]}
                   if c.is_discontinuous else {}),
            }
            for c in doc.components
        ],
        "links": [
            {"source": l.source_id, "target": l.target_id, "relation": l.relation}
            for l in doc.links
        ],
        "split": doc.split_tag.value,
        "corpus": doc.corpus_id,
    }
    return out


def document_from_dict(d: dict) -> Document:
    components = []
    for c in d["components"]:
        fragments = tuple(tuple(f) for f in c.get("fragments", ())) or \
            ((c["start"], c["end"]),)
        toks = tokenize(component_text(d["text"], fragments))
        if not toks:
            raise CorpusError(f"empty component {c['comp_id']} in {d['doc_id']}")
        components.append(ArgComponent(
            comp_id=c["comp_id"],
            span=(fragments[0][0], fragments[-1][1]),
            tokens=tuple(toks),
            comp_type=c["type"],
            paragraph_id=int(c["paragraph"]),
            section_id=int(c["section"]),
            fragments=fragments,
        ))
    links = [LinkAnnotation(l["source"], l["target"], l["relation"])
             for l in d["links"]]
    return Document.build(
        d["doc_id"], d["text"], components, links,
        split_tag=d.get("split", "unassigned"), corpus_id=d.get("corpus", ""))


def normalize_roundtrip(doc: Document) -> Document:
    """Serialize to the normalized JSON form and re-parse.

    Structural equality with the input is a corpus-module invariant.
    """
    return document_from_dict(json.loads(json.dumps(document_to_dict(doc))))


def save_corpus(path, docs: Sequence[Document], schema: CorpusSchema,
                meta: Optional[dict] = None) -> None:
    payload = {
        "schema": schema.to_dict(),
        "documents": [document_to_dict(d) for d in docs],
        "meta": meta or {},
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=1),
        encoding="utf-8")


def load_corpus(path):
    """-> (documents, schema, meta)"""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    schema = CorpusSchema.from_dict(payload["schema"])
    docs = [document_from_dict(d) for d in payload["documents"]]
    return docs, schema, payload.get("meta", {})


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(doc: Document, schema: Optional[CorpusSchema] = None):
    """All invariant checks; violations are data, not exceptions."""
    out = []
    text_len = len(doc.text.encode("utf-8"))
    ids = [c.comp_id for c in doc.components]
    id_set = set(ids)
    if len(id_set) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        out.append(Violation("duplicate component id", tuple(dupes),
                             f"duplicate ids {dupes}"))

    all_fragments = []
    for c in doc.components:
        for (s, e) in c.fragments:
            if s < 0 or e > text_len or s >= e:
                out.append(Violation("span out of bounds", (c.comp_id,),
                                     f"{c.comp_id} fragment ({s}, {e}) "
                                     f"outside [0, {text_len})"))
            all_fragments.append((s, e, c.comp_id))
        if not c.tokens:
            out.append(Violation("empty tokens", (c.comp_id,),
                                 f"{c.comp_id} has no tokens"))
        if schema and c.comp_type not in schema.component_classes:
            out.append(Violation("unknown component class", (c.comp_id,),
                                 f"{c.comp_id} has type {c.comp_type!r}"))

    all_fragments.sort()
    for (s1, e1, i1), (s2, e2, i2) in zip(all_fragments, all_fragments[1:]):
        if i1 != i2 and s2 < e1:
            out.append(Violation("overlap", (i1, i2),
                                 f"{i1} ({s1},{e1}) overlaps {i2} ({s2},{e2})"))

    starts = [c.start for c in doc.components]
    if starts != sorted(starts):
        out.append(Violation("order", tuple(ids), "components not sorted by start"))
    for rank, c in enumerate(sorted(doc.components, key=lambda c: (c.start, c.end))):
        if c.order_index != rank:
            out.append(Violation("order_index", (c.comp_id,),
                                 f"{c.comp_id} order_index {c.order_index} != rank {rank}"))

    for l in doc.links:
        if l.source_id == l.target_id:
            out.append(Violation("reflexive link", (l.source_id,),
                                 f"reflexive link on {l.source_id}"))
        for endpoint in (l.source_id, l.target_id):
            if endpoint not in id_set:
                out.append(Violation("dangling endpoint", (endpoint,),
                                     f"link references missing {endpoint}"))
        if schema and l.relation not in schema.forward_relations:
            out.append(Violation("unknown relation", (l.source_id, l.target_id),
                                 f"relation {l.relation!r} not a forward type"))
    return out


# ---------------------------------------------------------------------------
# discontinuous-component splitting (DrInventor preprocessing)
# ---------------------------------------------------------------------------

def split_discontinuous(doc: Document) -> Document:
    """Split each multi-fragment component into independent components.

    Every half keeps the original class label and inherits copies of all
    links the original participated in, on both sides; no link is created
    between the halves.  Idempotent: single-fragment documents come back
    unchanged.
    """
    if not any(c.is_discontinuous for c in doc.components):
        return doc
    new_components = []
    replacements = {}  # original comp_id -> [new ids]
    for c in doc.components:
        if not c.is_discontinuous:
            new_components.append(c)
            continue
        parts = []
        for k, (s, e) in enumerate(c.fragments):
            toks = tokenize(_slice_bytes(doc.text, s, e))
            if not toks:  # fragment of pure whitespace: merge into hull token set
                toks = list(c.tokens)
            parts.append(ArgComponent(
                comp_id=f"{c.comp_id}.{k}",
                span=(s, e),
                tokens=tuple(toks),
                comp_type=c.comp_type,
                paragraph_id=c.paragraph_id,
                section_id=c.section_id,
                fragments=((s, e),),
            ))
        replacements[c.comp_id] = [p.comp_id for p in parts]
        new_components.extend(parts)

    new_links = []
    for l in doc.links:
        sources = replacements.get(l.source_id, [l.source_id])
        targets = replacements.get(l.target_id, [l.target_id])
        for s in sources:
            for t in targets:
                if s != t:
                    new_links.append(LinkAnnotation(s, t, l.relation))

    return Document.build(doc.doc_id, doc.text, new_components, new_links,
                          split_tag=doc.split_tag, corpus_id=doc.corpus_id)


# spec'd corpus-specific alias: DrInventor is the corpus this step exists for
preprocess_drinventor = split_discontinuous


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSizes:
    components_per_doc: tuple = (4, 8)
    tokens_per_component: tuple = (3, 8)
    link_rate: float = 0.25
    paragraph_rate: float = 0.3  # chance a component starts a new paragraph
    vocab_size: int = 400
    max_link_distance: int = 0  # 0: unbounded; else links stay this close

    def __post_init__(self):
        lo, hi = self.components_per_doc
        if lo < 1 or hi < lo:
            raise CorpusError("components_per_doc range empty")
        lo, hi = self.tokens_per_component
        if lo < 1 or hi < lo:
            raise CorpusError("tokens_per_component range empty")


def synth_corpus(seed: int, n_docs: int, schema: CorpusSchema,
                 sizes: SynthSizes = SynthSizes()):
    """Deterministic synthetic corpus; every document validates clean.

    Links are drawn between same-document components only, at roughly
    ``sizes.link_rate`` of the ordered pairs, never reflexive.
    """
    rng = random.Random(seed)
    vocab = [f"tok{j}" for j in range(sizes.vocab_size)]
    docs = []
    for d in range(n_docs):
        doc_id = f"synth-{seed}-{d:04d}"
        n_comp = rng.randint(*sizes.components_per_doc)
        pieces = []
        comps = []
        offset = 0
        para = 0
        sect = 0
        for i in range(n_comp):
            if i > 0 and rng.random() < sizes.paragraph_rate:
                pieces.append("\n\n")
                offset += 2
                para += 1
            elif i > 0:
                pieces.append(" ")
                offset += 1
            n_tok = rng.randint(*sizes.tokens_per_component)
            words = [rng.choice(vocab) for _ in range(n_tok)]
            surface = " ".join(words)
            start = offset
            end = offset + len(surface.encode("utf-8"))
            comps.append(ArgComponent(
                comp_id=f"T{i + 1}",
                span=(start, end),
                tokens=tuple(tokenize(surface)),
                comp_type=rng.choice(schema.component_classes),
                paragraph_id=para,
                section_id=sect,
            ))
            pieces.append(surface)
            offset = end
        text = "".join(pieces)

        links = []
        candidates = [(a, b)
                      for i, a in enumerate(comps) for j, b in enumerate(comps)
                      if i != j and (sizes.max_link_distance <= 0
                                     or abs(j - i) <= sizes.max_link_distance)]
        rng.shuffle(candidates)
        n_links = int(round(sizes.link_rate * len(candidates)))
        used = set()
        for a, b in candidates:
            if len(links) >= n_links:
                break
            if (a.comp_id, b.comp_id) in used or (b.comp_id, a.comp_id) in used:
                continue
            used.add((a.comp_id, b.comp_id))
            links.append(LinkAnnotation(
                a.comp_id, b.comp_id, rng.choice(schema.forward_relations)))
        docs.append(Document.build(doc_id, text, comps, links,
                                   corpus_id=schema.corpus_id))
    return docs


def assign_splits(docs, valid_fraction: float, test_fraction: float, seed: int):
    """Deterministic split assignment by shuffled document order."""
    order = list(range(len(docs)))
    random.Random(seed).shuffle(order)
    n_valid = int(round(valid_fraction * len(docs)))
    n_test = int(round(test_fraction * len(docs)))
    tags = {}
    for rank, idx in enumerate(order):
        if rank < n_valid:
            tags[idx] = SplitTag.VALID
        elif rank < n_valid + n_test:
            tags[idx] = SplitTag.TEST
        else:
            tags[idx] = SplitTag.TRAIN
    return [replace(d, split_tag=tags[i]) for i, d in enumerate(docs)]


def max_component_tokens(docs: Iterable[Document]) -> int:
    """Corpus-wide longest component, in tokens, over all splits."""
    return max((len(c.tokens) for d in docs for c in d.components), default=0)
