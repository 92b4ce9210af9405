import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resarg.corpus import ArgComponent, Document, NONE_LABEL
from resarg.pairing import (
    PairPolicy, PairingError, argumentative_distance, collapse_for_test,
    encode_distance, enumerate_pairs, load_pairs, pair_from_record,
    pair_to_record, save_pairs,
)

from conftest import make_doc


# ---------------------------------------------------------------------------
# argumentative distance
# ---------------------------------------------------------------------------

def _comp(order, doc="d"):
    return ArgComponent(f"T{order}", (order * 2, order * 2 + 1), ("w",),
                        "claim", 0, 0, order_index=order, doc_id=doc)


def test_distance_forward():
    assert argumentative_distance(_comp(2), _comp(5)) == 3


def test_distance_backward():
    assert argumentative_distance(_comp(5), _comp(2)) == -3


def test_distance_self():
    c = _comp(4)
    assert argumentative_distance(c, c) == 0


def test_distance_cross_document_rejected():
    with pytest.raises(PairingError):
        argumentative_distance(_comp(1, doc="a"), _comp(2, doc="b"))


# ---------------------------------------------------------------------------
# distance encoding
# ---------------------------------------------------------------------------

def test_encode_minus_three():
    assert encode_distance(-3) == [0, 0, 1, 1, 1, 0, 0, 0, 0, 0]


def test_encode_plus_two():
    assert encode_distance(2) == [0, 0, 0, 0, 0, 1, 1, 0, 0, 0]


def test_encode_zero():
    assert encode_distance(0) == [0] * 10


def test_encode_clamps_at_five():
    assert encode_distance(-9) == [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
    assert encode_distance(12) == [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]


def test_encode_sweep_invariants():
    for d in range(-12, 13):
        bits = encode_distance(d)
        assert len(bits) == 10
        assert sum(bits) == min(abs(d), 5)
        ones = [i for i, b in enumerate(bits) if b]
        if ones:
            assert ones == list(range(ones[0], ones[-1] + 1))  # contiguous
        if d < 0:
            assert all(b == 0 for b in bits[5:])
        if d > 0:
            assert all(b == 0 for b in bits[:5])
        assert encode_distance(-d) == bits[::-1]


@given(st.integers(-10_000, 10_000))
@settings(max_examples=200)
def test_encode_mirror_property(d):
    assert encode_distance(-d) == encode_distance(d)[::-1]


# ---------------------------------------------------------------------------
# pair enumeration
# ---------------------------------------------------------------------------

def test_unrestricted_counts(schema):
    doc = make_doc([("T1", 0, 2, "claim"), ("T2", 3, 5, "premise"),
                    ("T3", 6, 8, "evidence")], [])
    pairs = enumerate_pairs(doc, PairPolicy(), schema)
    assert len(pairs) == 6
    assert all(not p.link and p.relation == NONE_LABEL for p in pairs)


def test_forward_and_inverse_labels(schema):
    doc = make_doc([("a", 0, 2, "claim"), ("b", 3, 5, "premise")],
                   [("a", "b", "supports")])
    pairs = {(p.source_id, p.target_id): p
             for p in enumerate_pairs(doc, PairPolicy(), schema)}
    ab, ba = pairs[("a", "b")], pairs[("b", "a")]
    assert ab.link and ab.relation == "supports"
    assert not ba.link and ba.relation == "supports_inv"
    assert ab.distance == 1 and ba.distance == -1


def test_pair_label_trichotomy(schema, tiny_docs):
    for doc in tiny_docs:
        for p in enumerate_pairs(doc, PairPolicy(), schema):
            forward = p.relation in schema.forward_relations
            inverse = p.relation in schema.inverse_relations
            none = p.relation == NONE_LABEL
            states = [p.link and forward, (not p.link) and inverse,
                      (not p.link) and none]
            assert sum(states) == 1


def test_gold_link_consistency(schema, tiny_docs):
    for doc in tiny_docs:
        pairs = {(p.source_id, p.target_id): p
                 for p in enumerate_pairs(doc, PairPolicy(), schema)}
        for l in doc.links:
            assert pairs[(l.source_id, l.target_id)].link
            assert pairs[(l.source_id, l.target_id)].relation == l.relation
            rev = pairs[(l.target_id, l.source_id)]
            assert not rev.link
            assert rev.relation == l.relation + "_inv"


def test_count_is_n_times_n_minus_one(schema, tiny_docs):
    for doc in tiny_docs:
        n = len(doc.components)
        assert len(enumerate_pairs(doc, PairPolicy(), schema)) == n * (n - 1)


def test_max_abs_distance_filter(schema):
    doc = make_doc([(f"T{i}", i * 3, i * 3 + 2, "claim") for i in range(5)], [])
    pairs = enumerate_pairs(doc, PairPolicy(max_abs_distance=2), schema)
    assert all(1 <= abs(p.distance) <= 2 for p in pairs)
    assert len(pairs) == 14  # 4+3+2+3+4 in each direction... enumerated below


def test_max_abs_distance_filter_oracle(schema):
    # brute-force oracle over index pairs
    doc = make_doc([(f"T{i}", i * 3, i * 3 + 2, "claim") for i in range(5)], [])
    for cap in (1, 2, 3):
        pairs = enumerate_pairs(doc, PairPolicy(max_abs_distance=cap), schema)
        expected = sum(1 for a in range(5) for b in range(5)
                       if a != b and abs(b - a) <= cap)
        assert len(pairs) == expected


def test_same_paragraph_filter(schema):
    text = "aa bb\n\ncc dd"
    comps = [ArgComponent("T1", (0, 2), ("aa",), "claim", 0, 0),
             ArgComponent("T2", (3, 5), ("bb",), "claim", 0, 0),
             ArgComponent("T3", (7, 9), ("cc",), "claim", 1, 0),
             ArgComponent("T4", (10, 12), ("dd",), "claim", 1, 0)]
    doc = Document.build("d", text, comps, [])
    pairs = enumerate_pairs(doc, PairPolicy(same_paragraph_only=True), schema)
    assert len(pairs) == 4
    for p in pairs:
        assert {p.source_id, p.target_id} in ({"T1", "T2"}, {"T3", "T4"})


def test_same_section_filter(schema):
    comps = [ArgComponent("T1", (0, 2), ("aa",), "claim", 0, 0),
             ArgComponent("T2", (3, 5), ("bb",), "claim", 0, 1),
             ArgComponent("T3", (6, 8), ("cc",), "claim", 0, 1)]
    doc = Document.build("d", "aa bb cc", comps, [])
    pairs = enumerate_pairs(doc, PairPolicy(same_section_only=True), schema)
    assert {(p.source_id, p.target_id) for p in pairs} == \
        {("T2", "T3"), ("T3", "T2")}


def test_self_pairs_only_for_singleton_paragraphs(schema):
    comps = [ArgComponent("T1", (0, 2), ("aa",), "claim", 0, 0),
             ArgComponent("T2", (4, 6), ("bb",), "claim", 1, 0),
             ArgComponent("T3", (7, 9), ("cc",), "claim", 1, 0)]
    doc = Document.build("d", "aa\n\nbb cc", comps, [])
    policy = PairPolicy(include_self_pairs=True)
    pairs = enumerate_pairs(doc, policy, schema)
    selfs = [p for p in pairs if p.is_self_pair]
    assert len(selfs) == 1
    sp = selfs[0]
    assert sp.source_id == sp.target_id == "T1"
    assert sp.distance == 0 and not sp.link and sp.relation == NONE_LABEL
    # plus the ordinary ordered pairs
    assert len(pairs) == 6 + 1


def test_self_pair_count_matches_singleton_paragraphs(schema, tiny_docs):
    policy = PairPolicy(include_self_pairs=True)
    for doc in tiny_docs:
        para_counts = {}
        for c in doc.components:
            para_counts[c.paragraph_id] = para_counts.get(c.paragraph_id, 0) + 1
        n = len(doc.components)
        singletons = sum(1 for v in para_counts.values() if v == 1)
        pairs = enumerate_pairs(doc, policy, schema)
        assert len(pairs) == n * (n - 1) + singletons


def test_policy_validation():
    with pytest.raises(PairingError):
        PairPolicy(max_abs_distance=0)


# ---------------------------------------------------------------------------
# inverse collapse
# ---------------------------------------------------------------------------

def test_collapse_inverse_to_none():
    assert collapse_for_test("supports_inv") == NONE_LABEL
    assert collapse_for_test("reason_inv") == NONE_LABEL


def test_collapse_forward_unchanged():
    assert collapse_for_test("supports") == "supports"


def test_collapse_none_fixed_point():
    assert collapse_for_test(NONE_LABEL) == NONE_LABEL


# ---------------------------------------------------------------------------
# ndjson round trip
# ---------------------------------------------------------------------------

def test_pair_record_roundtrip(schema, tiny_docs):
    pairs = [p for d in tiny_docs for p in enumerate_pairs(d, PairPolicy(), schema)]
    assert pairs
    for p in pairs:
        assert pair_from_record(json.loads(json.dumps(pair_to_record(p)))) == p


def test_save_load_pairs(tmp_path, schema, tiny_docs):
    pairs = [p for d in tiny_docs for p in enumerate_pairs(d, PairPolicy(), schema)]
    path = tmp_path / "pairs.ndjson"
    save_pairs(path, pairs, config_hash="abc123")
    loaded, meta = load_pairs(path)
    assert loaded == pairs
    assert meta["config_hash"] == "abc123"
