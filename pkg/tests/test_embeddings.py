import numpy as np
import pytest

from resarg.embeddings import (
    EmbeddingError, OOV_HIGH, OOV_LOW, build_table, encode, load_vectors,
)


def write_vector_file(path, rows, dim=300):
    with open(path, "w", encoding="utf-8") as f:
        for token, vec in rows:
            f.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def test_load_vectors_two_lines(tmp_path):
    rng = np.random.default_rng(0)
    rows = [("alpha", rng.normal(size=300)), ("beta", rng.normal(size=300))]
    path = tmp_path / "vec.txt"
    write_vector_file(path, rows)
    table = load_vectors(path)
    assert set(table.vectors) == {"alpha", "beta"}
    assert table.dim == 300


def test_load_vectors_wrong_field_count(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("tok 1.0 2.0 3.0 4.0\n", encoding="utf-8")
    with pytest.raises(EmbeddingError, match="line 1"):
        load_vectors(path)


def test_load_vectors_bit_exact_roundtrip(tmp_path):
    # write-then-read oracle over a 10k-line synthetic file
    rng = np.random.default_rng(42)
    rows = [(f"tok_{i}", rng.normal(size=300)) for i in range(10_000)]
    path = tmp_path / "vec.txt"
    write_vector_file(path, rows)
    table = load_vectors(path)
    written = dict(rows)
    assert np.array_equal(table.vectors["tok_42"], written["tok_42"])
    assert np.array_equal(table.vectors["tok_9999"], written["tok_9999"])


def test_load_vectors_duplicate_keeps_first(tmp_path):
    path = tmp_path / "vec.txt"
    v1, v2 = np.ones(300), 2 * np.ones(300)
    write_vector_file(path, [("tok", v1), ("tok", v2)])
    with pytest.warns(UserWarning, match="duplicate"):
        table = load_vectors(path)
    assert np.array_equal(table.vectors["tok"], v1)


# ---------------------------------------------------------------------------
# table construction
# ---------------------------------------------------------------------------

def test_build_table_all_pretrained(tmp_path):
    rng = np.random.default_rng(1)
    rows = [("a", rng.normal(size=300)), ("b", rng.normal(size=300))]
    path = tmp_path / "vec.txt"
    write_vector_file(path, rows)
    table = build_table(["a", "b", "a"], load_vectors(path), seed=0)
    assert table.oov_rows == frozenset()
    assert np.array_equal(table.lookup("a"), rows[0][1])


def test_build_table_no_pretrained_is_deterministic():
    t1 = build_table(["x", "y", "z"], None, seed=5, dim=16)
    t2 = build_table(["x", "y", "z"], None, seed=5, dim=16)
    assert np.array_equal(t1.matrix, t2.matrix)
    assert t1.oov_rows == {1, 2, 3}
    t3 = build_table(["x", "y", "z"], None, seed=6, dim=16)
    assert not np.array_equal(t1.matrix, t3.matrix)


def test_oov_rows_bounded_zero_pad():
    table = build_table([f"t{i}" for i in range(50)], None, seed=2, dim=8)
    assert np.all(table.matrix[table.pad_index] == 0.0)
    body = table.matrix[1:]
    assert body.min() >= OOV_LOW and body.max() <= OOV_HIGH


def test_lowercase_fallback(tmp_path):
    rows = [("word", np.ones(300))]
    path = tmp_path / "vec.txt"
    write_vector_file(path, rows)
    table = build_table(["Word"], load_vectors(path), seed=0)
    assert np.array_equal(table.lookup("Word"), np.ones(300))
    assert table.oov_rows == frozenset()


# ---------------------------------------------------------------------------
# sequence encoding
# ---------------------------------------------------------------------------

def test_encode_mask():
    table = build_table(["a", "b"], None, seed=0, dim=4)
    seq = encode(["a", "b"], table, T=4)
    assert seq.mask == (1, 1, 0, 0)
    assert seq.ids[2] == table.pad_index and seq.ids[3] == table.pad_index
    assert seq.true_length == 2


def test_encode_empty_rejected():
    table = build_table(["a"], None, seed=0, dim=4)
    with pytest.raises(EmbeddingError):
        encode([], table, T=4)


def test_encode_full_length():
    tokens = [f"t{i}" for i in range(153)]
    table = build_table(tokens, None, seed=0, dim=4)
    seq = encode(tokens, table, T=153)
    assert all(m == 1 for m in seq.mask)
    assert seq.true_length == 153


def test_encode_truncates_overlength_with_warning():
    table = build_table(["a", "b", "c"], None, seed=0, dim=4)
    with pytest.warns(UserWarning, match="truncated"):
        seq = encode(["a", "b", "c"], table, T=2)
    assert seq.true_length == 2
    assert seq.ids == (table.row_of("a"), table.row_of("b"))


def test_padded_lookup_is_zero_vector():
    table = build_table(["a"], None, seed=0, dim=6)
    seq = encode(["a"], table, T=3)
    for i, m in enumerate(seq.mask):
        if not m:
            assert np.all(table.matrix[seq.ids[i]] == 0.0)
