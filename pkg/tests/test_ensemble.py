import numpy as np
import pytest

from resarg.corpus import NONE_LABEL
from resarg.ensemble import (
    EnsembleError, agreement_report, ensemble_predict, load_predictions,
    per_model_component_labels, resolve_component, save_component_labels,
    save_predictions, vote,
)
from resarg.pairing import PairPolicy, enumerate_pairs
from resarg.training import encode_dataset
from resarg.embeddings import build_table
from resarg.neural.model import ArchConfig, init_params

from conftest import make_doc


# ---------------------------------------------------------------------------
# vote
# ---------------------------------------------------------------------------

ORDER = ["A", "B", "C"]


def test_vote_unanimity():
    assert vote(["A", "A", "A"], ORDER) == "A"


def test_vote_majority():
    assert vote(["A"] * 6 + ["B"] * 4, ORDER) == "A"


def test_vote_tie_breaks_by_declared_order():
    assert vote(["A"] * 5 + ["B"] * 5, ORDER) == "A"
    assert vote(["C"] * 5 + ["B"] * 5, ORDER) == "B"


def test_vote_empty_rejected():
    with pytest.raises(EnsembleError):
        vote([], ORDER)


def test_vote_properties_random_cases():
    # unanimity, permutation invariance, documented tie-break: N=10 models,
    # 3 classes, 200 random cases
    rng = np.random.default_rng(0)
    for _ in range(200):
        labels = [ORDER[k] for k in rng.integers(0, 3, size=10)]
        winner = vote(labels, ORDER)
        counts = {c: labels.count(c) for c in ORDER}
        best = max(counts.values())
        assert counts[winner] == best
        # documented tie rule: earliest declared class among the tied
        assert winner == next(c for c in ORDER if counts[c] == best)
        # permutation invariance
        perm = list(labels)
        rng.shuffle(perm)
        assert vote(perm, ORDER) == winner
    assert vote(["B"] * 10, ORDER) == "B"  # unanimity spot check


# ---------------------------------------------------------------------------
# resolve_component
# ---------------------------------------------------------------------------

def test_resolve_single_occurrence():
    idx, avg = resolve_component("c", [np.array([0.7, 0.3])])
    assert idx == 0
    assert np.allclose(avg, [0.7, 0.3])


def test_resolve_two_occurrences_average():
    idx, avg = resolve_component(
        "c", [np.array([0.6, 0.4]), np.array([0.2, 0.8])])
    assert np.allclose(avg, [0.4, 0.6])
    assert idx == 1


def test_resolve_no_occurrences_is_policy_bug():
    with pytest.raises(EnsembleError, match="policy bug"):
        resolve_component("c", [])


def test_resolve_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(100):
        k = int(rng.integers(1, 12))
        occ = [rng.dirichlet(np.ones(4)) for _ in range(k)]
        idx, avg = resolve_component("c", occ)
        brute = sum(occ) / k
        assert np.max(np.abs(avg - brute)) < 1e-12
        assert idx == int(np.argmax(brute))
        assert abs(avg.sum() - 1.0) < 1e-9  # mean of simplex points


# ---------------------------------------------------------------------------
# ensemble_predict
# ---------------------------------------------------------------------------

def _setup(schema, n_models=3, seed=0):
    doc = make_doc(
        [("T1", 0, 3, "claim"), ("T2", 4, 8, "premise"),
         ("T3", 9, 14, "evidence")],
        [("T1", "T2", "supports"), ("T3", "T1", "attacks")])
    pairs = enumerate_pairs(doc, PairPolicy(), schema)
    tokens = [t for c in doc.components for t in c.tokens]
    table = build_table(tokens, None, seed=3, dim=10)
    cfg = ArchConfig(variant="resattarg", T=4, n_component_classes=3,
                     n_relation_classes=5, embed_dim=10)
    ds = encode_dataset([doc], pairs, table, cfg.T, schema)
    models = [init_params(cfg, seed=seed + i, embedding_matrix=table.matrix)
              for i in range(n_models)]
    return doc, pairs, ds, models


def test_identical_copies_equal_single(schema):
    doc, pairs, ds, models = _setup(schema, n_models=1)
    single = ensemble_predict(models, ds, schema)
    triple = ensemble_predict(models * 3, ds, schema)
    assert np.array_equal(single.link_votes, triple.link_votes)
    assert single.relation_votes == triple.relation_votes
    assert single.component_labels == triple.component_labels


def test_model_order_invariance(schema):
    doc, pairs, ds, models = _setup(schema, n_models=3)
    a = ensemble_predict(models, ds, schema)
    b = ensemble_predict(models[::-1], ds, schema)
    assert np.array_equal(a.link_votes, b.link_votes)
    assert a.relation_votes == b.relation_votes
    assert a.component_labels == b.component_labels
    for key in a.component_probs:
        assert np.allclose(a.component_probs[key], b.component_probs[key],
                           atol=1e-12)


def test_votes_match_hand_tabulation(schema):
    doc, pairs, ds, models = _setup(schema, n_models=3)
    ens = ensemble_predict(models, ds, schema)
    from resarg.pairing import collapse_for_test
    from resarg.training import infer_probs
    extended = schema.extended_relations
    test_order = list(schema.test_relations)
    for i in range(len(pairs)):
        rels = []
        for m in models:
            _, _, p_rel = infer_probs(m, ds)
            rels.append(collapse_for_test(extended[p_rel[i].argmax()]))
        counts = {c: rels.count(c) for c in test_order}
        best = max(counts.values())
        expect_rel = next(c for c in test_order if counts[c] == best)
        assert ens.relation_votes[i] == expect_rel
        # under the default rule the link vote is implied by the relation vote
        assert bool(ens.link_votes[i]) == (expect_rel != NONE_LABEL)


def test_link_vote_consistent_for_even_ensembles(schema):
    doc, pairs, ds, models = _setup(schema, n_models=4)
    ens = ensemble_predict(models, ds, schema)
    for i in range(len(pairs)):
        assert bool(ens.link_votes[i]) == (ens.relation_votes[i] != NONE_LABEL)


def test_threshold_rule_votes_booleans(schema):
    doc, pairs, ds, models = _setup(schema, n_models=3)
    ens = ensemble_predict(models, ds, schema, link_rule="p_link_threshold")
    for i in range(len(pairs)):
        per_model = [bool(ens.per_model_link[m, i]) for m in range(3)]
        expected = per_model.count(True) > per_model.count(False)
        assert bool(ens.link_votes[i]) == expected


def test_relation_votes_are_collapsed(schema):
    doc, pairs, ds, models = _setup(schema, n_models=3)
    ens = ensemble_predict(models, ds, schema)
    legal = set(schema.test_relations)
    assert all(r in legal for r in ens.relation_votes)


def test_component_resolution_covers_all(schema):
    doc, pairs, ds, models = _setup(schema, n_models=2)
    ens = ensemble_predict(models, ds, schema)
    assert set(ens.component_labels) == {("d0", "T1"), ("d0", "T2"),
                                         ("d0", "T3")}
    for probs in ens.component_probs.values():
        assert abs(probs.sum() - 1.0) < 1e-6


def test_config_mismatch_rejected(schema):
    doc, pairs, ds, models = _setup(schema, n_models=1)
    other_cfg = ArchConfig(variant="resarg", T=4, n_component_classes=3,
                           n_relation_classes=5, embed_dim=10)
    other = init_params(other_cfg, seed=9,
                        embedding_matrix=models[0].embedding_matrix)
    from resarg.neural.model import ConfigError
    with pytest.raises(ConfigError):
        ensemble_predict(models + [other], ds, schema)


# ---------------------------------------------------------------------------
# agreement
# ---------------------------------------------------------------------------

def test_agreement_identical_models_is_one(schema):
    doc, pairs, ds, models = _setup(schema, n_models=1)
    ens = ensemble_predict(models * 2, ds, schema)
    rep = agreement_report(ens, schema)
    assert rep.component == 1.0
    assert rep.link == 1.0
    assert rep.relation == 1.0


def test_agreement_excludes_self_pairs(schema):
    # a singleton-paragraph doc gives one self pair under the policy
    from resarg.corpus import ArgComponent, Document
    comps = [ArgComponent("T1", (0, 2), ("aa",), "claim", 0, 0),
             ArgComponent("T2", (4, 6), ("bb",), "premise", 1, 0),
             ArgComponent("T3", (7, 9), ("cc",), "evidence", 1, 0)]
    doc = Document.build("d", "aa\n\nbb cc", comps, [])
    pairs = enumerate_pairs(doc, PairPolicy(include_self_pairs=True), schema)
    assert any(p.is_self_pair for p in pairs)
    tokens = [t for c in doc.components for t in c.tokens]
    table = build_table(tokens, None, seed=3, dim=10)
    cfg = ArchConfig(variant="resattarg", T=2, n_component_classes=3,
                     n_relation_classes=5, embed_dim=10)
    ds = encode_dataset([doc], pairs, table, cfg.T, schema)
    models = [init_params(cfg, seed=i, embedding_matrix=table.matrix)
              for i in range(2)]
    ens = ensemble_predict(models, ds, schema)
    rep = agreement_report(ens, schema)
    keep = [i for i, p in enumerate(pairs) if not p.is_self_pair]
    assert len(keep) == len(pairs) - 1
    # the self pair still contributes to component resolution
    assert ("d", "T1") in ens.component_labels


# ---------------------------------------------------------------------------
# serialization round trip
# ---------------------------------------------------------------------------

def test_predictions_roundtrip(tmp_path, schema):
    doc, pairs, ds, models = _setup(schema, n_models=3)
    ens = ensemble_predict(models, ds, schema)
    path = tmp_path / "pred.ndjson"
    save_predictions(path, ens, config_hash="h123")
    loaded, meta = load_predictions(path, pairs, schema)
    assert meta["config_hash"] == "h123"
    assert np.array_equal(loaded.link_votes, ens.link_votes)
    assert loaded.relation_votes == ens.relation_votes
    assert np.array_equal(loaded.per_model_link, ens.per_model_link)
    assert loaded.component_labels == ens.component_labels
    np.testing.assert_allclose(loaded.per_model_p_rel, ens.per_model_p_rel,
                               atol=0)
    comp_path = tmp_path / "components.ndjson"
    save_component_labels(comp_path, ens)
    assert comp_path.read_text().count("\n") == 1 + len(ens.component_labels)


def test_per_model_component_labels_shape(schema):
    doc, pairs, ds, models = _setup(schema, n_models=3)
    ens = ensemble_predict(models, ds, schema)
    keys, rows = per_model_component_labels(ens, schema)
    assert len(rows) == 3
    assert all(len(r) == len(keys) for r in rows)
    legal = set(schema.component_classes)
    assert all(label in legal for r in rows for label in r)
