"""Aggregation over independently trained models.

Pair labels (link, relation) take the class voted by the majority of the
models, with ties broken by the lowest class index in the schema's
declared order.  Component labels are resolved from probabilities: the
relevant head's vector is averaged over every (pair, model) occurrence of
the component, and the argmax of the average wins.  Relation votes happen
after inverse labels are collapsed to NONE, so the test-time label space
matches the evaluation contract.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .corpus import NONE_LABEL, CorpusSchema
from .metrics import AgreementReport, krippendorff_alpha
from .neural.model import ConfigError, ModelParams
from .pairing import PairInstance, collapse_for_test
from .training import EncodedDataset, infer_probs, predict_links


class EnsembleError(ValueError):
    pass


def vote(labels: Sequence, class_order: Sequence):
    """Modal label; ties go to the earliest label in ``class_order``."""
    if not labels:
        raise EnsembleError("vote needs at least one prediction")
    counts = Counter(labels)
    best = max(counts.values())
    rank = {c: i for i, c in enumerate(class_order)}
    tied = [c for c, n in counts.items() if n == best]
    return min(tied, key=lambda c: rank[c])


def resolve_component(comp_id: str, occurrences: Sequence[np.ndarray]):
    """Average probability vectors from every (pair, model) occurrence of
    one component; -> (argmax class index, averaged vector)."""
    if not occurrences:
        raise EnsembleError(
            f"component {comp_id!r} appears in no pairs (policy bug)")
    avg = np.mean(np.asarray(occurrences, dtype=np.float64), axis=0)
    return int(avg.argmax()), avg


@dataclass
class EnsemblePrediction:
    """Votes plus the per-model tensors the agreement metrics need."""

    pairs: List[PairInstance]
    link_votes: np.ndarray          # (N,) bool
    relation_votes: List[str]       # collapsed labels, len N
    per_model_link: np.ndarray      # (M, N) bool
    per_model_relation: List[List[str]]  # (M, N) collapsed labels
    per_model_p_src: np.ndarray     # (M, N, C)
    per_model_p_tgt: np.ndarray     # (M, N, C)
    per_model_p_rel: np.ndarray     # (M, N, R)
    component_labels: Dict[Tuple[str, str], str]
    component_probs: Dict[Tuple[str, str], np.ndarray]

    @property
    def n_models(self) -> int:
        return self.per_model_link.shape[0]


def _component_occurrences(pairs: Sequence[PairInstance]):
    """(doc_id, comp_id) -> [(pair index, side)] with side in {src, tgt}."""
    out: Dict[Tuple[str, str], List[Tuple[int, str]]] = {}
    for i, p in enumerate(pairs):
        out.setdefault((p.doc_id, p.source_id), []).append((i, "src"))
        out.setdefault((p.doc_id, p.target_id), []).append((i, "tgt"))
    return out


def ensemble_predict(models: Sequence[ModelParams], ds: EncodedDataset,
                     schema: CorpusSchema,
                     link_rule: str = "relation_argmax") -> EnsemblePrediction:
    """Run every model over the dataset and aggregate.

    Deterministic and invariant to the order of ``models``.
    """
    if not models:
        raise EnsembleError("ensemble needs at least one model")
    cfg0 = models[0].cfg
    for m in models[1:]:
        if m.cfg != cfg0:
            raise ConfigError("ensemble members disagree on ArchConfig")

    n_forward = len(schema.forward_relations)
    extended = schema.extended_relations
    p_src_all, p_tgt_all, p_rel_all = [], [], []
    for m in models:
        ps, pt, pr = infer_probs(m, ds)
        p_src_all.append(ps)
        p_tgt_all.append(pt)
        p_rel_all.append(pr)
    p_src_all = np.asarray(p_src_all)  # (M, N, C)
    p_tgt_all = np.asarray(p_tgt_all)
    p_rel_all = np.asarray(p_rel_all)
    M, N = p_rel_all.shape[:2]

    per_model_link = np.zeros((M, N), dtype=bool)
    per_model_relation: List[List[str]] = []
    for mi in range(M):
        per_model_link[mi] = predict_links(p_rel_all[mi], n_forward, link_rule)
        raw = [extended[k] for k in p_rel_all[mi].argmax(axis=1)]
        per_model_relation.append([collapse_for_test(r) for r in raw])

    relation_order = list(schema.test_relations)
    relation_votes = [vote([per_model_relation[mi][i] for mi in range(M)],
                           relation_order) for i in range(N)]
    if link_rule == "relation_argmax":
        # the ensemble's link decision is implied by its relation decision,
        # so the two evaluation streams agree even on split votes
        link_votes = np.array([r != NONE_LABEL for r in relation_votes],
                              dtype=bool)
    else:
        link_order = (False, True)  # documented: split votes fall to no-link
        link_votes = np.array([vote(per_model_link[:, i].tolist(), link_order)
                               for i in range(N)], dtype=bool)

    occurrences = _component_occurrences(ds.pairs)
    component_labels: Dict[Tuple[str, str], str] = {}
    component_probs: Dict[Tuple[str, str], np.ndarray] = {}
    for key in sorted(occurrences):
        vecs = []
        for i, side in occurrences[key]:
            stack = p_src_all if side == "src" else p_tgt_all
            vecs.extend(stack[:, i, :])
        idx, avg = resolve_component(key[1], vecs)
        component_labels[key] = schema.component_classes[idx]
        component_probs[key] = avg

    return EnsemblePrediction(
        pairs=list(ds.pairs), link_votes=link_votes,
        relation_votes=relation_votes, per_model_link=per_model_link,
        per_model_relation=per_model_relation, per_model_p_src=p_src_all,
        per_model_p_tgt=p_tgt_all, per_model_p_rel=p_rel_all,
        component_labels=component_labels, component_probs=component_probs)


def per_model_component_labels(ens: EnsemblePrediction,
                               schema: CorpusSchema):
    """Resolve component labels separately per member (for agreement)."""
    occurrences = _component_occurrences(ens.pairs)
    keys = sorted(occurrences)
    out = []
    for mi in range(ens.n_models):
        row = []
        for key in keys:
            vecs = []
            for i, side in occurrences[key]:
                stack = ens.per_model_p_src if side == "src" else ens.per_model_p_tgt
                vecs.append(stack[mi, i, :])
            idx, _ = resolve_component(key[1], vecs)
            row.append(schema.component_classes[idx])
        out.append(row)
    return keys, out


def agreement_report(ens: EnsemblePrediction,
                     schema: CorpusSchema) -> AgreementReport:
    """Krippendorff's alpha among members: component labels over resolved
    components, link and relation labels over non-self pairs."""
    if ens.n_models < 2:
        raise EnsembleError("agreement needs at least 2 models")
    _, comp_rows = per_model_component_labels(ens, schema)
    keep = [i for i, p in enumerate(ens.pairs) if not p.is_self_pair]
    link_rows = [[bool(ens.per_model_link[mi, i]) for i in keep]
                 for mi in range(ens.n_models)]
    rel_rows = [[ens.per_model_relation[mi][i] for i in keep]
                for mi in range(ens.n_models)]
    return AgreementReport(
        component=krippendorff_alpha(comp_rows),
        link=krippendorff_alpha(link_rows),
        relation=krippendorff_alpha(rel_rows))


# ---------------------------------------------------------------------------
# ndjson serialization
# ---------------------------------------------------------------------------

def save_predictions(path, ens: EnsemblePrediction, config_hash: str = "",
                     per_model: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(
            {"_meta": {"config_hash": config_hash, "n_models": ens.n_models}},
            sort_keys=True) + "\n")
        for i, p in enumerate(ens.pairs):
            rec = {
                "doc_id": p.doc_id,
                "source_id": p.source_id,
                "target_id": p.target_id,
                "is_self_pair": p.is_self_pair,
                "link_vote": bool(ens.link_votes[i]),
                "relation_vote": ens.relation_votes[i],
            }
            if per_model:
                rec["per_model_link"] = ens.per_model_link[:, i].tolist()
                rec["per_model_relation"] = [row[i] for row in ens.per_model_relation]
                rec["per_model_p_src"] = ens.per_model_p_src[:, i, :].tolist()
                rec["per_model_p_tgt"] = ens.per_model_p_tgt[:, i, :].tolist()
                rec["per_model_p_rel"] = ens.per_model_p_rel[:, i, :].tolist()
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_predictions(path, pairs: Sequence[PairInstance],
                     schema: CorpusSchema) -> Tuple[EnsemblePrediction, dict]:
    """Rebuild an EnsemblePrediction from a predictions ndjson written with
    per-model probabilities; record order must match ``pairs``."""
    records = []
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
            records.append(d)
    if len(records) != len(pairs):
        raise EnsembleError(
            f"{len(records)} prediction records for {len(pairs)} pairs")
    for rec, p in zip(records, pairs):
        if (rec["doc_id"], rec["source_id"], rec["target_id"]) != \
                (p.doc_id, p.source_id, p.target_id):
            raise EnsembleError(
                f"prediction order mismatch at pair "
                f"({p.doc_id}, {p.source_id}, {p.target_id})")
    if "per_model_p_src" not in records[0]:
        raise EnsembleError("predictions were saved without per-model "
                            "probabilities; re-run predict")

    link_votes = np.array([r["link_vote"] for r in records], dtype=bool)
    relation_votes = [r["relation_vote"] for r in records]
    per_model_link = np.array([r["per_model_link"] for r in records],
                              dtype=bool).T
    M = per_model_link.shape[0]
    per_model_relation = [[r["per_model_relation"][mi] for r in records]
                          for mi in range(M)]
    p_src = np.transpose(np.array([r["per_model_p_src"] for r in records]),
                         (1, 0, 2))
    p_tgt = np.transpose(np.array([r["per_model_p_tgt"] for r in records]),
                         (1, 0, 2))
    p_rel = np.transpose(np.array([r["per_model_p_rel"] for r in records]),
                         (1, 0, 2))

    occurrences = _component_occurrences(pairs)
    component_labels: Dict[Tuple[str, str], str] = {}
    component_probs: Dict[Tuple[str, str], np.ndarray] = {}
    for key in sorted(occurrences):
        vecs = []
        for i, side in occurrences[key]:
            stack = p_src if side == "src" else p_tgt
            vecs.extend(stack[:, i, :])
        idx, avg = resolve_component(key[1], vecs)
        component_labels[key] = schema.component_classes[idx]
        component_probs[key] = avg

    ens = EnsemblePrediction(
        pairs=list(pairs), link_votes=link_votes,
        relation_votes=relation_votes, per_model_link=per_model_link,
        per_model_relation=per_model_relation, per_model_p_src=p_src,
        per_model_p_tgt=p_tgt, per_model_p_rel=p_rel,
        component_labels=component_labels, component_probs=component_probs)
    return ens, meta


def save_component_labels(path, ens: EnsemblePrediction,
                          config_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"_meta": {"config_hash": config_hash}},
                           sort_keys=True) + "\n")
        for (doc_id, comp_id) in sorted(ens.component_labels):
            f.write(json.dumps({
                "doc_id": doc_id,
                "comp_id": comp_id,
                "label": ens.component_labels[(doc_id, comp_id)],
                "probs": ens.component_probs[(doc_id, comp_id)].tolist(),
            }, sort_keys=True) + "\n")
