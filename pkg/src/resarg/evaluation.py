"""Assemble the full evaluation from ensemble predictions and gold data.

Link and relation metrics run over non-self pairs with inverse labels
collapsed to NONE on both sides; component metrics run over the resolved
component labels (and their token-wise projection).  The summary score is
the mean of the component macro F1 and the positive-class link F1.
"""

from __future__ import annotations

from typing import Dict, Sequence, Tuple

from .corpus import CorpusSchema, Document
from .ensemble import EnsemblePrediction, agreement_report
from .metrics import MetricsReport, f1_suite, link_report, token_project
from .pairing import collapse_for_test


def evaluate_ensemble(docs: Sequence[Document], ens: EnsemblePrediction,
                      schema: CorpusSchema) -> MetricsReport:
    keep = [i for i, p in enumerate(ens.pairs) if not p.is_self_pair]
    gold_link = [ens.pairs[i].link for i in keep]
    pred_link = [bool(ens.link_votes[i]) for i in keep]
    gold_rel = [collapse_for_test(ens.pairs[i].relation) for i in keep]
    pred_rel = [ens.relation_votes[i] for i in keep]

    link = link_report(pred_link, gold_link)
    link_f1 = link.f1["link"]
    relation = f1_suite(pred_rel, gold_rel, list(schema.test_relations))

    evaluated_docs = {p.doc_id for p in ens.pairs}
    comp_by_key: Dict[Tuple[str, str], object] = {}
    for d in docs:
        if d.doc_id not in evaluated_docs:
            continue
        for c in d.components:
            comp_by_key[(d.doc_id, c.comp_id)] = c
    resolved = sorted(k for k in ens.component_labels if k in comp_by_key)
    gold_comp = [comp_by_key[k].comp_type for k in resolved]
    pred_comp = [ens.component_labels[k] for k in resolved]
    token_counts = [len(comp_by_key[k].tokens) for k in resolved]

    component = f1_suite(pred_comp, gold_comp, list(schema.component_classes))
    tok_pred, tok_gold = token_project(pred_comp, gold_comp, token_counts)
    component_tokens = f1_suite(tok_pred, tok_gold,
                                list(schema.component_classes))

    return MetricsReport(
        component=component,
        component_tokens=component_tokens,
        link=link,
        link_f1=link_f1,
        relation=relation,
        component_link_average=(component.macro_f1 + link_f1) / 2.0,
        n_pairs=len(keep),
        n_self_pairs_excluded=len(ens.pairs) - len(keep),
        n_components=len(comp_by_key),
        n_components_unresolved=len(comp_by_key) - len(resolved),
    )


def evaluate_with_agreement(docs, ens: EnsemblePrediction,
                            schema: CorpusSchema):
    """-> (MetricsReport, AgreementReport | None when a single model)."""
    report = evaluate_ensemble(docs, ens, schema)
    agreement = agreement_report(ens, schema) if ens.n_models >= 2 else None
    return report, agreement
