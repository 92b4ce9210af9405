"""Evaluation suite: F1 families, confusion matrices, token projection,
and Krippendorff's alpha over ensemble members.

Conventions: zero-denominator precision/recall/F1 are 0; macro F1 is the
arithmetic mean of per-class F1 over the declared class list; micro f1
pools instance counts.  Link F1 is the F1 of the positive class over
non-self pairs.  Alpha is nominal, computed from the coincidence matrix,
and defined as 1 when expected disagreement is zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class F1Report:
    classes: List[str]
    precision: Dict[str, float]
    recall: Dict[str, float]
    f1: Dict[str, float]
    support: Dict[str, int]
    macro_f1: float
    micro_f1: float
    confusion: List[List[int]]  # rows gold, columns predicted

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "confusion": self.confusion,
        }


def confusion(preds: Sequence, gold: Sequence, classes: Sequence) -> np.ndarray:
    """counts[g][p] of gold class g predicted as p."""
    if len(preds) != len(gold):
        raise MetricsError(f"length mismatch: {len(preds)} preds, {len(gold)} gold")
    index = {c: i for i, c in enumerate(classes)}
    mat = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, g in zip(preds, gold):
        if g not in index:
            raise MetricsError(f"unknown gold label {g!r}")
        if p not in index:
            raise MetricsError(f"unknown predicted label {p!r}")
        mat[index[g], index[p]] += 1
    return mat


def f1_suite(preds: Sequence, gold: Sequence, classes: Sequence) -> F1Report:
    mat = confusion(preds, gold, classes)
    classes = list(classes)
    precision, recall, f1, support = {}, {}, {}, {}
    for i, c in enumerate(classes):
        tp = int(mat[i, i])
        fp = int(mat[:, i].sum() - tp)
        fn = int(mat[i, :].sum() - tp)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision[c] = p
        recall[c] = r
        f1[c] = 2 * p * r / (p + r) if p + r else 0.0
        support[c] = int(mat[i, :].sum())
    macro = float(np.mean([f1[c] for c in classes])) if classes else 0.0
    total = int(mat.sum())
    micro = float(np.trace(mat) / total) if total else 0.0
    return F1Report(classes=classes, precision=precision, recall=recall,
                    f1=f1, support=support, macro_f1=macro, micro_f1=micro,
                    confusion=mat.tolist())


def token_project(pred_labels: Sequence, gold_labels: Sequence,
                  token_counts: Sequence[int]):
    """Expand component-level labels token-wise.

    Each component contributes ``token_counts[i]`` copies of its predicted
    and gold labels to the two streams, for comparison against token-wise
    taggers.  -> (pred_stream, gold_stream).
    """
    if not (len(pred_labels) == len(gold_labels) == len(token_counts)):
        raise MetricsError("token_project inputs must align")
    preds, golds = [], []
    for p, g, n in zip(pred_labels, gold_labels, token_counts):
        if n < 1:
            raise MetricsError("every component must have tokens")
        preds.extend([p] * n)
        golds.extend([g] * n)
    return preds, golds


def krippendorff_alpha(labels) -> float:
    """Nominal-level alpha for a complete N-raters x M-items label matrix.

    Built from the coincidence matrix: each item contributes its ordered
    pairs of rater values, weighted 1/(N-1).  Perfect agreement gives 1;
    zero expected disagreement (a single class overall) is defined as 1.
    """
    arr = np.asarray(labels, dtype=object)
    if arr.ndim != 2:
        raise MetricsError("labels must be a 2-D raters x items matrix")
    n_raters, n_items = arr.shape
    if n_raters < 2:
        raise MetricsError("alpha needs at least 2 raters")
    if n_items < 1:
        raise MetricsError("alpha needs at least 1 item")

    cats: Dict[object, int] = {}
    for v in arr.flat:
        if v not in cats:
            cats[v] = len(cats)
    C = len(cats)
    counts = np.zeros((n_items, C), dtype=np.float64)
    for r in range(n_raters):
        for u in range(n_items):
            counts[u, cats[arr[r, u]]] += 1.0

    coincidence = (counts.T @ counts - np.diag(counts.sum(axis=0))) / (n_raters - 1)
    n_c = coincidence.sum(axis=1)
    n_total = n_c.sum()
    observed = float(coincidence.sum() - np.trace(coincidence)) / n_total
    expected = float(n_c.sum() ** 2 - (n_c ** 2).sum()) / (n_total * (n_total - 1))
    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected


@dataclass
class AgreementReport:
    """Alpha among the ensemble's members, per task."""
    component: float
    link: float
    relation: float

    def to_dict(self) -> dict:
        return {"component": self.component, "link": self.link,
                "relation": self.relation}


@dataclass
class MetricsReport:
    """Everything the evaluation emits for one split."""
    component: F1Report
    component_tokens: F1Report
    link: F1Report            # over {"no-link", "link"}
    link_f1: float            # positive class only
    relation: F1Report        # collapsed domain, NONE included
    component_link_average: float
    n_pairs: int
    n_self_pairs_excluded: int
    n_components: int
    n_components_unresolved: int = 0

    def to_dict(self) -> dict:
        return {
            "component": self.component.to_dict(),
            "component_tokens": self.component_tokens.to_dict(),
            "link": self.link.to_dict(),
            "link_f1": self.link_f1,
            "relation": self.relation.to_dict(),
            "component_link_average": self.component_link_average,
            "n_pairs": self.n_pairs,
            "n_self_pairs_excluded": self.n_self_pairs_excluded,
            "n_components": self.n_components,
            "n_components_unresolved": self.n_components_unresolved,
        }


LINK_CLASSES = ("no-link", "link")


def link_report(pred_link: Sequence[bool], gold_link: Sequence[bool]) -> F1Report:
    to_label = lambda xs: [LINK_CLASSES[1] if x else LINK_CLASSES[0] for x in xs]
    return f1_suite(to_label(pred_link), to_label(gold_link), list(LINK_CLASSES))
