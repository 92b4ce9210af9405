"""Render evaluation artifacts: aligned text tables, CSV confusion
matrices, and matplotlib figures saved next to the delimited output."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import AgreementReport, F1Report, MetricsReport


def _pct(x: float) -> str:
    return f"{100.0 * x:6.2f}"


def metrics_text(report: MetricsReport,
                 agreement: Optional[AgreementReport] = None) -> str:
    """Aligned summary table: average, link, per-class components and
    relations, all as F1 percentages."""
    lines: List[str] = []
    width = 42

    def row(label, value, support=None):
        tag = f"{label} ({support})" if support is not None else label
        lines.append(f"{tag:<{width}}{value}")

    row("Average (Link and Components)", _pct(report.component_link_average))
    row("Link", _pct(report.link_f1), report.link.support.get("link", 0))
    comp = report.component
    row("Components", _pct(comp.macro_f1), sum(comp.support.values()))
    for c in comp.classes:
        row(f"  {c}", _pct(comp.f1[c]), comp.support[c])
    rel = report.relation
    row("Relation", _pct(rel.macro_f1), sum(rel.support.values()))
    for c in rel.classes:
        row(f"  {c}", _pct(rel.f1[c]), rel.support[c])
    tok = report.component_tokens
    row("Components, token-wise", _pct(tok.macro_f1), sum(tok.support.values()))
    row("  micro f1", _pct(tok.micro_f1))
    if report.n_self_pairs_excluded:
        lines.append(f"(self pairs excluded from link/relation: "
                     f"{report.n_self_pairs_excluded})")
    if report.n_components_unresolved:
        lines.append(f"(components outside every pair: "
                     f"{report.n_components_unresolved})")
    if agreement is not None:
        lines.append("")
        lines.append("Ensemble agreement (Krippendorff's alpha)")
        row("  components", f"{agreement.component:6.3f}")
        row("  link", f"{agreement.link:6.3f}")
        row("  relation", f"{agreement.relation:6.3f}")
    return "\n".join(lines) + "\n"


def confusion_csv(path, rep: F1Report) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["gold\\pred"] + list(rep.classes))
        for c, counts in zip(rep.classes, rep.confusion):
            writer.writerow([c] + list(counts))


def confusion_figure(path, rep: F1Report, title: str) -> None:
    mat = np.asarray(rep.confusion, dtype=np.float64)
    denom = mat.sum(axis=1, keepdims=True)
    denom[denom == 0] = 1.0
    norm = mat / denom
    n = len(rep.classes)
    fig, ax = plt.subplots(figsize=(1.1 * n + 2.5, 1.0 * n + 2.0))
    im = ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(n), rep.classes, rotation=45, ha="right")
    ax.set_yticks(range(n), rep.classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    ax.set_title(title)
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{int(mat[i, j])}", ha="center", va="center",
                    color="white" if norm[i, j] > 0.5 else "black", fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def history_figure(path, histories: Dict[str, List[dict]]) -> None:
    """Loss and validation link F1 curves, one line per seed."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for name, rows in sorted(histories.items()):
        epochs = [r["epoch"] for r in rows]
        ax1.plot(epochs, [r["loss_total"] for r in rows], label=name)
        ax2.plot(epochs, [r["val_link_f1"] for r in rows], label=name)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss (epoch sum)")
    ax1.set_yscale("log")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation link F1")
    ax2.set_ylim(-0.02, 1.02)
    if histories:
        ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def load_history_csv(path):
    """Rows of a training-history CSV (comment lines carry provenance)."""
    rows = []
    config_hash = ""
    content = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("#"):
                if "config_hash=" in line:
                    config_hash = line.split("config_hash=")[1].split()[0].strip()
                continue
            content.append(line)
    for rec in csv.DictReader(content):
        rows.append({
            "epoch": int(rec["epoch"]),
            "lr": float(rec["lr"]),
            "loss_total": float(rec["loss_total"]),
            "ce_source": float(rec["ce_source"]),
            "ce_target": float(rec["ce_target"]),
            "ce_relation": float(rec["ce_relation"]),
            "l2": float(rec["l2"]),
            "val_link_f1": float(rec["val_link_f1"]),
        })
    return rows, config_hash


def render_report(out_dir, report: MetricsReport,
                  agreement: Optional[AgreementReport],
                  histories: Optional[Dict[str, List[dict]]] = None,
                  config_hash: str = "") -> List[str]:
    """Write every report artifact into ``out_dir``; -> produced paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    produced = []

    payload = {"config_hash": config_hash, "metrics": report.to_dict()}
    if agreement is not None:
        payload["agreement"] = agreement.to_dict()
    p = out / "metrics.json"
    p.write_text(json.dumps(payload, sort_keys=True, indent=1),
                 encoding="utf-8")
    produced.append(str(p))

    p = out / "metrics.txt"
    p.write_text(metrics_text(report, agreement), encoding="utf-8")
    produced.append(str(p))

    for name, rep in (("component", report.component),
                      ("relation", report.relation)):
        p = out / f"confusion_{name}.csv"
        confusion_csv(p, rep)
        produced.append(str(p))
        p = out / f"confusion_{name}.png"
        confusion_figure(p, rep, f"{name} confusion")
        produced.append(str(p))

    if histories:
        p = out / "training_history.png"
        history_figure(p, histories)
        produced.append(str(p))
    return produced
