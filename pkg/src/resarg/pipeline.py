"""End-to-end run driven by one JSON config.

Stages: corpus -> pairs -> embeddings -> train -> predict -> evaluate ->
report.  Every artifact embeds the config hash so downstream stages can
reject mixed provenance; each stage is re-runnable from the files the
previous stage persisted.  Environment variables override paths only:
CORPUS_DIR, EMBEDDINGS_PATH, OUT_DIR.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

from . import corpus as corpus_mod
from .corpus import (
    CorpusSchema, Document, SplitTag, SynthSizes, assign_splits, load_corpus,
    max_component_tokens, parse_standoff, save_corpus, split_discontinuous,
    synth_corpus, validate,
)
from .embeddings import EmbeddingTable, build_table, load_vectors
from .ensemble import (
    agreement_report, ensemble_predict, save_component_labels,
    save_predictions,
)
from .evaluation import evaluate_ensemble
from .neural.model import ArchConfig, load_checkpoint, save_checkpoint
from .pairing import PairPolicy, enumerate_pairs, save_pairs
from .report import render_report
from .training import TrainConfig, encode_dataset, train_ensemble

# exit codes: 0 ok, 2 config error, 3 data error, 4 check failure
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4


class PipelineError(Exception):
    def __init__(self, stage: str, exit_code: int, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.exit_code = exit_code


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:16]


@dataclass
class RunConfig:
    raw: dict
    out_dir: Path
    schema: CorpusSchema
    policy: PairPolicy
    train_cfg: TrainConfig
    seeds: List[int]
    link_rule: str
    jobs: int
    hash: str

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise PipelineError("config", EXIT_CONFIG, str(e)) from e
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            corpus_cfg = raw["corpus"]
            if corpus_cfg.get("format") == "synthetic":
                schema = CorpusSchema.from_dict(corpus_cfg["synthetic"]["schema"])
            else:
                schema_path = corpus_cfg["schema"]
                if not Path(schema_path).exists():
                    raise PipelineError("config", EXIT_CONFIG,
                                        f"schema file missing: {schema_path}")
                schema = CorpusSchema.load(schema_path)
            policy = PairPolicy.from_dict(raw.get("policy", {}))
            train_cfg = TrainConfig.from_dict(raw.get("train", {}))
            seeds = [int(s) for s in raw.get("seeds", [train_cfg.seed])]
            out_dir = Path(os.environ.get("OUT_DIR", raw["out_dir"]))
        except PipelineError:
            raise
        except Exception as e:
            raise PipelineError("config", EXIT_CONFIG, str(e)) from e
        return cls(raw=raw, out_dir=out_dir, schema=schema, policy=policy,
                   train_cfg=train_cfg, seeds=seeds,
                   link_rule=raw.get("link_rule", "relation_argmax"),
                   jobs=int(raw.get("jobs", 1)),
                   hash=config_hash(raw))


def _log(log_fn, stage: str, message: str) -> None:
    if log_fn:
        log_fn(f"stage={stage} {message}")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_corpus(cfg: RunConfig, log_fn=None) -> List[Document]:
    c = cfg.raw["corpus"]
    fmt = c.get("format")
    if fmt == "synthetic":
        syn = c["synthetic"]
        sizes = SynthSizes(**syn.get("sizes", {}))
        docs = synth_corpus(int(syn["seed"]), int(syn["n_docs"]),
                            cfg.schema, sizes)
    elif fmt in ("standoff", "normalized"):
        in_path = Path(os.environ.get("CORPUS_DIR", c["in"]))
        if not in_path.exists():
            raise PipelineError("corpus", EXIT_CONFIG,
                                f"input path missing: {in_path}")
        docs = read_corpus_input(in_path, fmt, cfg.schema)
    else:
        raise PipelineError("corpus", EXIT_CONFIG, f"unknown format {fmt!r}")

    if c.get("split_discontinuous", True):
        docs = [split_discontinuous(d) for d in docs]

    splits = cfg.raw.get("splits")
    if splits and any(d.split_tag == SplitTag.UNASSIGNED for d in docs):
        docs = assign_splits(docs, float(splits.get("valid_fraction", 0.1)),
                             float(splits.get("test_fraction", 0.2)),
                             int(splits.get("seed", 0)))

    problems = [v for d in docs for v in validate(d, cfg.schema)]
    if problems:
        raise PipelineError("corpus", EXIT_DATA,
                            f"{len(problems)} violations; first: "
                            f"{problems[0].rule}: {problems[0].message}")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_corpus(cfg.out_dir / "corpus.json", docs, cfg.schema,
                meta={"config_hash": cfg.hash})
    _log(log_fn, "corpus", f"documents={len(docs)}")
    return docs


def read_corpus_input(in_path: Path, fmt: str,
                      schema: CorpusSchema) -> List[Document]:
    """Read standoff (.txt/.ann pairs) or normalized JSON input."""
    docs: List[Document] = []
    if fmt == "standoff":
        if not in_path.is_dir():
            raise PipelineError("corpus", EXIT_CONFIG,
                                f"standoff input must be a directory: {in_path}")
        txts = sorted(in_path.glob("*.txt"))
        if not txts:
            raise PipelineError("corpus", EXIT_DATA,
                                f"no .txt files in {in_path}")
        for txt in txts:
            ann = txt.with_suffix(".ann")
            if not ann.exists():
                raise PipelineError("corpus", EXIT_DATA,
                                    f"missing annotation file {ann}")
            try:
                docs.append(parse_standoff(
                    txt.read_text(encoding="utf-8"),
                    ann.read_text(encoding="utf-8"),
                    schema, doc_id=txt.stem))
            except corpus_mod.CorpusError as e:
                raise PipelineError("corpus", EXIT_DATA,
                                    f"{txt.name}: {e}") from e
        return docs
    # normalized: single corpus file or a directory of them
    paths = sorted(in_path.glob("*.json")) if in_path.is_dir() else [in_path]
    for p in paths:
        try:
            loaded, file_schema, _ = load_corpus(p)
        except (corpus_mod.CorpusError, KeyError, json.JSONDecodeError) as e:
            raise PipelineError("corpus", EXIT_DATA, f"{p.name}: {e}") from e
        if file_schema.component_classes != schema.component_classes or \
                file_schema.forward_relations != schema.forward_relations:
            raise PipelineError("corpus", EXIT_DATA,
                                f"{p.name}: schema disagrees with run schema")
        docs.extend(loaded)
    return docs


def split_documents(docs: Sequence[Document]):
    out = {tag: [] for tag in (SplitTag.TRAIN, SplitTag.VALID, SplitTag.TEST)}
    for d in docs:
        if d.split_tag in out:
            out[d.split_tag].append(d)
    return out


def stage_pairs(cfg: RunConfig, docs: Sequence[Document], log_fn=None):
    by_split = split_documents(docs)
    pair_sets = {}
    for tag, split_docs in by_split.items():
        pairs = [p for d in split_docs
                 for p in enumerate_pairs(d, cfg.policy, cfg.schema)]
        pair_sets[tag.value] = pairs
        save_pairs(cfg.out_dir / f"pairs_{tag.value}.ndjson", pairs,
                   config_hash=cfg.hash)
        _log(log_fn, "pairs", f"split={tag.value} pairs={len(pairs)}")
    if not pair_sets["train"]:
        raise PipelineError("pairs", EXIT_DATA, "no training pairs")
    return pair_sets


def stage_embeddings(cfg: RunConfig, docs: Sequence[Document], log_fn=None):
    emb_cfg = cfg.raw.get("embeddings", {})
    path = os.environ.get("EMBEDDINGS_PATH", emb_cfg.get("path"))
    arch_raw = dict(cfg.raw.get("arch", {}))
    dim = int(arch_raw.get("embed_dim", 300))
    pretrained = None
    if path:
        if not Path(path).exists():
            raise PipelineError("embeddings", EXIT_CONFIG,
                                f"embeddings path missing: {path}")
        pretrained = load_vectors(path, expected_dim=dim)
    tokens = (t for d in docs for c in d.components for t in c.tokens)
    table = build_table(tokens, pretrained, seed=int(emb_cfg.get("seed", 0)),
                        dim=dim)
    T = int(arch_raw.get("T", 0)) or max_component_tokens(docs)
    arch_raw.setdefault("variant", "resattarg")
    arch_raw.update(
        T=T,
        n_component_classes=len(cfg.schema.component_classes),
        n_relation_classes=len(cfg.schema.extended_relations),
        embed_dim=dim,
    )
    try:
        arch = ArchConfig.from_dict(arch_raw)
    except Exception as e:
        raise PipelineError("embeddings", EXIT_CONFIG, str(e)) from e
    _log(log_fn, "embeddings",
         f"vocab={len(table.vocab)} oov={len(table.oov_rows)} T={T}")
    return table, arch


def stage_train(cfg: RunConfig, arch: ArchConfig, table: EmbeddingTable,
                docs, pair_sets, log_fn=None):
    train_ds = encode_dataset(docs, pair_sets["train"], table, arch.T, cfg.schema)
    valid_pairs = pair_sets["valid"] or pair_sets["train"]
    valid_ds = encode_dataset(docs, valid_pairs, table, arch.T, cfg.schema)
    ckpt_dir = cfg.out_dir / "ckpt"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    try:
        results = train_ensemble(arch, table.matrix, train_ds, valid_ds,
                                 cfg.train_cfg, cfg.seeds, jobs=cfg.jobs,
                                 log_fn=log_fn)
    except Exception as e:
        raise PipelineError("train", EXIT_DATA, str(e)) from e
    prefixes = []
    for seed, (params, history) in zip(cfg.seeds, results):
        prefix = ckpt_dir / f"seed_{seed}"
        save_checkpoint(params, prefix, config_hash=cfg.hash)
        history.to_csv(cfg.out_dir / f"history_seed_{seed}.csv",
                       config_hash=cfg.hash)
        prefixes.append(prefix)
        _log(log_fn, "train",
             f"seed={seed} best_epoch={history.best_epoch} "
             f"stopped_epoch={history.stopped_epoch}")
    return prefixes


def stage_predict(cfg: RunConfig, docs, pair_sets, table, arch, log_fn=None):
    eval_split = cfg.raw.get("eval_split", "test")
    pairs = pair_sets.get(eval_split)
    if not pairs:
        raise PipelineError("predict", EXIT_DATA,
                            f"no pairs in eval split {eval_split!r}")
    ds = encode_dataset(docs, pairs, table, arch.T, cfg.schema)
    models = []
    for seed in cfg.seeds:
        prefix = cfg.out_dir / "ckpt" / f"seed_{seed}"
        params, ck_hash = load_checkpoint(prefix)
        if ck_hash and ck_hash != cfg.hash:
            raise PipelineError("predict", EXIT_DATA,
                                f"checkpoint {prefix} hash {ck_hash} != "
                                f"run hash {cfg.hash}")
        models.append(params)
    ens = ensemble_predict(models, ds, cfg.schema, link_rule=cfg.link_rule)
    save_predictions(cfg.out_dir / "predictions.ndjson", ens,
                     config_hash=cfg.hash)
    save_component_labels(cfg.out_dir / "components.ndjson", ens,
                          config_hash=cfg.hash)
    _log(log_fn, "predict", f"split={eval_split} pairs={len(pairs)} "
                            f"models={len(models)}")
    return ens


def stage_evaluate(cfg: RunConfig, docs, ens, log_fn=None):
    report = evaluate_ensemble(docs, ens, cfg.schema)
    agreement = agreement_report(ens, cfg.schema) if ens.n_models >= 2 else None
    payload = {"config_hash": cfg.hash, "metrics": report.to_dict()}
    if agreement is not None:
        payload["agreement"] = agreement.to_dict()
    (cfg.out_dir / "metrics.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1), encoding="utf-8")
    _log(log_fn, "evaluate",
         f"link_f1={report.link_f1:.4f} comp_macro={report.component.macro_f1:.4f}")
    return report, agreement


def stage_report(cfg: RunConfig, report, agreement, log_fn=None):
    from .report import load_history_csv
    histories = {}
    for seed in cfg.seeds:
        path = cfg.out_dir / f"history_seed_{seed}.csv"
        if path.exists():
            rows, h = load_history_csv(path)
            if h and h != cfg.hash:
                raise PipelineError("report", EXIT_DATA,
                                    f"history {path.name} hash {h} != run "
                                    f"hash {cfg.hash}")
            histories[f"seed_{seed}"] = rows
    produced = render_report(cfg.out_dir / "report", report, agreement,
                             histories, config_hash=cfg.hash)
    _log(log_fn, "report", f"artifacts={len(produced)}")
    return produced


def cmd_pipeline(config_path, log_fn=None) -> int:
    """Run every stage; -> process exit code."""
    cfg = RunConfig.load(config_path)
    docs = stage_corpus(cfg, log_fn)
    pair_sets = stage_pairs(cfg, docs, log_fn)
    table, arch = stage_embeddings(cfg, docs, log_fn)
    stage_train(cfg, arch, table, docs, pair_sets, log_fn)
    ens = stage_predict(cfg, docs, pair_sets, table, arch, log_fn)
    report, agreement = stage_evaluate(cfg, docs, ens, log_fn)
    stage_report(cfg, report, agreement, log_fn)
    return EXIT_OK
