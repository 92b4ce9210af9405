"""Command-line interface.

Subcommands: ingest, validate, pairs, train, train-ensemble, predict,
evaluate, gradcheck, report, pipeline.  Exit codes: 0 ok, 2 config error,
3 data error, 4 check failure.  Logs are line-oriented ``key=value``
records on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import (
    CorpusError, CorpusSchema, load_corpus, save_corpus,
    split_discontinuous, validate,
)
from .embeddings import EmbeddingError, build_table, load_vectors
from .ensemble import (
    EnsembleError, agreement_report, ensemble_predict, load_predictions,
    save_component_labels, save_predictions,
)
from .evaluation import evaluate_ensemble
from .neural.gradcheck import THRESHOLD, run_gradcheck
from .neural.model import ArchConfig, ConfigError, load_checkpoint, save_checkpoint
from .pairing import PairPolicy, PairingError, enumerate_pairs, load_pairs, save_pairs
from .pipeline import (
    EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_OK, PipelineError, cmd_pipeline,
    read_corpus_input,
)
from .report import load_history_csv, render_report
from .training import (
    TrainConfig, TrainingError, encode_dataset, train, train_ensemble,
)

log = print  # line-oriented stdout records


def _load_corpus_or_exit(path):
    try:
        return load_corpus(path)
    except FileNotFoundError as e:
        raise PipelineError("corpus", EXIT_CONFIG, str(e)) from e
    except (CorpusError, KeyError, json.JSONDecodeError) as e:
        raise PipelineError("corpus", EXIT_DATA, f"{path}: {e}") from e


def _split_filter(docs, split: str):
    if split == "all":
        return docs
    return [d for d in docs if d.split_tag.value == split]


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    schema = CorpusSchema.load(args.schema)
    docs = read_corpus_input(Path(args.input), args.format, schema)
    if args.split_discontinuous:
        docs = [split_discontinuous(d) for d in docs]
    problems = [v for d in docs for v in validate(d, schema)]
    if problems:
        for v in problems[:20]:
            log(f"stage=ingest violation rule={v.rule!r} ids={v.ids}")
        raise PipelineError("ingest", EXIT_DATA,
                            f"{len(problems)} validation violations")
    save_corpus(args.out, docs, schema, meta={"config_hash": ""})
    log(f"stage=ingest documents={len(docs)} "
        f"components={sum(len(d.components) for d in docs)} "
        f"links={sum(len(d.links) for d in docs)} out={args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    docs, schema, _ = _load_corpus_or_exit(args.input)
    n = 0
    for d in docs:
        for v in validate(d, schema):
            log(f"stage=validate doc={d.doc_id} rule={v.rule!r} "
                f"ids={v.ids} message={v.message!r}")
            n += 1
    log(f"stage=validate documents={len(docs)} violations={n}")
    return EXIT_OK if n == 0 else EXIT_DATA


def cmd_pairs(args) -> int:
    docs, schema, _ = _load_corpus_or_exit(args.input)
    policy = PairPolicy.load(args.policy) if args.policy else PairPolicy()
    docs = _split_filter(docs, args.split)
    pairs = [p for d in docs for p in enumerate_pairs(d, policy, schema)]
    save_pairs(args.out, pairs, config_hash="")
    n_linked = sum(1 for p in pairs if p.link)
    log(f"stage=pairs documents={len(docs)} pairs={len(pairs)} "
        f"linked={n_linked} self={sum(1 for p in pairs if p.is_self_pair)} "
        f"out={args.out}")
    return EXIT_OK


def _train_setup(args):
    """Shared by train / train-ensemble: datasets, arch, train config."""
    docs, schema, _ = _load_corpus_or_exit(args.corpus)
    train_pairs, _ = load_pairs(args.pairs)
    valid_pairs, _ = load_pairs(args.valid)

    raw = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if "train" in raw or "arch" in raw:
        train_raw = raw.get("train", {})
        arch_raw = dict(raw.get("arch", {}))
    else:
        train_raw, arch_raw = raw, {}
    tcfg = TrainConfig.from_dict(train_raw)

    dim = int(arch_raw.get("embed_dim", 300))
    pretrained = None
    if args.embeddings:
        if not Path(args.embeddings).exists():
            raise PipelineError("embeddings", EXIT_CONFIG,
                                f"embeddings path missing: {args.embeddings}")
        pretrained = load_vectors(args.embeddings, expected_dim=dim)
    tokens = (t for d in docs for c in d.components for t in c.tokens)
    table = build_table(tokens, pretrained, seed=args.embedding_seed, dim=dim)

    from .corpus import max_component_tokens
    arch_raw.update(
        variant=args.arch,
        T=int(arch_raw.get("T", 0)) or max_component_tokens(docs),
        n_component_classes=len(schema.component_classes),
        n_relation_classes=len(schema.extended_relations),
        embed_dim=dim,
    )
    arch = ArchConfig.from_dict(arch_raw)
    train_ds = encode_dataset(docs, train_pairs, table, arch.T, schema)
    valid_ds = encode_dataset(docs, valid_pairs, table, arch.T, schema)
    return arch, table, tcfg, train_ds, valid_ds


def cmd_train(args) -> int:
    arch, table, tcfg, train_ds, valid_ds = _train_setup(args)
    if args.seed is not None:
        from dataclasses import replace
        tcfg = replace(tcfg, seed=args.seed)
    params, history = train(arch, table.matrix, train_ds, valid_ds, tcfg,
                            log_fn=lambda m: log(f"stage=train {m}"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prefix = out / f"seed_{tcfg.seed}"
    save_checkpoint(params, prefix)
    history.to_csv(out / f"history_seed_{tcfg.seed}.csv")
    log(f"stage=train best_epoch={history.best_epoch} "
        f"stopped_epoch={history.stopped_epoch} ckpt={prefix}")
    return EXIT_OK


def _parse_seeds(text: str):
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def cmd_train_ensemble(args) -> int:
    arch, table, tcfg, train_ds, valid_ds = _train_setup(args)
    seeds = _parse_seeds(args.seeds)
    results = train_ensemble(arch, table.matrix, train_ds, valid_ds, tcfg,
                             seeds, jobs=args.jobs,
                             log_fn=lambda m: log(f"stage=train-ensemble {m}"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed, (params, history) in zip(seeds, results):
        save_checkpoint(params, out / f"seed_{seed}")
        history.to_csv(out / f"history_seed_{seed}.csv")
    log(f"stage=train-ensemble members={len(seeds)} out={out}")
    return EXIT_OK


def _load_models(ckpt_arg: str):
    path = Path(ckpt_arg)
    if path.is_dir():
        prefixes = sorted(p.with_suffix("") for p in path.glob("seed_*.json"))
    else:
        prefixes = [path.with_suffix("") if path.suffix else path]
    if not prefixes:
        raise PipelineError("predict", EXIT_CONFIG,
                            f"no checkpoints under {ckpt_arg}")
    return [load_checkpoint(p)[0] for p in prefixes]


def cmd_predict(args) -> int:
    docs, schema, _ = _load_corpus_or_exit(args.corpus)
    pairs, _ = load_pairs(args.pairs)
    models = _load_models(args.ckpt)
    table_matrix = models[0].embedding_matrix  # checkpoints carry the table
    arch = models[0].cfg
    # token ids must be rebuilt exactly as at training time: reconstruct the
    # vocabulary from the corpus in first-seen order
    tokens = (t for d in docs for c in d.components for t in c.tokens)
    table = build_table(tokens, None, seed=0, dim=arch.embed_dim)
    if table.matrix.shape[0] != table_matrix.shape[0]:
        raise PipelineError(
            "predict", EXIT_DATA,
            f"corpus vocabulary ({table.matrix.shape[0]} rows) does not "
            f"match the checkpoint embedding table ({table_matrix.shape[0]})")
    table.matrix = table_matrix
    ds = encode_dataset(docs, pairs, table, arch.T, schema)
    ens = ensemble_predict(models, ds, schema, link_rule=args.link_rule)
    save_predictions(args.out, ens, config_hash="")
    if args.components:
        save_component_labels(args.components, ens, config_hash="")
    log(f"stage=predict models={len(models)} pairs={len(pairs)} out={args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    docs, schema, _ = _load_corpus_or_exit(args.corpus)
    pairs, pairs_meta = load_pairs(args.pairs)
    ens, pred_meta = load_predictions(args.pred, pairs, schema)
    h1 = pairs_meta.get("config_hash", "")
    h2 = pred_meta.get("config_hash", "")
    if h1 and h2 and h1 != h2:
        raise PipelineError("evaluate", EXIT_DATA,
                            f"provenance mismatch: pairs hash {h1} != "
                            f"predictions hash {h2}")
    report = evaluate_ensemble(docs, ens, schema)
    agreement = agreement_report(ens, schema) if ens.n_models >= 2 else None
    payload = {"config_hash": h2 or h1, "metrics": report.to_dict()}
    if agreement is not None:
        payload["agreement"] = agreement.to_dict()
    Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=1),
                              encoding="utf-8")
    log(f"stage=evaluate link_f1={report.link_f1:.4f} "
        f"component_macro_f1={report.component.macro_f1:.4f} out={args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    variants = ("resarg", "resattarg") if args.arch == "both" else (args.arch,)
    failed = False
    for variant in variants:
        results = run_gradcheck(variant=variant, seed=args.seed,
                                T=args.T, samples_per_tensor=args.samples,
                                corrupt_block=args.corrupt)
        for r in results:
            status = "ok" if r.ok else "FAIL"
            log(f"stage=gradcheck arch={variant} block={r.block} "
                f"max_rel_error={r.max_rel_error:.3e} coords={r.n_coords} "
                f"status={status}")
            failed = failed or not r.ok
    if failed:
        log(f"stage=gradcheck status=FAIL threshold={THRESHOLD:g}")
        return EXIT_CHECK
    log(f"stage=gradcheck status=ok threshold={THRESHOLD:g}")
    return EXIT_OK


def cmd_report(args) -> int:
    payload = json.loads(Path(args.metrics).read_text(encoding="utf-8"))
    from .metrics import AgreementReport, F1Report, MetricsReport

    def f1_from(d):
        return F1Report(classes=d["classes"], precision=d["precision"],
                        recall=d["recall"], f1=d["f1"], support=d["support"],
                        macro_f1=d["macro_f1"], micro_f1=d["micro_f1"],
                        confusion=d["confusion"])

    m = payload["metrics"]
    report = MetricsReport(
        component=f1_from(m["component"]),
        component_tokens=f1_from(m["component_tokens"]),
        link=f1_from(m["link"]), link_f1=m["link_f1"],
        relation=f1_from(m["relation"]),
        component_link_average=m["component_link_average"],
        n_pairs=m["n_pairs"],
        n_self_pairs_excluded=m["n_self_pairs_excluded"],
        n_components=m["n_components"],
        n_components_unresolved=m.get("n_components_unresolved", 0))
    agreement = None
    if "agreement" in payload:
        a = payload["agreement"]
        agreement = AgreementReport(component=a["component"], link=a["link"],
                                    relation=a["relation"])

    run_hash = payload.get("config_hash", "")
    histories = {}
    for path in args.history or []:
        rows, h = load_history_csv(path)
        if run_hash and h and h != run_hash:
            raise PipelineError("report", EXIT_DATA,
                                f"history {path} hash {h} != metrics hash "
                                f"{run_hash}")
        histories[Path(path).stem] = rows
    produced = render_report(args.out, report, agreement, histories,
                             config_hash=run_hash)
    for p in produced:
        log(f"stage=report artifact={p}")
    return EXIT_OK


def cmd_pipeline_cli(args) -> int:
    return cmd_pipeline(args.config, log_fn=log)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resarg",
        description="Multi-task residual networks for argument mining")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a corpus into normalized JSON")
    p.add_argument("--format", choices=("standoff", "normalized"), required=True)
    p.add_argument("--schema", required=True, help="corpus schema JSON")
    p.add_argument("--in", dest="input", required=True, help="input dir/file")
    p.add_argument("--out", required=True, help="normalized corpus JSON")
    p.add_argument("--split-discontinuous", action="store_true",
                   help="split multi-fragment components at ingestion")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("validate", help="check corpus invariants")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("pairs", help="enumerate labeled component pairs")
    p.add_argument("--policy", help="pair policy JSON (default unrestricted)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="all",
                   choices=("all", "train", "valid", "test"))
    p.set_defaults(fn=cmd_pairs)

    def add_train_args(p):
        p.add_argument("--arch", choices=("resarg", "resattarg"), required=True)
        p.add_argument("--config", help="train/arch config JSON")
        p.add_argument("--pairs", required=True)
        p.add_argument("--valid", required=True)
        p.add_argument("--corpus", required=True, help="normalized corpus JSON")
        p.add_argument("--embeddings", help="pretrained vector file")
        p.add_argument("--embedding-seed", type=int, default=0)
        p.add_argument("--out", required=True, help="checkpoint directory")

    p = sub.add_parser("train", help="train a single model")
    add_train_args(p)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("train-ensemble", help="train one model per seed")
    add_train_args(p)
    p.add_argument("--seeds", required=True, help='e.g. "1..10" or "3,5,9"')
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_train_ensemble)

    p = sub.add_parser("predict", help="ensemble predictions over a pair file")
    p.add_argument("--ckpt", required=True, help="checkpoint dir or prefix")
    p.add_argument("--pairs", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--components", help="also write component labels ndjson")
    p.add_argument("--link-rule", default="relation_argmax",
                   choices=("relation_argmax", "p_link_threshold"))
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="metrics JSON")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every block")
    p.add_argument("--arch", default="both",
                   choices=("both", "resarg", "resattarg"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=12)
    p.add_argument("--samples", type=int, default=6)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # negative-control fixture
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("report", help="render tables, CSVs, and figures")
    p.add_argument("--metrics", required=True, help="metrics JSON")
    p.add_argument("--history", nargs="*", help="training history CSVs")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("pipeline", help="run every stage from one config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_pipeline_cli)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (CorpusError, PairingError, EmbeddingError, EnsembleError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, TrainingError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as e:
        print(f"error: malformed JSON: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
