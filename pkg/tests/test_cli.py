import json
from pathlib import Path

import pytest

from resarg.cli import main

SCHEMA = {
    "corpus_id": "toy",
    "component_classes": ["claim", "premise", "evidence"],
    "forward_relations": ["supports", "attacks"],
}


def write_standoff_corpus(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    (root / "doc1.txt").write_text("Cats rule. Dogs drool. Fish blub.",
                                   encoding="utf-8")
    (root / "doc1.ann").write_text(
        "T1\tclaim 0 10\tCats rule.\n"
        "T2\tpremise 11 22\tDogs drool.\n"
        "T3\tevidence 23 33\tFish blub.\n"
        "R1\tsupports Arg1:T2 Arg2:T1\n"
        "R2\tattacks Arg1:T3 Arg2:T1\n", encoding="utf-8")
    (root / "doc2.txt").write_text("One thing. Another thing.",
                                   encoding="utf-8")
    (root / "doc2.ann").write_text(
        "T1\tclaim 0 10\tOne thing.\n"
        "T2\tpremise 11 25\tAnother thing.\n"
        "R1\tsupports Arg1:T1 Arg2:T2\n", encoding="utf-8")


@pytest.fixture
def standoff_dir(tmp_path):
    d = tmp_path / "standoff"
    write_standoff_corpus(d)
    schema_path = tmp_path / "schema.json"
    schema_path.write_text(json.dumps(SCHEMA), encoding="utf-8")
    return d, schema_path


def test_ingest_validate_pairs_flow(tmp_path, standoff_dir, capsys):
    corpus_dir, schema_path = standoff_dir
    corpus_out = tmp_path / "corpus.json"
    assert main(["ingest", "--format", "standoff", "--schema", str(schema_path),
                 "--in", str(corpus_dir), "--out", str(corpus_out)]) == 0
    assert corpus_out.exists()

    assert main(["validate", "--in", str(corpus_out)]) == 0

    pairs_out = tmp_path / "pairs.ndjson"
    assert main(["pairs", "--in", str(corpus_out),
                 "--out", str(pairs_out)]) == 0
    from resarg.pairing import load_pairs
    pairs, _ = load_pairs(pairs_out)
    assert len(pairs) == 3 * 2 + 2 * 1  # n(n-1) per document
    out = capsys.readouterr().out
    assert "stage=pairs" in out


def test_validate_flags_broken_corpus(tmp_path, standoff_dir):
    corpus_dir, schema_path = standoff_dir
    corpus_out = tmp_path / "corpus.json"
    main(["ingest", "--format", "standoff", "--schema", str(schema_path),
          "--in", str(corpus_dir), "--out", str(corpus_out)])
    payload = json.loads(corpus_out.read_text())
    payload["documents"][0]["links"].append(
        {"source": "T1", "target": "T1", "relation": "supports"})
    corpus_out.write_text(json.dumps(payload))
    assert main(["validate", "--in", str(corpus_out)]) == 3


def test_ingest_rejects_bad_annotation(tmp_path, standoff_dir):
    corpus_dir, schema_path = standoff_dir
    (corpus_dir / "doc3.txt").write_text("Tiny.", encoding="utf-8")
    (corpus_dir / "doc3.ann").write_text("T1\tclaim 0 99\tTiny.\n",
                                         encoding="utf-8")
    rc = main(["ingest", "--format", "standoff", "--schema", str(schema_path),
               "--in", str(corpus_dir), "--out", str(tmp_path / "c.json")])
    assert rc == 3


def test_missing_embeddings_is_config_error(tmp_path, standoff_dir, capsys):
    corpus_dir, schema_path = standoff_dir
    corpus_out = tmp_path / "corpus.json"
    main(["ingest", "--format", "standoff", "--schema", str(schema_path),
          "--in", str(corpus_dir), "--out", str(corpus_out)])
    pairs_out = tmp_path / "pairs.ndjson"
    main(["pairs", "--in", str(corpus_out), "--out", str(pairs_out)])
    rc = main(["train", "--arch", "resattarg", "--pairs", str(pairs_out),
               "--valid", str(pairs_out), "--corpus", str(corpus_out),
               "--embeddings", str(tmp_path / "nope.txt"),
               "--out", str(tmp_path / "ckpt")])
    assert rc == 2
    assert "embeddings" in capsys.readouterr().err


def test_gradcheck_ok_and_negative_control(capsys):
    assert main(["gradcheck", "--arch", "resarg", "--T", "6",
                 "--samples", "1"]) == 0
    out = capsys.readouterr().out
    assert "status=ok" in out
    assert main(["gradcheck", "--arch", "resarg", "--T", "6", "--samples", "1",
                 "--corrupt", "heads"]) == 4


def test_gradcheck_repeatable(capsys):
    main(["gradcheck", "--arch", "resarg", "--T", "6", "--samples", "1",
          "--seed", "3"])
    first = capsys.readouterr().out
    main(["gradcheck", "--arch", "resarg", "--T", "6", "--samples", "1",
          "--seed", "3"])
    assert capsys.readouterr().out == first


def _pipeline_config(tmp_path, out_name="run_out", n_docs=16, seeds=(1, 2)):
    return {
        "corpus": {
            "format": "synthetic",
            "synthetic": {
                "seed": 11, "n_docs": n_docs, "schema": SCHEMA,
                "sizes": {"components_per_doc": [3, 4],
                          "tokens_per_component": [2, 4],
                          "link_rate": 0.35, "vocab_size": 60},
            },
        },
        "splits": {"valid_fraction": 0.25, "test_fraction": 0.25, "seed": 5},
        "policy": {"include_self_pairs": False},
        "embeddings": {"path": None, "seed": 3},
        "arch": {"variant": "resattarg", "embed_dim": 12},
        "train": {"max_epochs": 2, "patience": 2, "batch_size": 16},
        "seeds": list(seeds),
        "out_dir": str(tmp_path / out_name),
        "jobs": 1,
    }


def test_pipeline_smoke(tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(_pipeline_config(tmp_path)))
    assert main(["pipeline", "--config", str(cfg_path)]) == 0
    out = tmp_path / "run_out"
    for f in ("corpus.json", "pairs_train.ndjson", "pairs_valid.ndjson",
              "pairs_test.ndjson", "history_seed_1.csv", "history_seed_2.csv",
              "predictions.ndjson", "components.ndjson", "metrics.json",
              "ckpt/seed_1.json", "ckpt/seed_1.bin",
              "report/metrics.txt", "report/confusion_component.csv",
              "report/confusion_component.png", "report/training_history.png"):
        assert (out / f).exists(), f
    payload = json.loads((out / "metrics.json").read_text())
    assert payload["config_hash"]
    assert "agreement" in payload
    assert 0.0 <= payload["metrics"]["link_f1"] <= 1.0


def test_pipeline_stage_rerun_from_artifacts(tmp_path, capsys):
    # evaluate re-runs standalone from the persisted pair + prediction files
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(_pipeline_config(tmp_path)))
    main(["pipeline", "--config", str(cfg_path)])
    out = tmp_path / "run_out"
    metrics2 = tmp_path / "metrics2.json"
    rc = main(["evaluate", "--pred", str(out / "predictions.ndjson"),
               "--pairs", str(out / "pairs_test.ndjson"),
               "--corpus", str(out / "corpus.json"),
               "--out", str(metrics2)])
    assert rc == 0
    a = json.loads((out / "metrics.json").read_text())
    b = json.loads(metrics2.read_text())
    assert a["metrics"] == b["metrics"]
    assert a["agreement"] == b["agreement"]


def test_evaluate_rejects_provenance_mismatch(tmp_path, capsys):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(_pipeline_config(tmp_path)))
    main(["pipeline", "--config", str(cfg_path)])
    out = tmp_path / "run_out"
    # tamper with the pairs meta hash
    lines = (out / "pairs_test.ndjson").read_text().splitlines()
    meta = json.loads(lines[0])
    meta["_meta"]["config_hash"] = "0000000000000000"
    lines[0] = json.dumps(meta, sort_keys=True)
    (out / "pairs_test.ndjson").write_text("\n".join(lines) + "\n")
    rc = main(["evaluate", "--pred", str(out / "predictions.ndjson"),
               "--pairs", str(out / "pairs_test.ndjson"),
               "--corpus", str(out / "corpus.json"),
               "--out", str(tmp_path / "m.json")])
    assert rc == 3
    assert "provenance" in capsys.readouterr().err


def test_predict_then_report_flow(tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(_pipeline_config(tmp_path)))
    main(["pipeline", "--config", str(cfg_path)])
    out = tmp_path / "run_out"
    pred2 = tmp_path / "pred2.ndjson"
    rc = main(["predict", "--ckpt", str(out / "ckpt"),
               "--pairs", str(out / "pairs_test.ndjson"),
               "--corpus", str(out / "corpus.json"),
               "--out", str(pred2)])
    assert rc == 0
    report_dir = tmp_path / "rep"
    rc = main(["report", "--metrics", str(out / "metrics.json"),
               "--history", str(out / "history_seed_1.csv"),
               "--out", str(report_dir)])
    assert rc == 0
    assert (report_dir / "metrics.txt").exists()
    assert (report_dir / "confusion_relation.png").exists()


def test_pipeline_missing_config_file(tmp_path, capsys):
    rc = main(["pipeline", "--config", str(tmp_path / "absent.json")])
    assert rc == 2


def test_pipeline_bad_corpus_format(tmp_path, capsys):
    cfg = _pipeline_config(tmp_path)
    cfg["corpus"] = {"format": "carrier-pigeon", "schema": "x.json"}
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["pipeline", "--config", str(cfg_path)])
    assert rc == 2
    assert "stage 'config'" in capsys.readouterr().err


def test_pipeline_missing_embeddings_names_stage(tmp_path, capsys):
    cfg = _pipeline_config(tmp_path)
    cfg["embeddings"] = {"path": str(tmp_path / "glove_absent.txt"), "seed": 3}
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["pipeline", "--config", str(cfg_path)])
    assert rc == 2
    assert "stage 'embeddings'" in capsys.readouterr().err


def test_out_dir_env_override(tmp_path, monkeypatch):
    cfg = _pipeline_config(tmp_path, n_docs=8)
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    override = tmp_path / "elsewhere"
    monkeypatch.setenv("OUT_DIR", str(override))
    assert main(["pipeline", "--config", str(cfg_path)]) == 0
    assert (override / "metrics.json").exists()
    assert not (tmp_path / "run_out").exists()


def test_ingest_splits_discontinuous_components(tmp_path):
    d = tmp_path / "standoff"
    d.mkdir()
    (d / "doc.txt").write_text("aa bb cc dd", encoding="utf-8")
    (d / "doc.ann").write_text(
        "T1\tclaim 0 2;6 8\taa cc\n"
        "T2\tpremise 3 5\tbb\n"
        "R1\tsupports Arg1:T1 Arg2:T2\n", encoding="utf-8")
    schema_path = tmp_path / "schema.json"
    schema_path.write_text(json.dumps(SCHEMA), encoding="utf-8")
    out = tmp_path / "corpus.json"
    assert main(["ingest", "--format", "standoff", "--schema",
                 str(schema_path), "--in", str(d), "--out", str(out),
                 "--split-discontinuous"]) == 0
    from resarg.corpus import load_corpus
    docs, _, _ = load_corpus(out)
    ids = set(docs[0].component_ids)
    assert ids == {"T1.0", "T1.1", "T2"}
    links = {(l.source_id, l.target_id) for l in docs[0].links}
    assert links == {("T1.0", "T2"), ("T1.1", "T2")}
