import json

import numpy as np
import pytest

from dapcap.cli import main
from dapcap.data import load_manifest, read_feature_array


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliwork")
    data = root / "data"
    main([
        "make-synthetic", "--out", str(data), "--videos", "16", "--frames", "4",
        "--attributes", "12", "--seed", "13",
    ])
    return root, data / "manifest.jsonl"


def test_make_synthetic_writes_manifest(workspace):
    _, manifest = workspace
    records = load_manifest(manifest)
    assert len(records) == 16
    assert all(r.n_frames == 4 for r in records)


def test_build_vocab_json_schema(workspace):
    root, manifest = workspace
    out = root / "vocab.json"
    main(["build-vocab", "--manifest", str(manifest), "--k", "12", "--out", str(out)])
    doc = json.loads(out.read_text())
    assert doc["k"] == 12
    assert len(doc["words"]) == 12
    assert len(set(doc["words"])) == 12


def test_build_vocab_custom_stopwords(workspace, tmp_path):
    root, manifest = workspace
    stop = tmp_path / "stop.txt"
    stop.write_text("a the and with is on in\n")
    out = tmp_path / "vocab.json"
    main(["build-vocab", "--manifest", str(manifest), "--k", "5",
          "--stopwords", str(stop), "--out", str(out)])
    words = json.loads(out.read_text())["words"]
    assert "the" not in words and len(words) == 5


@pytest.fixture(scope="module")
def trained(workspace, tmp_path_factory):
    root, manifest = workspace
    run = tmp_path_factory.mktemp("run")
    cfg = run / "config.json"
    cfg.write_text(json.dumps({
        "model": {"d_h": 64, "t_max": 12, "dropout_attention": 0.0, "dropout_other": 0.0},
        "train": {"batch_size": 8, "epochs": 2, "lr_init": 5e-3, "seed": 1},
        "data": {"k": 12, "min_count": 1},
    }))
    main(["train", "--config", str(cfg), "--manifest", str(manifest), "--out", str(run)])
    return run, manifest


def test_train_outputs(trained):
    run, _ = trained
    assert (run / "best.pt").exists()
    assert (run / "epoch_001.pt").exists()
    log_lines = (run / "log.jsonl").read_text().strip().splitlines()
    assert len(log_lines) == 2
    entry = json.loads(log_lines[0])
    assert {"epoch", "lr", "train", "val"} <= set(entry)


def test_decode_subcommand(trained, tmp_path):
    run, manifest = trained
    out = tmp_path / "captions.json"
    main(["decode", "--checkpoint", str(run / "best.pt"), "--manifest", str(manifest),
          "--split", "test", "--beam", "2", "--out", str(out)])
    captions = json.loads(out.read_text())
    records = [r for r in load_manifest(manifest) if r.split == "test"]
    assert set(captions) == {r.video_id for r in records}
    assert all(isinstance(v, str) for v in captions.values())


def test_evaluate_subcommand(trained, tmp_path):
    run, manifest = trained
    out = tmp_path / "report.json"
    csv = tmp_path / "curve.csv"
    main(["evaluate", "--checkpoint", str(run / "best.pt"), "--manifest", str(manifest),
          "--split", "test", "--beam", "2", "--map-frame-counts", "1,2,4",
          "--out", str(out), "--curve-csv", str(csv)])
    report = json.loads(out.read_text())
    assert 0 <= report["bleu4"] <= 100
    assert 0 <= report["rouge_l"] <= 100
    assert 0 <= report["cider"] <= 1000
    assert report["meta_sum_partial"] == pytest.approx(
        report["bleu4"] + report["rouge_l"] + report["cider"], rel=1e-9
    )
    assert "no METEOR" in report["meta_sum_label"]
    assert 0 <= report["attribute_map"] <= 1
    assert set(report["map_by_frame_count"]) == {"1", "2", "4"}
    lines = csv.read_text().strip().splitlines()
    assert lines[0] == "n_frames,map" and len(lines) == 4


def test_analyze_acs_subcommand(trained, tmp_path):
    run, manifest = trained
    out = tmp_path / "acs.json"
    main(["analyze-acs", "--checkpoint", str(run / "best.pt"), "--manifest", str(manifest),
          "--split", "train", "--out", str(out), "--csv", str(tmp_path / "acs.csv")])
    doc = json.loads(out.read_text())
    n = len(doc["categories"])
    values = np.asarray(doc["values"])
    assert values.shape == (n, n)
    assert np.allclose(values, values.T, atol=1e-9)


def test_attribute_neighbors_subcommand(trained, tmp_path):
    run, _ = trained
    out = tmp_path / "neighbors.json"
    emb = tmp_path / "emb.bin"
    main(["attribute-neighbors", "--checkpoint", str(run / "best.pt"), "--top-n", "3",
          "--out", str(out), "--embeddings-out", str(emb)])
    doc = json.loads(out.read_text())
    assert len(doc["neighbors"]) == 12
    for word, lst in doc["neighbors"].items():
        assert len(lst) == 3
        assert word not in [w for w, _ in lst]
    block = read_feature_array(emb)
    assert block.shape == (12, 64)
