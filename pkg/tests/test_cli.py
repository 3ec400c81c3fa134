import csv
import json

import numpy as np
import pytest

from trajcube.cli import main

TINY = """
synth:
  n_flights: 6
  seed: 4
  resolution: [45, 29]
  duration: 28800
  departure_window: 7200
data:
  train_fraction: 0.5
model:
  plan_embed: 4
  enc_hidden: 6
  dec_hidden: 6
  state_embed: 6
  conv: [[3, 6, 2], [2, 3, 1], [2, 3, 1]]
  conv_dense: 3
train:
  epochs: 2
  batch_size: 2
  lr0: 0.001
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.yaml"
    cfg.write_text(TINY)
    assert main(["synth", "--config", str(cfg), "--out", str(d / "corpus")]) == 0
    assert main(["train", "--data", str(d / "corpus"), "--config", str(cfg), "--out", str(d / "ckpt")]) == 0
    return d, cfg


def test_synth_outputs(run):
    d, _ = run
    c = d / "corpus"
    for name in ("flights.jsonl", "train.jsonl", "test.jsonl", "config.json", "store"):
        assert (c / name).exists()
    assert len((c / "train.jsonl").read_text().splitlines()) == 3
    stats = json.loads((c / "stats.json").read_text())
    assert stats["train"] == 3 and stats["min_length"] <= stats["mean_length"] <= stats["max_length"]


def test_train_outputs(run):
    d, _ = run
    rows = list(csv.DictReader(open(d / "ckpt" / "loss.csv")))
    assert len(rows) == 2 and (d / "ckpt" / "loss.png").stat().st_size > 0


def test_predict_eval_pipeline(run):
    d, _ = run
    c = d / "corpus"
    pred = d / "pred.jsonl"
    assert main(["predict", "--ckpt", str(d / "ckpt"), "--store", str(c / "store"), "--flights",
                 str(c / "test.jsonl"), "--out", str(pred), "--geojson", str(d / "p.geojson"),
                 "--figure", str(d / "p.png")]) == 0
    recs = [json.loads(x) for x in pred.read_text().splitlines()]
    truth = [json.loads(x) for x in (c / "test.jsonl").read_text().splitlines()]
    for r, t in zip(recs, truth):
        assert r["start_index"] == 20 and len(r["track"]) == len(t["track"]) - 20
        assert len(r["sigma3_horizontal_nm"]) == len(r["track"])
    gj = json.loads((d / "p.geojson").read_text())
    assert gj["type"] == "FeatureCollection" and len(gj["features"]) == len(recs)
    out = d / "rep" / "errors.csv"
    assert main(["eval", "--pred", str(pred), "--truth", str(c / "test.jsonl"), "--out", str(out)]) == 0
    for name in ("errors.json", "errors_hist.csv", "errors_hist.png", "errors_tracks.png"):
        assert (out.parent / name).stat().st_size > 0
    s = json.loads((out.parent / "errors.json").read_text())
    assert s["flights"] == len(recs) and np.isfinite(s["MATHE_nm"])


def test_eval_against_self_is_zero(run, tmp_path):
    d, _ = run
    t = d / "corpus" / "test.jsonl"
    out = tmp_path / "self.csv"
    assert main(["eval", "--pred", str(t), "--truth", str(t), "--out", str(out)]) == 0
    s = json.loads(out.with_suffix(".json").read_text())
    assert s["MAPHE_nm"] == 0 and s["MATVE_ft"] == 0


def test_match_and_activations(run, tmp_path):
    d, cfg = run
    c = d / "corpus"
    cubes = tmp_path / "cubes"
    assert main(["--threads", "2", "match", "--store", str(c / "store"), "--flights", str(c / "test.jsonl"),
                 "--config", str(cfg), "--out", str(cubes)]) == 0
    out = tmp_path / "act.csv"
    assert main(["export-activations", "--ckpt", str(d / "ckpt"), "--cubes", str(cubes), "--layer", "1",
                 "--steps", "0,3", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 2 * 8 * 8 * 3
    assert out.with_suffix(".png").exists()
    assert main(["export-activations", "--ckpt", str(d / "ckpt"), "--cubes", str(cubes), "--layer", "1",
                 "--steps", "9999", "--out", str(out)]) == 2


def test_warmup_too_long_is_data_error(run, capsys):
    d, _ = run
    c = d / "corpus"
    rc = main(["predict", "--ckpt", str(d / "ckpt"), "--store", str(c / "store"), "--flights",
               str(c / "test.jsonl"), "--warmup", "5000", "--out", str(d / "x.jsonl")])
    assert rc == 2
    assert "warm-up" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["predict", "--ckpt", "x"])
    assert exc.value.code == 1


def test_missing_inputs_are_data_errors(tmp_path):
    assert main(["eval", "--pred", str(tmp_path / "none"), "--truth", str(tmp_path / "none"),
                 "--out", str(tmp_path / "o.csv")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {nope: 1}\n")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "s")]) == 2


def test_baseline_command(run, tmp_path):
    d, _ = run
    t = d / "corpus" / "test.jsonl"
    out = tmp_path / "base.jsonl"
    assert main(["baseline", "--flights", str(t), "--out", str(out)]) == 0
    recs = [json.loads(x) for x in out.read_text().splitlines()]
    truth = [json.loads(x) for x in t.read_text().splitlines()]
    assert [r["id"] for r in recs] == [x["id"] for x in truth]
    assert all(len(r["track"]) == len(x["track"]) - 20 for r, x in zip(recs, truth))
    rep = tmp_path / "base.csv"
    assert main(["eval", "--pred", str(out), "--truth", str(t), "--out", str(rep)]) == 0
    assert main(["baseline", "--flights", str(t), "--warmup", "5000", "--out", str(out)]) == 2
