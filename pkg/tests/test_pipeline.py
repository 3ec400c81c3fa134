import json
import time

import numpy as np
import pytest

from trajcube.featurecube import GridParams, build_index
from trajcube.inference import NetworkPredictor
from trajcube.mdnrnn.network import ModelConfig, init_params
from trajcube.pipeline import (baseline_prediction, build_samples, fit_normalizer, geojson_feature, load_matched,
                               match_corpus, ordered_map, predict_flight, prediction_record, read_records,
                               save_matched)
from trajcube.preprocess import Flight
from trajcube.synth import SynthConfig, World, gen_flights, gen_weather

CFG = SynthConfig(n_flights=3, seed=9, resolution=(45, 29), duration=8 * 3600.0, departure_window=7200.0)
TOY = ModelConfig(plan_embed=4, enc_hidden=5, dec_hidden=5, state_embed=6, conv=((3, 6, 2), (2, 3, 1), (2, 3, 1)),
                  conv_dense=3)


@pytest.fixture(scope="module")
def corpus():
    w = World.from_config(CFG)
    store = gen_weather(CFG, w)
    return store, build_index(store), gen_flights(CFG, w)


@pytest.fixture(scope="module")
def matched(corpus):
    store, index, flights = corpus
    return match_corpus(flights, store, index)


def test_ordered_map_keeps_order():
    def slow(x):
        time.sleep(0.001 * (5 - x))
        return x * x
    assert ordered_map(slow, list(range(5)), threads=4) == [0, 1, 4, 9, 16]


def test_threads_do_not_change_cubes(corpus, matched):
    store, index, flights = corpus
    again = match_corpus(flights, store, index, threads=3)
    for a, b in zip(matched, again):
        assert a.cubes.tobytes() == b.cubes.tobytes() and a.missing.tobytes() == b.missing.tobytes()


def test_matched_round_trip(tmp_path, matched):
    save_matched(tmp_path, matched, GridParams())
    entries, cubes, missing, kin, grid = load_matched(tmp_path)
    assert grid == GridParams()
    for e, m in zip(entries, matched):
        rows = slice(e["offset"], e["offset"] + e["rows"])
        assert e["id"] == m.flight.id
        assert np.array_equal(cubes[rows], m.cubes.astype(np.float32))
        assert np.array_equal(missing[rows], m.missing)
        assert np.array_equal(kin[rows], m.kinematics)


def test_load_matched_rejects_bad_dirs(tmp_path, matched):
    with pytest.raises(ValueError, match="manifest"):
        load_matched(tmp_path)
    save_matched(tmp_path, matched[:1], GridParams())
    with open(tmp_path / "cubes.bin", "ab") as fh:
        fh.write(b"\0" * 16)
    with pytest.raises(ValueError, match="sizes"):
        load_matched(tmp_path)


def test_samples_are_normalized(matched):
    norm = fit_normalizer(matched)
    samples = build_samples(matched, norm)
    states = np.concatenate([s.states for s in samples])
    assert np.allclose(states.mean(0), 0, atol=1e-9) and np.allclose(states.std(0), 1, atol=1e-9)


def _predict(corpus, matched, flight, warmup=20):
    store, index, _ = corpus
    norm = fit_normalizer(matched)
    pred = NetworkPredictor(init_params(TOY, 0), TOY)
    return predict_flight(pred, norm, flight, store, index, warmup)


def test_prediction_ignores_future_points(corpus, matched):
    f = corpus[2][0]
    a = _predict(corpus, matched, f)
    tr = f.track.copy()
    tr[25:, :3] += [0.5, -0.5, 1000.0]
    b = _predict(corpus, matched, Flight(f.id, f.plan, tr))
    assert a.states.tobytes() == b.states.tobytes()
    assert a.states.shape == (len(f) - 20, 5)


def test_prediction_warmup_errors(corpus, matched):
    f = corpus[2][0]
    with pytest.raises(ValueError, match="shorter"):
        _predict(corpus, matched, f, warmup=len(f))
    with pytest.raises(ValueError, match="at least 2"):
        _predict(corpus, matched, f, warmup=1)


def test_records(tmp_path, corpus, matched):
    f = corpus[2][0]
    p = _predict(corpus, matched, f)
    rec = prediction_record(f, p, 20)
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps(rec) + "\n\n")
    back = read_records(path)[0]
    assert back["start_index"] == 20 and back["track"].shape == (len(f) - 20, 4)
    feat = geojson_feature(back)
    assert feat["geometry"]["type"] == "LineString"
    path.write_text('{"id": 1, "track": [[1, 2]]}\n')
    with pytest.raises(ValueError, match=":1:"):
        read_records(path)


def test_baseline_shape(corpus):
    f = corpus[2][0]
    b = baseline_prediction(f, 20)
    assert b.shape == (len(f) - 20, 3)
    assert np.all(b[:, 2] == f.track[19, 2])


def test_step_map_matches_physical_step(matched):
    from trajcube.inference import constant_velocity_dynamics
    from trajcube.pipeline import step_map
    norm = fit_normalizer(matched)
    A = constant_velocity_dynamics(120.0)
    cfg = ModelConfig(mu_residual=True, residual_map=step_map(norm, A))
    x = matched[0].kinematics[:, [0, 1, 2, 5, 6]]
    got = norm.denormalize_states(cfg.residual_base(norm.normalize_states(x)))
    np.testing.assert_allclose(got, x @ A.T, rtol=1e-12, atol=1e-9)
    assert ModelConfig.from_json(cfg.to_json()) == cfg
