import json

import numpy as np
import pytest

from helpers import make_cohort, make_record
from mcpd.bocpd import changepoint_probabilities
from mcpd.errors import ModelError, SchemaError, TrainingError
from mcpd.evalkit import SyntheticConfig, generate_synthetic
from mcpd.neural import init_params, zero_params_like
from mcpd.pipeline import (
    Embedder,
    McpdConfig,
    McpdModel,
    Standardizer,
    featurize,
    featurize_cohort,
    fit,
    forward,
    load_checkpoint,
    predict,
    predict_cohort,
    resolve_pos_weight,
    save_checkpoint,
)
from mcpd.records import render_period_summary
from mcpd.text_embed import EmbedderConfig, embed_text

SMALL = McpdConfig(d_text=8, d_num=4, ffn_hidden=6, lstm_hidden=8, epochs=3)


def small_cohort(n=80, seed=0):
    return generate_synthetic(SyntheticConfig(n_students=n, positive_rate=0.25, seed=seed))


def random_model(rng, config=SMALL, pos_weight=1.0):
    std = Standardizer(rng.normal(60, 5, 3), rng.uniform(5, 15, 3))
    params = init_params(3, config.ffn_hidden, config.d_num, config.d_text, config.lstm_hidden, rng)
    return McpdModel(config, params, std, Embedder(EmbedderConfig(config.d_text)), pos_weight)


def test_featurize_identity_at_means():
    std = Standardizer(np.array([60.0, 70.0, 80.0]), np.array([5.0, 5.0, 5.0]))
    rec = make_record("a", scores=[(60.0, 70.0, 80.0)] * 6)
    raw = featurize(rec, std, Embedder(EmbedderConfig(16)))
    assert not raw[:, :3].any()
    np.testing.assert_array_equal(raw[0, 3:], embed_text(render_period_summary(rec.periods[0]),
                                                         EmbedderConfig(16)))


def test_featurize_hand_standardization():
    std = Standardizer(np.array([50.0, 50.0, 50.0]), np.array([10.0, 20.0, 5.0]))
    rec = make_record("a", scores=[(70.0, 30.0, None)] * 6)
    raw = featurize(rec, std, Embedder(EmbedderConfig(4)))
    np.testing.assert_allclose(raw[2, :3], [2.0, -1.0, 0.0])


def test_standardizer_fit_pooled():
    cohort = make_cohort([make_record("a", scores=[(10.0, 20.0, 30.0)] * 6),
                          make_record("b", scores=[(30.0, 20.0, None)] * 6)])
    std = Standardizer.fit(cohort)
    np.testing.assert_array_equal(std.mean, [20.0, 20.0, 30.0])
    np.testing.assert_array_equal(std.std, [10.0, 1.0, 1.0])


def test_ablation_identity_bit_exact():
    rng = np.random.default_rng(0)
    for _ in range(100):
        model = random_model(rng)
        model.config = SMALL.replace(weight_mode="affine", gamma=0.0)
        raw = rng.normal(size=(4, 6, 3 + SMALL.d_text))
        assert np.array_equal(forward(model, raw), forward(model, raw, use_cpd=False))


def test_zero_params_half():
    rng = np.random.default_rng(1)
    model = random_model(rng)
    model.params = zero_params_like(model.params)
    raw = rng.normal(size=(5, 6, 3 + SMALL.d_text))
    np.testing.assert_array_equal(forward(model, raw), 0.5)


def test_forward_composed_oracle():
    # 1-unit chain: grades -> relu layer -> text concat -> weighted LSTM -> head
    rng = np.random.default_rng(2)
    cfg = McpdConfig(d_text=1, d_num=1, ffn_hidden=1, lstm_hidden=1, gamma=0.5)
    model = random_model(rng, cfg)
    raw = rng.normal(size=(6, 4))
    p = model.params
    probs = changepoint_probabilities(raw[:, :3], cfg.cpd)
    w = 1.0 + 0.5 * probs
    h = c = 0.0
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    for t in range(6):
        hid = max(0.0, float(p["enc1.W"][0] @ raw[t, :3] + p["enc1.b"][0]))
        num = p["enc2.W"][0, 0] * hid + p["enc2.b"][0]
        x = w[t] * np.array([num, raw[t, 3]])
        a = p["lstm.W"] @ x + p["lstm.U"][:, 0] * h + p["lstm.b"]
        i, f, o, g = sig(a[0]), sig(a[1]), sig(a[2]), np.tanh(a[3])
        c = f * c + i * g
        h = o * np.tanh(c)
    want = sig(p["head.w"][0] * h + p["head.b"][0])
    assert abs(forward(model, raw) - want) < 1e-14


def test_prior_correction_shifts_logit():
    rng = np.random.default_rng(3)
    model = random_model(rng, pos_weight=4.0)
    raw = rng.normal(size=(3, 6, 3 + SMALL.d_text))
    uncal = forward(model, raw, calibrated=False)
    cal = forward(model, raw)
    logit = np.log(uncal / (1 - uncal))
    np.testing.assert_allclose(cal, 1 / (1 + np.exp(-(logit - np.log(4.0)))), rtol=1e-12)


def test_width_mismatch():
    model = random_model(np.random.default_rng(0))
    with pytest.raises(ModelError):
        forward(model, np.zeros((6, 5)))


def test_pos_weight_cohort_ratio():
    y = np.zeros(1248)
    y[:128] = 1
    assert resolve_pos_weight(y, McpdConfig()) == 8.75
    assert resolve_pos_weight(y, McpdConfig(pos_weight_mode="fixed", pos_weight=2.0)) == 2.0


def test_fit_deterministic_and_checkpoint_round_trip(tmp_path):
    cohort = small_cohort()
    labels = {r.student_id: r.dropout_next_year for r in cohort}
    m1, r1 = fit(cohort, labels, SMALL)
    m2, r2 = fit(cohort, labels, SMALL)
    save_checkpoint(m1, tmp_path / "a.json")
    save_checkpoint(m2, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert r1.epoch_loss == r2.epoch_loss
    loaded = load_checkpoint(tmp_path / "a.json")
    np.testing.assert_array_equal(predict_cohort(loaded, cohort)[0], predict_cohort(m1, cohort)[0])


def test_fit_seed_matters():
    cohort = small_cohort()
    labels = {r.student_id: r.dropout_next_year for r in cohort}
    a, _ = fit(cohort, labels, SMALL)
    b, _ = fit(cohort, labels, SMALL.replace(seed=1))
    assert not np.array_equal(a.params["lstm.W"], b.params["lstm.W"])


def test_standardizer_sees_training_only():
    cohort = small_cohort()
    labels = {r.student_id: r.dropout_next_year for r in cohort}
    train = cohort.subset(cohort.ids[:60])
    model, _ = fit(train, labels, SMALL)
    expected = Standardizer.fit(train)
    np.testing.assert_array_equal(model.standardizer.mean, expected.mean)
    assert not np.array_equal(model.standardizer.mean, Standardizer.fit(cohort).mean)


def test_encoded_mode_trains():
    cohort = small_cohort()
    labels = {r.student_id: r.dropout_next_year for r in cohort}
    model, rep = fit(cohort, labels, SMALL.replace(cpd_input="encoded", epochs=2))
    assert np.all(np.isfinite(rep.epoch_loss))
    p, cp = predict_cohort(model, cohort)
    assert p.shape == (80,) and cp.shape == (80, 6)


def test_predict_repeatable():
    cohort = small_cohort()
    labels = {r.student_id: r.dropout_next_year for r in cohort}
    model, _ = fit(cohort, labels, SMALL)
    a, b = predict(model, cohort.records[0]), predict(model, cohort.records[0])
    assert a.probability == b.probability and np.array_equal(a.change_probs, b.change_probs)
    assert abs(a.change_probs[0] - SMALL.cpd.hazard) < 1e-15


def test_fit_preconditions():
    cohort = small_cohort()
    with pytest.raises(TrainingError, match="single class"):
        fit(cohort, {sid: False for sid in cohort.ids}, SMALL)
    with pytest.raises(TrainingError, match="at least 20"):
        fit(cohort.subset(cohort.ids[:10]), {sid: True for sid in cohort.ids}, SMALL)
    with pytest.raises(SchemaError, match="no label"):
        fit(cohort, {}, SMALL)


def test_config_round_trip_and_validation():
    cfg = SMALL.replace(gamma=2.0)
    assert McpdConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        McpdConfig.from_dict({"bogus": 1})
    for bad in ({"gamma": -1.0}, {"weight_mode": "max"}, {"cpd_input": "text"}, {"lr": 0.0}):
        with pytest.raises(ValueError):
            McpdConfig(**bad)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(SchemaError, match="missing.json"):
        load_checkpoint(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(SchemaError):
        load_checkpoint(bad)
    model = random_model(np.random.default_rng(0))
    save_checkpoint(model, bad)
    doc = json.loads(bad.read_text())
    doc["params"]["lstm.U"]["shape"] = [1, 1]
    bad.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="lstm.U"):
        load_checkpoint(bad)


def test_featurize_cohort_empty():
    assert featurize_cohort(make_cohort([]), Standardizer(np.zeros(3), np.ones(3)),
                            Embedder(EmbedderConfig(4))).shape == (0, 6, 7)
