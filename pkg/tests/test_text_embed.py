import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcpd.errors import SchemaError
from mcpd.text_embed import EmbedderConfig, embed_text, load_precomputed, tokenize


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_simple():
    assert tokenize("Absent 2 times") == ["absent", "2", "times"]


def test_tokenize_mixed_cjk():
    assert tokenize("学生ABC缺勤 3次, ok") == ["学", "生", "abc", "缺", "勤", "3", "次", "ok"]


def test_embed_empty_is_zero():
    v = embed_text("")
    assert v.shape == (64,) and not v.any()


def test_embed_deterministic():
    cfg = EmbedderConfig(dim=32, hash_seed=7)
    a, b = embed_text("late to class twice", cfg), embed_text("late to class twice", cfg)
    assert np.array_equal(a, b)


def test_single_token_is_one_hot():
    v = embed_text("smoking", EmbedderConfig(dim=16))
    assert np.count_nonzero(v) == 1
    assert abs(np.abs(v).max() - 1.0) < 1e-15


def test_seed_changes_buckets():
    text = "fighting smoking truancy sick late"
    assert not np.array_equal(embed_text(text, EmbedderConfig(hash_seed=0)),
                              embed_text(text, EmbedderConfig(hash_seed=1)))


@given(st.text(max_size=80))
def test_norm_is_zero_or_one(text):
    v = embed_text(text, EmbedderConfig(dim=8))
    n = np.linalg.norm(v)
    assert n == 0.0 if not tokenize(text) else abs(n - 1.0) < 1e-12


def _write(path, dim, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["student_id", "period_index"] + [f"v{i}" for i in range(dim)])
        w.writerows(rows)


def test_precomputed_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "emb.csv"
    _write(path, 384, [["s1", t] + list(rng.normal(size=384)) for t in range(1, 7)])
    m = load_precomputed(path, 384)
    assert len(m) == 6
    assert all(abs(np.linalg.norm(v) - 1) < 1e-12 for v in m.values())


def test_precomputed_dim_mismatch(tmp_path):
    path = tmp_path / "emb.csv"
    _write(path, 384, [["s1", 1] + [0.1] * 383])
    with pytest.raises(SchemaError, match="383"):
        load_precomputed(path, 384)


def test_precomputed_normalizes(tmp_path):
    path = tmp_path / "emb.csv"
    _write(path, 2, [["s1", 1, 2.0, 0.0]])
    np.testing.assert_array_equal(load_precomputed(path, 2)[("s1", 1)], [1.0, 0.0])
