import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daqu.encoder import (
    DimensionError,
    DimensionMismatchError,
    EncoderParams,
    FeaturizerConfig,
    FormatError,
    UnknownIdError,
    encode,
    encode_features,
    featurize,
    fnv1a_64,
    init_params,
    load_embedding_provider,
    similarity,
    tokenize,
)


def test_fnv1a_known_values():
    # published FNV-1a 64-bit test vectors
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_tokenize_rule():
    assert tokenize("Hello, World!  x2") == ["hello", "world", "x2"]
    assert tokenize("a--b__c") == ["a", "b", "c"]
    assert tokenize("") == []


def test_featurize_empty_text():
    cfg = FeaturizerConfig(hash_buckets=64, max_tokens=8)
    feats = featurize(cfg, "")
    assert feats.nnz == 0


def test_featurize_counts():
    cfg = FeaturizerConfig(hash_buckets=1 << 20, max_tokens=16)
    feats = featurize(cfg, "a b a")
    ba = fnv1a_64(b"a") % cfg.hash_buckets
    bb = fnv1a_64(b"b") % cfg.hash_buckets
    weights = dict(zip(feats.indices.tolist(), feats.values.tolist()))
    assert weights == {ba: pytest.approx(2 / 3), bb: pytest.approx(1 / 3)}


def test_featurize_truncates_at_max_tokens():
    cfg = FeaturizerConfig(hash_buckets=1 << 20, max_tokens=2)
    feats = featurize(cfg, "a b c d e")
    assert feats.values.sum() == pytest.approx(1.0)
    assert feats.nnz == 2  # only a and b survive


@given(st.text(max_size=60))
@settings(max_examples=100, deadline=None)
def test_featurize_deterministic_and_normalized(text):
    cfg = FeaturizerConfig(hash_buckets=256, max_tokens=32)
    f1 = featurize(cfg, text)
    f2 = featurize(cfg, text)
    assert np.array_equal(f1.indices, f2.indices)
    assert np.array_equal(f1.values, f2.values)
    assert list(f1.indices) == sorted(set(f1.indices.tolist()))
    if f1.nnz:
        assert f1.values.sum() == pytest.approx(1.0)
        assert (f1.values > 0).all()


def test_encode_zero_features_zero_vector():
    cfg = FeaturizerConfig(hash_buckets=16)
    params = init_params(4, cfg, "query", seed=0)
    assert np.array_equal(encode(params, cfg, "!!!"), np.zeros(4))


def test_encode_identity_weights_return_tf():
    cfg = FeaturizerConfig(hash_buckets=8)
    params = EncoderParams(weight=np.eye(8), role="query")
    vec = encode(params, cfg, "a b a")
    feats = featurize(cfg, "a b a")
    dense = np.zeros(8)
    dense[feats.indices] = feats.values
    assert np.array_equal(vec, dense)


def test_encode_matches_dense_matvec_oracle():
    cfg = FeaturizerConfig(hash_buckets=32)
    rng = np.random.default_rng(3)
    params = EncoderParams(weight=rng.normal(size=(6, 32)), role="document")
    for text in ["x y", "hashing bags of words", "a a a b"]:
        feats = featurize(cfg, text)
        dense = np.zeros(32)
        dense[feats.indices] = feats.values
        assert np.allclose(encode(params, cfg, text), params.weight @ dense, atol=1e-15)


def test_encode_linear_in_features():
    cfg = FeaturizerConfig(hash_buckets=64)
    params = init_params(5, cfg, "attribute", seed=9)
    f = featurize(cfg, "p q r")
    scaled = type(f)(indices=f.indices, values=3.0 * f.values)
    assert np.allclose(encode_features(params, scaled), 3.0 * encode_features(params, f))


def test_parameter_blocks_independent():
    cfg = FeaturizerConfig(hash_buckets=32)
    q = init_params(4, cfg, "query", seed=1)
    d = init_params(4, cfg, "document", seed=2)
    before = encode(q, cfg, "stable text").tobytes()
    d.weight[:] = 99.0
    assert encode(q, cfg, "stable text").tobytes() == before


def test_similarity_dot_and_cosine():
    assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    v = np.array([3.0, 4.0])
    assert similarity(v, v) == 25.0
    assert similarity(v, v, metric="cosine") == pytest.approx(1.0)
    assert similarity(v, np.zeros(2), metric="cosine") == 0.0
    with pytest.raises(DimensionError):
        similarity(np.zeros(2), np.zeros(3))


def test_init_params_seeded_and_bounded():
    cfg = FeaturizerConfig(hash_buckets=128)
    a = init_params(8, cfg, "query", seed=5)
    b = init_params(8, cfg, "query", seed=5)
    assert np.array_equal(a.weight, b.weight)
    bound = 1.0 / np.sqrt(cfg.hash_buckets)
    assert np.abs(a.weight).max() <= bound


def test_embedding_provider_roundtrip(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text('{"id":"d1","vec":[0.5,0.5]}\n{"id":"d2","vec":[1,0]}\n')
    provider = load_embedding_provider(path)
    assert provider.dim == 2
    assert np.array_equal(provider.lookup("d1"), [0.5, 0.5])
    with pytest.raises(UnknownIdError):
        provider.lookup("d3")


def test_embedding_provider_mixed_lengths(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text('{"id":"d1","vec":[0.5]}\n{"id":"d2","vec":[1,0]}\n')
    with pytest.raises(DimensionMismatchError):
        load_embedding_provider(path)


def test_embedding_provider_empty_and_malformed(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert len(load_embedding_provider(empty)) == 0
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{nope\n")
    with pytest.raises(FormatError):
        load_embedding_provider(bad)


def test_featurizer_config_validation():
    with pytest.raises(ValueError):
        FeaturizerConfig(hash_buckets=1)
    with pytest.raises(ValueError):
        FeaturizerConfig(max_tokens=0)
