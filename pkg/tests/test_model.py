import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsnormlab.errors import NumericError, ParseError, ShapeError
from tsnormlab.linalg import layer_norm_rows, softmax_rows
from tsnormlab.model import (ModelConfig, ModelWeights, attention_head, dump_weights,
                             encoder_forward, forward, init_weights, load_weights, parse_weights,
                             pooled_output, positional_encoding, representation, save_weights,
                             unit_weights, zero_weights)


def straight_line_encoder(cfg, w, x):
    """Single-sample oracle built from per-head loops and the linalg helpers."""
    if cfg.positional_encoding:
        x = x + positional_encoding(cfg.n, cfg.d)
    h = x
    for i in range(cfg.layers):
        p = f"layer{i}."
        outs = []
        for j in range(cfg.heads):
            q, k, v = h @ w[p + "wq"][j], h @ w[p + "wk"][j], h @ w[p + "wv"][j]
            att = softmax_rows(q @ k.T / np.sqrt(cfg.head_dim))
            outs.append(att @ v)
        y = layer_norm_rows(h + np.concatenate(outs, axis=1) @ w[p + "wo"], cfg.ln_eps)
        ffn = np.maximum(y @ w[p + "w1"] + w[p + "b1"], 0) @ w[p + "w2"] + w[p + "b2"]
        h = layer_norm_rows(y + ffn, cfg.ln_eps)
    return h


def naive_head(x, wq, wk, wv):
    n, dh = x.shape[0], wq.shape[1]
    q, k, v = x @ wq, x @ wk, x @ wv
    out = np.zeros((n, dh))
    for i in range(n):
        scores = [sum(q[i, a] * k[j, a] for a in range(dh)) / np.sqrt(dh) for j in range(n)]
        m = max(scores)
        e = [np.exp(s - m) for s in scores]
        tot = sum(e)
        for j in range(n):
            out[i] += e[j] / tot * v[j]
    return out


@pytest.fixture
def cfg():
    return ModelConfig(n=5, d=4, heads=2, ff_width=6)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(n=0, d=2), dict(n=3, d=1), dict(n=3, d=4, heads=3),
                                        dict(n=3, d=2, activation="gelu"), dict(n=3, d=2, task="x")])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ModelConfig(**kwargs)

    def test_output_dim(self):
        assert ModelConfig(n=3, d=2, n_classes=4).output_dim == 4
        assert ModelConfig(n=3, d=2, task="forecast", horizon=3).output_dim == 6


class TestInit:
    def test_deterministic(self, cfg):
        assert init_weights(cfg, 7).equals(init_weights(cfg, 7))
        assert not init_weights(cfg, 7).equals(init_weights(cfg, 8))

    def test_zero_scale(self, cfg):
        for _, arr in init_weights(cfg, 3, 0.0).items():
            assert not np.any(arr)

    def test_fan_in_variance(self):
        c = ModelConfig(n=4, d=8, heads=2)
        var = np.var(init_weights(c, 0, 1.0)["layer0.wo"])
        assert abs(var - 1 / 8) <= 0.2 / 8

    def test_unit_weights_have_unit_norm(self):
        w = unit_weights(ModelConfig(n=2, d=4, heads=2))
        for name in ("layer0.wo", "layer0.w1", "layer0.w2"):
            assert np.linalg.norm(w[name], 2) == pytest.approx(1.0)
        assert np.linalg.norm(w["layer0.wq"][1], 2) == pytest.approx(1.0)

    def test_shape_mismatch_rejected(self, cfg):
        w = init_weights(cfg, 0)
        w["layer0.wo"] = np.zeros((3, 3))
        with pytest.raises(ShapeError):
            forward(cfg, w, np.zeros((cfg.n, cfg.d)))


class TestAttentionHead:
    def test_zero_query_key_is_uniform(self):
        gen = np.random.default_rng(0)
        x, wv = gen.standard_normal((4, 4)), gen.standard_normal((4, 2))
        out = attention_head(x, np.zeros((4, 2)), np.zeros((4, 2)), wv)
        np.testing.assert_allclose(out, np.tile((x @ wv).mean(axis=0), (4, 1)), atol=1e-12)

    def test_zero_values(self):
        x = np.random.default_rng(1).standard_normal((3, 4))
        w = np.random.default_rng(2).standard_normal((4, 2))
        np.testing.assert_array_equal(attention_head(x, w, w, np.zeros((4, 2))), 0.0)

    def test_matches_scalar_loops(self):
        gen = np.random.default_rng(3)
        x = gen.standard_normal((3, 4))
        wq, wk, wv = (gen.standard_normal((4, 2)) for _ in range(3))
        np.testing.assert_allclose(attention_head(x, wq, wk, wv), naive_head(x, wq, wk, wv), atol=1e-12)


class TestEncoder:
    def test_zero_weights_collapse(self, cfg):
        x = np.random.default_rng(0).standard_normal((cfg.n, cfg.d))
        out, _ = encoder_forward(cfg, zero_weights(cfg), x)
        np.testing.assert_allclose(out, layer_norm_rows(layer_norm_rows(x)), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("pe", [False, True])
    def test_matches_straight_line_oracle(self, seed, pe):
        c = ModelConfig(n=6, d=4, heads=2, ff_width=5, layers=2, positional_encoding=pe)
        w = init_weights(c, seed)
        x = np.random.default_rng(seed).standard_normal((c.n, c.d))
        out, _ = encoder_forward(c, w, x)
        np.testing.assert_allclose(out, straight_line_encoder(c, w, x), atol=1e-10)

    def test_batch_matches_singles(self, cfg):
        w = init_weights(cfg, 1)
        xs = np.random.default_rng(1).standard_normal((3, cfg.n, cfg.d))
        batch, _ = encoder_forward(cfg, w, xs)
        for i in range(3):
            np.testing.assert_allclose(batch[i], encoder_forward(cfg, w, xs[i])[0], atol=1e-13)

    def test_attention_rows_sum_to_one(self, cfg):
        _, trace = encoder_forward(cfg, init_weights(cfg, 2, 3.0),
                                   np.random.default_rng(2).standard_normal((cfg.n, cfg.d)) * 10)
        np.testing.assert_allclose(trace.layers[0]["p"].sum(axis=-1), 1.0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.permutations(range(5)))
    def test_permutation_equivariance(self, seed, perm):
        c = ModelConfig(n=5, d=4, heads=2)
        w = init_weights(c, seed)
        x = np.random.default_rng(seed).standard_normal((5, 4))
        perm = list(perm)
        out, _ = encoder_forward(c, w, x)
        np.testing.assert_allclose(encoder_forward(c, w, x[perm])[0], out[perm], atol=1e-12)

    def test_deterministic_bits(self, cfg):
        w = init_weights(cfg, 4)
        x = np.random.default_rng(4).standard_normal((cfg.n, cfg.d))
        assert forward(cfg, w, x).tobytes() == forward(cfg, w, x).tobytes()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000))
    def test_finite_on_large_inputs(self, seed):
        c = ModelConfig(n=5, d=4, heads=2)
        x = np.random.default_rng(seed).uniform(-1e6, 1e6, (5, 4))
        assert np.all(np.isfinite(forward(c, init_weights(c, seed), x)))

    def test_non_finite_names_stage(self, cfg):
        x = np.full((cfg.n, cfg.d), np.inf)
        with pytest.raises(NumericError, match="layer0"):
            encoder_forward(cfg, init_weights(cfg, 0), x)

    def test_wrong_input_shape(self, cfg):
        with pytest.raises(ShapeError):
            encoder_forward(cfg, init_weights(cfg, 0), np.zeros((cfg.n + 1, cfg.d)))


class TestPooling:
    def test_single_token(self):
        c = ModelConfig(n=1, d=2)
        w = init_weights(c, 0)
        x = np.array([[0.3, -0.7]])
        out, _ = encoder_forward(c, w, x)
        np.testing.assert_allclose(representation(c, w, x), out[0])

    def test_zero_head_gives_bias(self, cfg):
        w = init_weights(cfg, 0)
        w["head_w"] = np.zeros_like(w["head_w"])
        w["head_b"] = np.array([0.25, -1.5])
        np.testing.assert_array_equal(forward(cfg, w, np.ones((cfg.n, cfg.d)) * np.arange(4)), [0.25, -1.5])

    def test_mean_then_affine(self, cfg):
        w = init_weights(cfg, 5)
        x = np.random.default_rng(5).standard_normal((cfg.n, cfg.d))
        z, trace = encoder_forward(cfg, w, x)
        expected = z.mean(axis=0) @ w["head_w"] + w["head_b"]
        np.testing.assert_allclose(pooled_output(cfg, trace, w), expected, atol=1e-12)


class TestSerialization:
    @pytest.mark.parametrize("kwargs", [dict(), dict(layers=2, ln_affine=True, activation="tanh"),
                                        dict(task="forecast", horizon=3, positional_encoding=True)])
    def test_round_trip(self, kwargs):
        c = ModelConfig(n=4, d=4, heads=2, **kwargs)
        w = init_weights(c, 9)
        c2, w2 = parse_weights(dump_weights(c, w))
        assert c2 == c and w2.equals(w)

    def test_file_round_trip(self, tmp_path, cfg):
        w = init_weights(cfg, 1)
        save_weights(tmp_path / "w.tsnl", cfg, w)
        blob = (tmp_path / "w.tsnl").read_bytes()
        assert blob[:4] == b"TSNL"
        c2, w2 = load_weights(tmp_path / "w.tsnl")
        assert c2 == cfg and w2.equals(w)

    @pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-8],
                                        lambda b: b + b"\0"])
    def test_corrupt_blob(self, cfg, mutate):
        blob = dump_weights(cfg, init_weights(cfg, 1))
        with pytest.raises((ParseError, ValueError)):
            parse_weights(mutate(blob))

    def test_weights_container_copy_is_deep(self, cfg):
        w = init_weights(cfg, 2)
        c = w.copy()
        c["head_b"][0] = 42.0
        assert w["head_b"][0] == 0.0
        assert isinstance(c, ModelWeights)
