import numpy as np
import pytest

from fibernle.nn import (
    FCNN,
    FCNNConfig,
    ModelCheckpoint,
    ShapeError,
    Tensor,
    TransformerConfig,
    TransformerEqualizer,
    build_model,
    fcnn_parameter_count,
    positional_encoding,
    transformer_parameter_count,
)
from fibernle.nn import gradcheck
from fibernle.nn.layers import Linear, MultiHeadAttention


def _tokens(batch=4, seed=0):
    return np.random.default_rng(seed).integers(0, 2, (batch, 10, 32)).astype(np.float64)


class TestPositionalEncoding:
    def test_position_zero(self):
        pe = positional_encoding(10, 32)
        assert np.all(pe[0, 0::2] == 0.0) and np.all(pe[0, 1::2] == 1.0)

    def test_bounded_and_distinct(self):
        pe = positional_encoding(10, 32)
        assert np.all(np.abs(pe) <= 1.0)
        assert not np.allclose(pe[1], pe[2])
        assert len({tuple(np.round(row, 12)) for row in pe}) == 10

    def test_formula(self):
        pe = positional_encoding(6, 8)
        assert pe[3, 2] == pytest.approx(np.sin(3 / 10000 ** (2 / 8)))
        assert pe[5, 5] == pytest.approx(np.cos(5 / 10000 ** (4 / 8)))

    def test_odd_width(self):
        with pytest.raises(ValueError):
            positional_encoding(4, 7)


class TestAttention:
    def _identity_attention(self, d):
        m = MultiHeadAttention(d, 1, np.random.default_rng(0))
        for lin in (m.query, m.key, m.value, m.out):
            lin.weight.data = np.eye(d)
            lin.bias.data = np.zeros(d)
        return m

    def test_single_token_identity(self):
        m = self._identity_attention(4)
        x = np.array([[0.3, -1.0, 2.0, 0.5]])
        assert np.allclose(m(Tensor(x)).data, x)

    def test_rows_sum_to_one(self):
        m = MultiHeadAttention(32, 8, np.random.default_rng(1))
        m(Tensor(np.random.default_rng(2).normal(size=(3, 10, 32))))
        assert m.last_attention.shape == (3, 8, 10, 10)
        assert np.allclose(m.last_attention.sum(axis=-1), 1.0, atol=1e-9)

    def test_unmasked(self):
        # a later token can influence the output of the first one
        m = MultiHeadAttention(32, 8, np.random.default_rng(3))
        x = np.random.default_rng(4).normal(size=(10, 32))
        y = x.copy()
        y[-1] += 1.0
        assert not np.allclose(m(Tensor(x)).data[0], m(Tensor(y)).data[0])

    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            MultiHeadAttention(30, 8, np.random.default_rng(0))


class TestTransformer:
    def test_default_config(self):
        cfg = TransformerConfig()
        assert (cfg.seq_len, cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.d_ff, cfg.dropout, cfg.d_out) == (
            10, 32, 8, 1, 1024, 0.1, 2)

    def test_output_shapes(self):
        m = TransformerEqualizer().eval()
        assert m(_tokens()).shape == (4, 2)
        assert m(_tokens(1)[0]).shape == (2,)

    def test_eval_deterministic(self):
        m = TransformerEqualizer(seed=3).eval()
        x = _tokens()
        assert np.array_equal(m(x).data, m(x).data)

    def test_train_mode_uses_dropout(self):
        m = TransformerEqualizer(seed=3).train()
        x = _tokens()
        assert not np.array_equal(m(x).data, m(x).data)

    def test_zero_head_gives_zero(self):
        m = TransformerEqualizer().eval()
        m.head.weight.data[:] = 0.0
        m.head.bias.data[:] = 0.0
        assert np.all(m(_tokens()).data == 0.0)

    def test_bad_shape(self):
        with pytest.raises(ShapeError, match="transformer expects"):
            TransformerEqualizer()(np.zeros((2, 9, 32)))

    def test_parameter_count_closed_form(self):
        cfg = TransformerConfig()
        # four 32x32 projections with bias, FF 32->1024->32, two norms, head 320->2
        by_hand = 4 * (32 * 32 + 32) + (32 * 1024 + 1024) + (1024 * 32 + 32) + 2 * 2 * 32 + (320 * 2 + 2)
        assert by_hand == 71_586
        assert transformer_parameter_count(cfg) == by_hand
        assert TransformerEqualizer(cfg).n_parameters() == by_hand

    @pytest.mark.parametrize("cfg", [TransformerConfig(n_layers=2, d_ff=64), TransformerConfig(seq_len=2, n_heads=4)])
    def test_parameter_count_other_configs(self, cfg):
        assert TransformerEqualizer(cfg).n_parameters() == transformer_parameter_count(cfg)


class TestFcnn:
    def test_parameter_count(self):
        assert fcnn_parameter_count(FCNNConfig()) == 32_302
        assert FCNN().n_parameters() == 32_302

    @pytest.mark.parametrize("shape", [(4, 10, 32), (4, 320)])
    def test_batch_inputs(self, shape):
        assert FCNN()(np.zeros(shape)).shape == (4, 2)

    @pytest.mark.parametrize("shape", [(10, 32), (320,)])
    def test_single_inputs(self, shape):
        assert FCNN()(np.zeros(shape)).shape == (2,)

    def test_zero_weights(self):
        m = FCNN()
        for p in m.parameters():
            p.data[...] = 0.0
        assert np.all(m(_tokens()).data == 0.0)

    def test_bad_width(self):
        with pytest.raises(ShapeError):
            FCNN()(np.zeros((4, 300)))


class TestInit:
    def test_fan_in_bounds(self):
        lin = Linear(320, 100, np.random.default_rng(0))
        bound = 1 / np.sqrt(320)
        assert np.all(np.abs(lin.weight.data) <= bound) and np.all(np.abs(lin.bias.data) <= bound)
        assert lin.weight.data.std() == pytest.approx(bound / np.sqrt(3), rel=0.02)

    def test_seeded(self):
        a, b = build_model("transformer", seed=5), build_model("transformer", seed=5)
        assert all(np.array_equal(a.state_dict()[k], v) for k, v in b.state_dict().items())
        c = build_model("transformer", seed=6)
        assert not np.array_equal(a.head.weight.data, c.head.weight.data)

    def test_unknown_arch(self):
        with pytest.raises(ValueError, match="unknown architecture"):
            build_model("bilstm")


class TestGradients:
    @pytest.mark.parametrize("arch", ["transformer", "fcnn"])
    def test_end_to_end(self, arch):
        errors = gradcheck.model_gradient_errors(seed=1)
        assert errors[arch] < 1e-4


class TestCheckpoint:
    @pytest.mark.parametrize("arch", ["transformer", "fcnn"])
    def test_round_trip_bit_identical(self, arch, tmp_path):
        model = build_model(arch, seed=2).eval()
        ckpt = ModelCheckpoint.from_model(model, {"epochs": 3, "dataset_sha256": "abc"})
        path = tmp_path / f"{arch}.ckpt"
        ckpt.save(path)
        back = ModelCheckpoint.load(path)
        assert back.arch == arch and back.metadata["epochs"] == 3
        x = _tokens()
        assert np.array_equal(back.build()(x).data, model(x).data)
        assert back.to_bytes() == ckpt.to_bytes()

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="magic"):
            ModelCheckpoint.from_bytes(b"NOTACKPT" + bytes(16))

    def test_state_mismatch(self):
        model = build_model("fcnn")
        state = model.state_dict()
        state.pop("output.bias")
        with pytest.raises(KeyError, match="missing"):
            model.load_state_dict(state)
