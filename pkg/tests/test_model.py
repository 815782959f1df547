import numpy as np
import pytest

from mrrawnet.engine.autograd import Parameter, Tensor
from mrrawnet.engine.gradcheck import gradient_check
from mrrawnet.engine.layers import Linear, Module
from mrrawnet.errors import ConfigError
from mrrawnet.model import (
    AttentiveStatsPool,
    ModelConfig,
    assemble,
    count_params,
    embed_waveforms,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.fixture(scope="module")
def micro():
    model = assemble(ModelConfig.micro(), seed=3)
    model.eval()
    return model


class TestASP:
    def zeroed(self, channels=5):
        pool = AttentiveStatsPool(channels, 4, rng=rng())
        for p in pool.parameters():
            p.data[:] = 0
        return pool

    def test_uniform_weights_give_plain_statistics(self):
        x = rng(1).normal(size=(2, 5, 17))
        out = self.zeroed()(Tensor(x)).data
        np.testing.assert_allclose(out[:, :5], x.mean(axis=2), rtol=1e-13)
        np.testing.assert_allclose(out[:, 5:], x.std(axis=2), rtol=1e-10)

    def test_constant_input(self):
        pool = AttentiveStatsPool(3, 4, rng=rng(2))
        x = np.broadcast_to(np.array([1.5, -2.0, 0.0])[None, :, None], (1, 3, 9)).copy()
        out = pool(Tensor(x)).data[0]
        np.testing.assert_allclose(out[:3], [1.5, -2.0, 0.0], rtol=1e-14)
        np.testing.assert_array_equal(out[3:], 0)

    @pytest.mark.parametrize("length", [100, 200, 300, 500])
    def test_output_width(self, length):
        pool = AttentiveStatsPool(1536, 128, rng=rng())
        assert pool(Tensor(rng(1).normal(size=(1, 1536, length)))).shape == (1, 3072)

    def test_weights_are_a_distribution(self):
        pool = AttentiveStatsPool(6, 5, rng=rng(3))
        w = pool.weights(Tensor(rng(4).normal(scale=3, size=(3, 6, 21)))).data
        assert np.all(w >= 0)
        assert np.abs(w.sum(axis=2) - 1).max() < 1e-12

    def test_std_is_nonnegative(self):
        pool = AttentiveStatsPool(6, 5, rng=rng(5))
        out = pool(Tensor(rng(6).normal(size=(4, 6, 3)))).data
        assert np.all(out[:, 6:] >= 0)

    def test_gradient(self):
        pool = AttentiveStatsPool(6, 5, rng=rng(7))
        x = Parameter(rng(8).normal(size=(2, 6, 11)))
        readout = rng(9).normal(size=(2, 12))
        check = gradient_check(lambda: (pool(x) * readout).sum(), [x] + pool.parameters(),
                               max_probes=8, rng=rng(0))
        assert check.max_rel_err < 1e-4


class TestEmbed:
    def test_default_width(self):
        cfg = ModelConfig()
        layer = Linear(2 * cfg.backbone.pool_channels, cfg.embed_dim, rng=rng())
        assert layer(Tensor(np.ones((2, 3072)))).shape == (2, 256)

    def test_zero_weight_gives_bias(self):
        layer = Linear(6, 3, rng=rng())
        layer.weight.data[:] = 0
        layer.bias.data[:] = [1, 2, 3]
        np.testing.assert_array_equal(layer(Tensor(rng(1).normal(size=(2, 6)))).data, [[1, 2, 3]] * 2)

    def test_linear(self):
        layer = Linear(6, 3, rng=rng())
        layer.bias.data[:] = rng(2).normal(size=3)
        x = rng(1).normal(size=(2, 6))
        b = layer.bias.data
        np.testing.assert_allclose(layer(Tensor(2.5 * x)).data - b, 2.5 * (layer(Tensor(x)).data - b),
                                   rtol=1e-13)


class TestAssemble:
    def test_same_seed_same_parameters(self):
        a = assemble(ModelConfig.micro(), seed=11).state_dict()
        b = assemble(ModelConfig.micro(), seed=11).state_dict()
        assert list(a) == list(b)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_different_seed_differs(self):
        a = assemble(ModelConfig.micro(), seed=1).state_dict()
        b = assemble(ModelConfig.micro(), seed=2).state_dict()
        assert any(not np.array_equal(a[k], b[k]) for k in a)

    def test_unique_paths(self):
        model = assemble(ModelConfig.micro(), seed=0)
        paths = [p for p, _ in model.named_parameters()]
        assert len(paths) == len(set(paths))
        assert all(p.name == path for path, p in model.named_parameters())

    def test_default_count_in_window(self):
        total, breakdown = count_params(assemble(ModelConfig.default()))
        assert 12.4e6 <= total <= 18.6e6
        assert set(breakdown) == {"mrfe", "proj", "backbone", "pool", "embed"}

    def test_default_below_baseline(self):
        ours, _ = count_params(assemble(ModelConfig.default()))
        theirs, _ = count_params(assemble(ModelConfig.baseline()))
        assert ours < theirs

    def test_micro_runs_one_second(self, micro):
        emb = embed_waveforms(micro, rng(1).normal(size=(2, 1, 16000)))
        assert emb.shape == (2, 32) and np.isfinite(emb.data).all()

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            assemble(ModelConfig(variant="resnet"))
        bad = ModelConfig.micro()
        bad.backbone.channels = 6
        with pytest.raises(ConfigError):
            assemble(bad)

    def test_config_is_snapshotted(self):
        cfg = ModelConfig.micro()
        model = assemble(cfg)
        cfg.embed_dim = 99
        assert model.config.embed_dim == 32

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="colour"):
            ModelConfig.from_dict({"colour": 1})
        with pytest.raises(ConfigError, match="backbone"):
            ModelConfig.from_dict({"backbone": {"width": 3}})


class TestForward:
    def test_trace_for_three_seconds(self):
        model = assemble(ModelConfig.micro(), seed=0)
        model.eval()
        trace = {}
        embed_waveforms(model, np.zeros((1, 1, 48000)), trace)
        c = 8
        mrfe = model.config.mrfe
        assert trace["o1"] == (1, mrfe.n_extractors * mrfe.tcn_channels, 300)
        assert trace["o2"] == (1, c, 300)
        assert trace["o3"] == trace["o4"] == trace["o5"] == (1, c, 300)
        assert trace["o6"] == (1, 3 * c, 300)
        assert trace["o7"] == (1, 64, 300)
        assert trace["o8"] == (1, 128)
        assert trace["embedding"] == (1, 32)

    def test_duration_invariant_width(self, micro):
        a = embed_waveforms(micro, np.zeros((1, 1, 16000)))
        b = embed_waveforms(micro, np.zeros((1, 1, 32000)))
        assert a.shape == b.shape

    def test_eval_repeatable(self, micro):
        x = rng(2).normal(size=(2, 1, 8000))
        assert np.array_equal(embed_waveforms(micro, x).data, embed_waveforms(micro, x).data)

    def test_length_off_grid(self, micro):
        with pytest.raises(ValueError, match="160"):
            embed_waveforms(micro, np.zeros((1, 1, 16001)))

    def test_two_dimensional_input(self, micro):
        x = rng(3).normal(size=(2, 3200))
        np.testing.assert_array_equal(embed_waveforms(micro, x).data,
                                      embed_waveforms(micro, x[:, None, :]).data)

    def test_baseline_forward(self):
        cfg = ModelConfig.micro(variant="rawnet3-baseline", baseline_kernel=31)
        model = assemble(cfg, seed=0)
        model.eval()
        trace = {}
        emb = embed_waveforms(model, rng(4).normal(size=(1, 1, 16000)), trace)
        assert emb.shape == (1, 32)
        assert trace["o1"] == (1, 16, 1000)
        assert trace["o5"][2] == 1000 // (5 * 3 * 2)


class TestCountParams:
    def test_single_linear(self):
        assert count_params(Linear(3072, 256, rng=rng()))[0] == 786_688

    def test_empty(self):
        assert count_params(Module()) == (0, {})
        assert count_params(None) == (0, {})

    def test_breakdown_sums(self, micro):
        total, breakdown = count_params(micro)
        assert total == sum(breakdown.values()) == sum(p.size for p in micro.parameters())


class TestCheckpoint:
    def test_round_trip(self, micro, tmp_path):
        path = tmp_path / "m.mrrw"
        save_checkpoint(path, micro, {"epoch": 2})
        assert path.read_bytes()[:5] == b"MRRW1"
        loaded, meta = load_checkpoint(path)
        assert meta == {"epoch": 2}
        assert loaded.config == micro.config
        for k, v in micro.state_dict().items():
            np.testing.assert_array_equal(loaded.state_dict()[k], v.astype(np.float32))

    def test_float32_model_is_exact(self, tmp_path):
        model = assemble(ModelConfig.micro(dtype="float32"), seed=4)
        model.eval()
        path = tmp_path / "m.mrrw"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        x = rng(5).normal(size=(1, 1, 3200))
        np.testing.assert_array_equal(embed_waveforms(loaded, x).data, embed_waveforms(model, x).data)

    def test_shape_mismatch_names_path(self, micro, tmp_path):
        path = tmp_path / "m.mrrw"
        save_checkpoint(path, micro)
        _, state = read_checkpoint(path)
        other = assemble(ModelConfig.micro(embed_dim=16))
        with pytest.raises(ValueError, match="embed.weight"):
            other.load_state_dict(state)

    def test_missing_parameter_names_path(self, micro):
        state = dict(micro.state_dict())
        del state["proj.bias"]
        with pytest.raises(KeyError, match="proj.bias"):
            assemble(ModelConfig.micro()).load_state_dict(state)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.mrrw"
        path.write_bytes(b"NOTIT")
        with pytest.raises(ValueError):
            read_checkpoint(path)

    def test_truncated(self, micro, tmp_path):
        path = tmp_path / "m.mrrw"
        save_checkpoint(path, micro)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ValueError, match="truncated"):
            read_checkpoint(path)
