import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fxnet import tensor as T
from fxnet.gradcheck import check_gradients
from fxnet.models import (PRESETS, ModelSpec, SpecError, assemble, describe, empirical_receptive_field,
                          param_count, preset, receptive_field, tfilm_param_count)
from fxnet.nn import GatedConvLayer, LSTMCell, TFiLM
from fxnet.tensor import Tensor


class TestSpec:
    def test_layers_must_divide_into_blocks(self):
        with pytest.raises(SpecError):
            ModelSpec("GCN", blocks=2, layers=9, kernel_size=3, dilation_growth=2).validate()

    def test_block_size_power_of_two(self):
        with pytest.raises(SpecError):
            preset("gcntf-3", tfilm_block_size=100)

    def test_unknown_preset(self):
        with pytest.raises(SpecError):
            preset("gcn-7")

    def test_roundtrip(self):
        for spec in PRESETS.values():
            assert ModelSpec.from_dict(spec.to_dict()) == spec

    def test_override(self):
        assert preset("gcn-3", channels=24).channels == 24


class TestReceptiveField:
    @pytest.mark.parametrize("name,expected", [("gcn-1", 2047), ("gcn-3", 2045),
                                               ("gcn-250", 10361), ("gcn-2500", 118097)])
    def test_closed_form(self, name, expected):
        assert receptive_field(preset(name)) == expected

    def test_unit_kernel(self):
        assert receptive_field(ModelSpec("GCN", 2, 8, 1, 3)) == 1

    def test_recurrent_is_unbounded(self):
        with pytest.raises(SpecError):
            receptive_field(preset("lstm-32"))

    @pytest.mark.parametrize("name", ["gcn-1", "gcn-3", "gcn-250", "gcn-2500", "gcntf-3"])
    def test_empirical_matches(self, name):
        assert empirical_receptive_field(preset(name)) == receptive_field(preset(name))

    def test_probe_sees_small_kernels(self):
        spec = ModelSpec("GCN", 1, 3, 2, 3, channels=2)
        assert empirical_receptive_field(spec) == receptive_field(spec) == 1 + 1 + 3 + 9

    def test_describe(self):
        assert describe(preset("gcn-1")) == "params: 17121, receptive_field: 2047 samples (46.4 ms @44100)"


class TestParamCount:
    @pytest.mark.parametrize("name,expected", [("gcn-1", 17121), ("gcn-3", 31969), ("lstm-32", 4513),
                                               ("lstm-96", 38113), ("gcntf-3", 71137)])
    def test_exact(self, name, expected):
        assert param_count(preset(name)) == expected

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_matches_instantiated_buffers(self, name):
        spec = preset(name)
        assert assemble(spec).num_parameters() == param_count(spec)

    def test_projected_variant_cost(self):
        spec = preset("gcntf-3", tfilm_variant="projected")
        assert param_count(spec) - param_count(preset("gcntf-3")) == 18 * 544
        assert assemble(spec).num_parameters() == param_count(spec)

    def test_tfilm_cost(self):
        assert tfilm_param_count(16) == 2176

    def test_channel_width(self):
        assert param_count(preset("gcn-3", channels=24)) == pytest.approx(70990, rel=5e-3)


class TestGatedLayer:
    def test_zero_in_zero_out(self, rng):
        layer = GatedConvLayer(4, 4, 3, 2, rng=rng)
        layer.conv.bias.data[:] = 0
        layer.mix.bias.data[:] = 0
        res, skip = layer(Tensor(np.zeros((4, 20))))
        assert not res.data.any() and not skip.data.any()

    def test_causal_window(self, rng):
        layer = GatedConvLayer(1, 4, 3, 1, rng=rng)
        x = rng.standard_normal((1, 20))
        base = layer(Tensor(x))[1].data
        x[0, 10] += 1.0
        changed = np.flatnonzero(np.any(layer(Tensor(x))[1].data != base, axis=0))
        assert changed.tolist() == [10, 11, 12]

    def test_residual_only_when_widths_match(self, rng):
        first = GatedConvLayer(1, 4, 3, 1, rng=rng)
        res, skip = first(Tensor(rng.standard_normal((1, 8))))
        assert res is skip
        inner = GatedConvLayer(4, 4, 3, 1, rng=rng)
        x = Tensor(rng.standard_normal((4, 8)))
        res, skip = inner(x)
        np.testing.assert_allclose(res.data, skip.data + x.data, rtol=1e-6)

    def test_dilations_reset_per_block(self):
        for name in PRESETS:
            spec = PRESETS[name]
            if spec.family == "LSTM":
                continue
            per = spec.layers // spec.blocks
            got = [layer.dilation for layer in assemble(spec).layers]
            assert got == [spec.dilation_growth ** (n % per) for n in range(spec.layers)]


class TestTFiLM:
    def test_identity_affine(self, rng):
        tf = TFiLM(3, 4, rng=rng)
        tf.force_affine = (1.0, 0.0)
        z = Tensor(rng.standard_normal((3, 16)))
        assert np.array_equal(tf(z).data, z.data)

    def test_geometry(self, rng):
        tf = TFiLM(3, 4, rng=rng)
        pooled = T.maxpool1d(Tensor(rng.standard_normal((3, 16))), 4)
        seq = tf.controller(T.transpose(pooled))
        assert pooled.shape == (3, 4) and seq.shape == (2, 4, 3)

    def test_first_block_uses_zero_state(self, rng):
        tf = TFiLM(3, 4, rng=rng)
        out = tf(Tensor(rng.standard_normal((3, 16)))).data
        # zero hidden and cell state: scale 0, shift 0
        assert not out[:, :4].any()

    def test_matches_manual_loop(self, rng):
        C, B = 3, 4
        tf = TFiLM(C, B, rng=rng)
        z = rng.standard_normal((C, 18)).astype(np.float32)
        out = tf(Tensor(z)).data
        ctrl = tf.controller
        h, c = np.zeros(C), np.zeros(C)
        sig = lambda v: 1 / (1 + np.exp(-v))
        for t in range(5):
            seg = slice(t * B, min((t + 1) * B, 18))
            np.testing.assert_allclose(out[:, seg], h[:, None] * z[:, seg] + c[:, None], atol=1e-5)
            if (t + 1) * B > 18:
                break
            a = z[:, seg].max(axis=1)
            g = ctrl.w_ih.data @ a + ctrl.w_hh.data @ h + ctrl.b_ih.data + ctrl.b_hh.data
            i, f, gg, o = np.split(g, 4)
            c = sig(f) * c + sig(i) * np.tanh(gg)
            h = sig(o) * np.tanh(c)

    @settings(max_examples=20, deadline=None)
    @given(k=st.integers(0, 4), seed=st.integers(0, 1000))
    def test_block_causality(self, k, seed):
        r = np.random.default_rng(seed)
        tf = TFiLM(3, 4, rng=r)
        a = r.standard_normal((3, 24))
        b = a.copy()
        b[:, (k + 1) * 4:] = r.standard_normal((3, 24 - (k + 1) * 4))
        ya, yb = tf(Tensor(a)).data, tf(Tensor(b)).data
        assert np.array_equal(ya[:, :(k + 1) * 4], yb[:, :(k + 1) * 4])

    @pytest.mark.parametrize("variant", ["hidden-cell", "projected"])
    def test_gradients(self, rng, variant):
        with T.precision(np.float64):
            tf = TFiLM(2, 4, variant, rng=rng).to(np.float64)
            z = Tensor(rng.standard_normal((2, 14)), requires_grad=True, dtype=np.float64)
            params = tf.parameters()
            assert check_gradients(lambda: (tf(z) * tf(z)).sum(), [z] + params) < 1e-4


class TestModels:
    def test_forced_tfilm_equals_gcn(self, rng):
        gcn = assemble(preset("gcn-1"), seed=5)
        tfm = assemble(preset("gcntf-1"), seed=5)
        for lg, lt in zip(gcn.layers, tfm.layers):
            for a, b in ((lg.conv, lt.conv), (lg.mix, lt.mix)):
                b.weight.data[...] = a.weight.data
                b.bias.data[...] = a.bias.data
            for p in lt.tfilm.parameters():
                p.data[...] = 0
            lt.tfilm.force_affine = (1.0, 0.0)
        tfm.output.weight.data[...] = gcn.output.weight.data
        tfm.output.bias.data[...] = gcn.output.bias.data
        x = Tensor(rng.standard_normal((1, 3000)).astype(np.float32))
        assert np.array_equal(gcn(x).data, tfm(x).data)

    def test_output_length(self, rng):
        for name in ("gcn-1", "gcntf-1", "lstm-32"):
            x = Tensor(rng.standard_normal((1, 777)))
            assert assemble(preset(name))(x).shape == (1, 777)

    def test_lstm_zero_weights(self):
        cell = LSTMCell(1, 4)
        for p in cell.parameters():
            p.data[...] = 0
        seq = cell(Tensor(np.zeros((10, 1))))
        assert not seq.data.any()

    def test_lstm_baseline_is_residual(self):
        m = assemble(preset("lstm-32"))
        m.readout.weight.data[...] = 0
        m.readout.bias.data[...] = 0
        x = Tensor(np.linspace(-1, 1, 50).reshape(1, -1))
        np.testing.assert_array_equal(m(x).data, x.data)

    def test_seeded_init_is_reproducible(self):
        a = assemble(preset("gcntf-3"), seed=11).state_dict()
        b = assemble(preset("gcntf-3"), seed=11).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_state_dict_roundtrip(self):
        a = assemble(preset("gcntf-1"), seed=1)
        b = assemble(preset("gcntf-1"), seed=2)
        b.load_state_dict(a.state_dict())
        x = Tensor(np.random.default_rng(0).standard_normal((1, 600)))
        assert np.array_equal(a(x).data, b(x).data)

    def test_full_gcntf3_backward_is_finite(self, rng):
        model = assemble(preset("gcntf-3"), seed=0)
        y = model(Tensor(rng.standard_normal((1, 4096)).astype(np.float32) * 0.3))
        T.mean(T.tabs(y)).backward(retain_graph=False)
        for name, p in model.named_parameters():
            assert p.grad is not None and np.all(np.isfinite(p.grad)), name
