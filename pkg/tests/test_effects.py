import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fxnet.corpus import (DatasetManifest, SignalPlan, karplus_strong, render_source, segment_gains,
                          split_bounds, synthesize_corpus)
from fxnet.effects import (COMPRESSOR_GRID, FUZZ_GRID, CompressorParams, FuzzParams, compress,
                           compressor_gain, effect_params, envelope_follow, fuzz, fuzz_bias,
                           gain_computer, params_from_dict, params_to_dict, time_to_fraction)

FS = 44100


def step(levels, seconds):
    return np.concatenate([np.full(int(FS * s), v) for v, s in zip(levels, seconds)])


class TestEnvelope:
    @pytest.mark.parametrize("ms", [1.0, 10.0, 50.0])
    def test_attack_closed_form(self, ms):
        tau = FS * ms / 1000
        env = envelope_follow(np.ones(200), ms, 1000.0)
        k = np.arange(200)
        np.testing.assert_allclose(env, 1 - np.exp(-(k + 1) / tau), atol=1e-12)

    def test_attack_reaches_63_percent(self):
        # 10 ms is a whole number of samples at 44.1 kHz
        env = envelope_follow(np.ones(441), 10.0, 1000.0)
        assert env[440] == pytest.approx(1 - math.exp(-1), abs=1e-12)

    def test_release_closed_form(self):
        n = int(FS * 0.25)
        env = envelope_follow(np.zeros(n), 1.0, 250.0, init=1.0)
        assert env[n - 1] == pytest.approx(math.exp(-1), abs=1e-12)

    def test_constant_fixed_point(self):
        assert envelope_follow(np.full(FS, -0.3), 5.0, 50.0)[-1] == pytest.approx(0.3, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(1, 400), elements=st.floats(-2, 2)),
           st.floats(0.05, 100), st.floats(0.05, 3000))
    def test_non_negative_and_bounded(self, x, a, r):
        env = envelope_follow(x, a, r)
        assert np.all(env >= 0) and np.all(env <= np.max(np.abs(x)) + 1e-12)

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            envelope_follow(np.ones(3), 0.0, 1.0)


class TestCompressor:
    def test_unity_ratio(self, guitar_like):
        p = CompressorParams(ratio=1.0, makeup_db=6.0)
        x = guitar_like.astype(np.float64)
        np.testing.assert_allclose(compress(x, p), x * 10 ** 0.3, rtol=1e-12)

    def test_static_curve(self):
        levels = np.array([-40.0, -20.0, 0.0])
        out = gain_computer(levels, -20.0, 4.0, 0.0)
        assert out.tolist() == [-40.0, -20.0, -15.0]

    def test_knee_is_continuous(self):
        x = np.linspace(-30, -10, 2001)
        out = gain_computer(x, -20.0, 4.0, 6.0)
        assert np.max(np.abs(np.diff(out))) < 0.011

    @pytest.mark.parametrize("attack,release", COMPRESSOR_GRID)
    @pytest.mark.parametrize("freq", [100.0, 441.0, 1000.0])
    def test_steady_sine_output_level(self, attack, release, freq):
        p = CompressorParams(threshold_db=-20.0, ratio=4.0, attack_ms=attack, release_ms=release, knee_db=0.0)
        seconds = max(1.0, 10 * release / 1000) + 0.5
        t = np.arange(int(FS * seconds)) / FS
        amp = 10 ** ((p.threshold_db + 20.0) / 20)
        y = compress(amp * np.sin(2 * np.pi * freq * t), p)[-FS // 2:]
        assert 20 * np.log10(np.max(np.abs(y))) == pytest.approx(p.threshold_db + 5.0, abs=0.5)

    @pytest.mark.parametrize("attack,release", COMPRESSOR_GRID)
    def test_gain_ballistics(self, attack, release):
        p = CompressorParams(attack_ms=attack, release_ms=release)
        hold = 10 * release / 1000
        x = step([0.01, 1.0, 0.01], [0.1, hold, hold])
        g = compressor_gain(x, p)
        on, off = int(0.1 * FS), int(0.1 * FS) + int(hold * FS)
        assert time_to_fraction(g[:off], on) / FS * 1000 == pytest.approx(attack, rel=0.05)
        assert time_to_fraction(g, off) / FS * 1000 == pytest.approx(release, rel=0.05)

    def test_never_amplifies(self, guitar_like):
        p = CompressorParams(threshold_db=-30.0, ratio=8.0)
        assert np.all(np.abs(compress(guitar_like, p)) <= np.abs(guitar_like) + 1e-12)

    def test_causal(self, guitar_like):
        p = CompressorParams()
        x2 = guitar_like.copy()
        x2[30000:] = 0.7
        np.testing.assert_array_equal(compress(guitar_like, p)[:30000], compress(x2, p)[:30000])

    def test_invalid(self):
        with pytest.raises(ValueError):
            CompressorParams(ratio=0.5)
        with pytest.raises(ValueError):
            CompressorParams(attack_ms=0.0)


class TestFuzz:
    def test_silence(self):
        assert not fuzz(np.zeros(1000), FuzzParams()).any()

    def test_high_gain_is_nearly_square(self):
        t = np.arange(FS) / FS
        y = fuzz(0.5 * np.sin(2 * np.pi * 220 * t), FuzzParams(gain=200.0, bias_depth=0.0))[FS // 2:]
        crest = np.max(np.abs(y)) / np.sqrt(np.mean(y ** 2))
        assert crest == pytest.approx(1.0, rel=0.15)

    def test_symmetric_without_bias(self):
        n = FS
        k = 441  # whole number of cycles in the window
        x = 0.5 * np.sin(2 * np.pi * k * np.arange(n) / n)
        y = fuzz(np.tile(x, 2), FuzzParams(gain=10.0, bias_depth=0.0))[n:]
        power = np.abs(np.fft.rfft(y)) ** 2
        odd = sum(power[m * k] for m in range(1, 20, 2))
        even = sum(power[m * k] for m in range(2, 20, 2))
        assert 10 * np.log10(even / odd) < -40

    def test_bias_makes_it_asymmetric(self):
        n = FS
        k = 441
        x = 0.5 * np.sin(2 * np.pi * k * np.arange(n) / n)
        y = fuzz(np.tile(x, 2), FuzzParams(gain=10.0, bias_depth=1.0))[n:]
        power = np.abs(np.fft.rfft(y)) ** 2
        assert 10 * np.log10(power[2 * k] / power[k]) > -40

    @pytest.mark.parametrize("attack,release", FUZZ_GRID)
    def test_bias_ballistics(self, attack, release):
        p = FuzzParams(attack_ms=attack, release_ms=release)
        hold = 10 * release / 1000
        x = step([0.0, 0.5, 0.0], [0.05, hold, hold])
        b = fuzz_bias(x, p)
        on, off = int(0.05 * FS), int(0.05 * FS) + int(hold * FS)
        assert time_to_fraction(b[:off], on) / FS * 1000 == pytest.approx(attack, rel=0.05)
        assert time_to_fraction(b, off) / FS * 1000 == pytest.approx(release, rel=0.05)

    def test_causal(self, guitar_like):
        x2 = guitar_like.copy()
        x2[20000:] *= -3
        np.testing.assert_array_equal(fuzz(guitar_like, FuzzParams())[:20000], fuzz(x2, FuzzParams())[:20000])

    def test_bias_depth_range(self):
        with pytest.raises(ValueError):
            FuzzParams(bias_depth=1.5)


class TestParams:
    def test_grids(self):
        assert FUZZ_GRID == ((50.0, 50.0), (10.0, 250.0), (1.0, 2500.0))
        assert COMPRESSOR_GRID == ((10.0, 50.0), (5.0, 250.0), (1.0, 2500.0))

    def test_roundtrip(self):
        for p in (CompressorParams(threshold_db=-12.0), FuzzParams(gain=40.0)):
            assert params_from_dict(json.loads(json.dumps(params_to_dict(p)))) == p

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            effect_params("chorus")


class TestCorpus:
    def test_split_proportions(self):
        n = 28 * 60 * FS
        b = split_bounds(n)
        assert [(hi - lo) / FS / 60 for lo, hi in b.values()] == [14.0, 7.0, 7.0]

    def test_amplitude_segments(self, rng):
        plan = SignalPlan(12.0, amplitude_segment_s=5.0)
        g = segment_gains(plan.num_samples, plan, rng)
        seg = 5 * FS
        assert len(np.unique(g[:seg])) == 1 and len(np.unique(g[seg:2 * seg])) == 1
        assert g[0] != g[seg]
        assert np.all((g >= 10 ** (-30 / 20)) & (g <= 1.0))

    def test_source_peak(self, rng):
        x = render_source(SignalPlan(6.0, amplitude_range=(0.0, 0.0)), rng)
        assert np.max(np.abs(x)) == pytest.approx(0.9)

    def test_karplus_strong_recurrence(self, rng):
        y = karplus_strong(441.0, 1000, 0.99, rng)
        p = 100
        n = np.arange(p + 1, 1000)
        np.testing.assert_allclose(y[n], 0.99 * 0.5 * (y[n - p] + y[n - p - 1]), atol=1e-12)

    def test_synthesis_is_reproducible(self, tmp_path):
        plan = SignalPlan(4.0)
        a = synthesize_corpus(plan, FuzzParams(), 7, tmp_path / "a")
        synthesize_corpus(plan, FuzzParams(), 7, tmp_path / "b")
        for name in ["manifest.json"] + [e.input_path for e in a.entries] + [e.target_path for e in a.entries]:
            ha = hashlib.sha256((tmp_path / "a" / name).read_bytes()).hexdigest()
            hb = hashlib.sha256((tmp_path / "b" / name).read_bytes()).hexdigest()
            assert ha == hb

    def test_manifest_contents(self, tmp_path):
        m = synthesize_corpus(SignalPlan(4.0, source="noise-burst"), CompressorParams(), 1, tmp_path)
        loaded = DatasetManifest.load(tmp_path / "manifest.json")
        assert loaded.effect_params() == CompressorParams()
        assert [e.split for e in loaded.entries] == ["train", "val", "test"]
        assert [e.duration_s for e in loaded.entries] == [2.0, 1.0, 1.0]
        x, y = loaded.split("val")[0]
        np.testing.assert_allclose(y, compress(x.astype(np.float64), CompressorParams()), atol=1e-3)
        assert m.extra["seed"] == 1
