import csv
import itertools

import numpy as np
import pytest

from fxnet.audio import AudioBuffer, SampleRateError
from fxnet.evaluation import (EvalReport, compare, compare_distributions, evaluate, process_chunked,
                              process_offline, read_windowed_csv, window_statistics, windowed_errors,
                              write_report, write_summary)
from fxnet.models import assemble, preset


def report(name, l1, st, params=100):
    return EvalReport(name, None, params, l1, st)


class TestProcess:
    def test_identity_lstm(self, rng):
        model = assemble(preset("lstm-32"))
        model.readout.weight.data[...] = 0
        model.readout.bias.data[...] = 0
        x = rng.uniform(-1, 1, 3000).astype(np.float32)
        assert np.array_equal(process_offline(model, AudioBuffer(x)).samples, x)

    def test_length_and_determinism(self, rng):
        model = assemble(preset("gcntf-1"))
        buf = AudioBuffer(rng.uniform(-1, 1, 2345))
        a, b = process_offline(model, buf), process_offline(model, buf)
        assert len(a) == 2345 and np.array_equal(a.samples, b.samples)

    def test_rate_mismatch(self):
        with pytest.raises(SampleRateError):
            process_offline(assemble(preset("gcn-1")), AudioBuffer(np.zeros(10), 48000))

    def test_chunked_matches(self, rng):
        model = assemble(preset("gcn-3"), seed=1)
        buf = AudioBuffer(rng.uniform(-1, 1, 9000))
        diff = process_chunked(model, buf, 4096).samples - process_offline(model, buf).samples
        assert np.max(np.abs(diff)) <= 1e-5


class TestWindowed:
    def test_identical_gives_zeros(self, rng):
        y = rng.standard_normal(3 * 8192)
        rows = windowed_errors(y, y)
        assert len(rows) == 3 and all(r["l1"] == 0 and r["stft"] == 0 for r in rows)

    def test_locality(self, rng):
        y = rng.standard_normal(4 * 8192).astype(np.float32)
        p = y.copy()
        p[2 * 8192 + 100:2 * 8192 + 200] += 0.5
        rows = windowed_errors(p, y)
        assert [r["l1"] > 0 for r in rows] == [False, False, True, False]

    def test_partial_window_dropped(self, rng):
        y = rng.standard_normal(2 * 8192 + 1000)
        rows = windowed_errors(y + 0.1, y)
        assert [r["start_sample"] for r in rows] == [0, 8192]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            windowed_errors(np.zeros(10), np.zeros(11))

    @pytest.mark.parametrize("extra", [0, 777])
    def test_window_sum_bounded_by_total(self, rng, extra):
        y = rng.standard_normal(3 * 8192 + extra).astype(np.float32)
        p = (y + rng.standard_normal(y.size) * 0.1).astype(np.float32)
        total = np.sum(np.abs(p - y), dtype=np.float64)
        windows = sum(r["l1"] * 8192 for r in windowed_errors(p, y))
        if extra:
            assert windows < total
        else:
            assert windows == pytest.approx(total, rel=1e-9)

    def test_statistics_from_csv(self, tmp_path):
        # synthetic error pattern with known median and 95th percentile
        rows = [{"window_index": k, "start_sample": k * 8192, "l1": float(k), "stft": 2.0 * k}
                for k in range(101)]
        rep = EvalReport("m", None, 0, 0.0, 0.0, windowed=rows)
        write_report(rep, tmp_path)
        stats = window_statistics(read_windowed_csv(tmp_path / "windowed.csv"))
        assert stats["l1"] == {"median": 50.0, "p95": 95.0}
        assert stats["stft"] == {"median": 100.0, "p95": 190.0}


class TestEvaluate:
    def test_aggregate_l1_is_sample_mean(self, rng):
        model = assemble(preset("gcn-1"), seed=0)
        pairs = [(rng.uniform(-1, 1, n).astype(np.float32), rng.uniform(-1, 1, n).astype(np.float32))
                 for n in (9000, 20000)]
        rep = evaluate(model, pairs, "gcn-1")
        errs = [np.abs(process_offline(model, AudioBuffer(x)).samples - y) for x, y in pairs]
        assert rep.l1 == pytest.approx(np.concatenate(errs).astype(np.float64).mean(), rel=1e-9)
        assert len(rep.windowed) == 1 + 2
        assert rep.params == 17121

    def test_report_files(self, tmp_path, rng):
        model = assemble(preset("lstm-32"))
        x = rng.uniform(-1, 1, 20000).astype(np.float32)
        write_report(evaluate(model, [(x, x)], "lstm"), tmp_path)
        with open(tmp_path / "windowed.csv") as f:
            assert next(csv.reader(f)) == ["window_index", "start_sample", "l1", "stft"]
        assert (tmp_path / "histogram.csv").exists() and (tmp_path / "report.json").exists()


class TestCompare:
    def test_single_is_best(self):
        assert compare([report("a", 0.3, 0.7)])[0]["best_flag"] == 1

    def test_ties_go_to_lower_mrstft(self):
        rows = compare([report("a", 0.2, 0.5), report("b", 0.4, 0.3)])
        assert {r["model"]: r["best_flag"] for r in rows} == {"a": 0, "b": 1}

    def test_permutation_invariant(self):
        reps = [report("x", 0.1, 0.9), report("y", 0.2, 0.5), report("z", 0.5, 0.2), report("w", 0.3, 0.6)]
        outs = {tuple(tuple(sorted(r.items())) for r in compare(list(p))) for p in itertools.permutations(reps)}
        assert len(outs) == 1

    def test_summary_columns(self, tmp_path):
        write_summary(compare([report("a", 0.1, 0.2)]), tmp_path / "summary.csv")
        with open(tmp_path / "summary.csv") as f:
            assert next(csv.reader(f)) == ["model", "params", "l1", "mrstft", "best_flag"]

    def test_distribution_comparison(self, rng):
        heavy = [{"l1": v, "stft": v} for v in rng.lognormal(0.0, 1.0, 500)]
        light = [{"l1": v, "stft": v} for v in rng.lognormal(-0.7, 0.3, 500)]
        res = compare_distributions(heavy, light)
        assert res["l1"]["higher_median"] and res["l1"]["heavier_tail"]
        assert not compare_distributions(light, heavy)["stft"]["heavier_tail"]
