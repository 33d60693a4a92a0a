import numpy as np
import pytest

from tactisense.bench import BENCH_COLUMNS, BenchResult, bench_pipeline, emit_bench_report, read_bench_report
from tactisense.evaluator import NetPredictor
from tactisense.nets import build_network
from tactisense.state import compute_stats


@pytest.fixture(scope="module")
def stats(tiny_dataset):
    return compute_stats(tiny_dataset["train"])


@pytest.fixture(scope="module")
def clip(tiny_dataset):
    return tiny_dataset["test_seen"][0]


def _predictor(variant, stats):
    return NetPredictor(build_network(variant, seed=0), *stats)


class TestVS:
    def test_streaming_matches_offline(self, stats, clip):
        pred = _predictor("VS", stats)
        result = bench_pipeline("vs", pred, clip, iterations=20, warmup=5)
        offline = pred.predict_clip(clip)
        np.testing.assert_allclose(result.outputs, pred.force_stats.normalize(offline[5:25]), atol=1e-10)

    def test_wrong_model(self, stats, clip):
        with pytest.raises(ValueError):
            bench_pipeline("vs", _predictor("S", stats), clip, iterations=2)


class TestRNN:
    def test_carry_equals_window_inside_first_window(self, stats, clip):
        pred = _predictor("RNN", stats)
        window = bench_pipeline("rnn", pred, clip, iterations=30, warmup=0, carry_state=False)
        carry = bench_pipeline("rnn", pred, clip, iterations=30, warmup=0, carry_state=True)
        np.testing.assert_allclose(window.outputs, carry.outputs, atol=1e-10)
        assert (window.label, carry.label) == ("rnn-window", "rnn-carry")

    def test_window_is_bounded(self, stats, clip):
        pred = _predictor("RNN", stats)
        result = bench_pipeline("rnn", pred, clip, iterations=3, warmup=70)
        assert np.isfinite(result.outputs).all()


class TestReport:
    def test_rows(self, tmp_path):
        r = BenchResult("vs", 4, np.array([1.0, 2.0, 3.0, 4.0]), np.full(4, 0.5), np.full(4, 2.0),
                        clock_resolution_ms=1e-6)
        rows = emit_bench_report([r], tmp_path / "bench.csv")
        assert rows[0]["mean_ms"] == 2.5
        assert rows[0]["rate_hz"] == 400.0
        assert rows[0]["unreliable"] is False
        back = read_bench_report(tmp_path / "bench.csv")
        assert tuple(back[0]) == BENCH_COLUMNS
        assert float(back[0]["p50_ms"]) == 2.5

    def test_coarse_clock_flagged(self):
        r = BenchResult("vs", 1, np.array([0.05]), np.zeros(1), np.zeros(1), clock_resolution_ms=0.01)
        assert r.unreliable

    def test_empty(self):
        with pytest.raises(ValueError):
            emit_bench_report([])

    def test_bad_arguments(self, stats, clip):
        with pytest.raises(ValueError):
            bench_pipeline("cnn", _predictor("VS", stats), clip)
        with pytest.raises(ValueError):
            bench_pipeline("vs", _predictor("VS", stats), clip, iterations=0)
