import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msecg import metrics as M
from msecg.dsp import Signal, linear_interp_upsample_array

from oracles import cos_loop, mad_loop, mse_loop, snr_loop

vectors = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).normal(size=(2, 64)))


def test_mse_examples(rng):
    g = rng.normal(size=50)
    assert M.mse(g, g) == 0.0
    assert M.mse(g + 1.0, g) == 1.0
    s = rng.normal(size=100)
    assert abs(M.mse(s, g[:50].repeat(2)) - mse_loop(s, g[:50].repeat(2))) < 1e-15


def test_cos_examples(rng):
    g = rng.normal(size=20)
    assert abs(M.cosine_similarity(g, g) - 1.0) < 1e-15
    assert abs(M.cosine_similarity(-g, g) + 1.0) < 1e-15
    assert M.cosine_similarity([1.0, 0.0], [0.0, 3.0]) == 0.0


def test_cos_zero_norm_is_an_error():
    with pytest.raises(ValueError, match="zero-norm"):
        M.cosine_similarity([0.0, 0.0], [1.0, 2.0])


def test_snr_examples(rng):
    g = rng.normal(size=200)
    n = rng.normal(size=200)
    n *= math.sqrt(np.dot(g, g) / np.dot(n, n))
    assert abs(M.snr_db(g + n, g)) < 1e-12
    assert abs(M.snr_db(g + 0.1 * n, g) - 20.0) < 1e-12
    assert M.snr_db(g, g) == math.inf


def test_mad_examples(rng):
    g = rng.normal(size=30)
    assert M.mad(g, g) == 0.0
    s = g.copy()
    s[7] += 0.5
    assert abs(M.mad(s, g) - 0.5) < 1e-15


def test_length_mismatch():
    for f in (M.mse, M.cosine_similarity, M.snr_db, M.mad):
        with pytest.raises(ValueError, match="length"):
            f(np.ones(3), np.ones(4))


def test_metrics_match_loops_on_many_pairs():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(200):
        N = int(rng.integers(2, 300))
        s, g = rng.normal(size=N), rng.normal(size=N)
        worst = max(worst, abs(M.mse(s, g) - mse_loop(s, g)), abs(M.cosine_similarity(s, g) - cos_loop(s, g)),
                    abs(M.snr_db(s, g) - snr_loop(s, g)), abs(M.mad(s, g) - mad_loop(s, g)))
    assert worst < 1e-12


@given(vectors)
def test_mad_dominates_rms(pair):
    s, g = pair
    assert M.mad(s, g) ** 2 >= M.mse(s, g)


@given(vectors, st.floats(0.01, 100))
def test_cos_scale_invariance(pair, alpha):
    s, g = pair
    assert abs(M.cosine_similarity(alpha * s, g) - M.cosine_similarity(s, g)) < 1e-12


@given(vectors, st.floats(0.1, 0.9))
def test_snr_orders_like_mse(pair, shrink):
    s, g = pair
    closer = g + shrink * (s - g)
    assert M.mse(closer, g) < M.mse(s, g)
    assert M.snr_db(closer, g) > M.snr_db(s, g)


@given(vectors)
def test_metric_ranges(pair):
    s, g = pair
    assert M.mse(s, g) >= 0 and M.mad(s, g) >= 0
    assert -1.0 <= M.cosine_similarity(s, g) <= 1.0


# -- reports ------------------------------------------------------------------------

def seg(rid, lr, hr):
    return SimpleNamespace(record_id=rid, lr=Signal(lr, 50.0), hr=Signal(hr, 500.0))


def test_perfect_predictions(rng):
    segs = [seg(f"r{i}", rng.normal(size=(2, 5)), rng.normal(size=(2, 50))) for i in range(3)]
    truth = {id(s.lr.data): s.hr.data for s in segs}
    with pytest.warns(UserWarning, match="excluded"):
        report = M.evaluate(lambda lr: truth[id(lr)], segs)
    assert report.mean("mse") == 0 and report.mean("mad") == 0
    assert abs(report.mean("cos") - 1) < 1e-15
    assert report.snr_infinite == 3 and math.isnan(report.mean("snr"))
    assert json.loads(report.to_json())["summary"]["snr"]["mean"] is None


def test_single_segment_std_is_zero(rng):
    report = M.evaluate(M.li_predictor(10), [seg("a", rng.normal(size=(2, 5)), rng.normal(size=(2, 50)))])
    assert all(report.std(k) == 0.0 for k in M.METRICS)


def test_li_aggregation_by_hand(rng):
    segs = [seg(f"r{i}", rng.normal(size=(3, 20)), rng.normal(size=(3, 200))) for i in range(6)]
    report = M.evaluate(M.li_predictor(10), segs, method="li", threads=3)
    for k, fn in (("mse", mse_loop), ("cos", cos_loop), ("snr", snr_loop), ("mad", mad_loop)):
        vals = [fn(linear_interp_upsample_array(s.lr.data, 10).ravel(), s.hr.data.ravel()) for s in segs]
        mean = sum(vals) / len(vals)
        std = math.sqrt(sum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
        assert abs(report.mean(k) - mean) < 1e-12
        assert abs(report.std(k) - std) < 1e-12
        assert np.max(np.abs(report.values[k] - vals)) < 1e-12


def test_csv_json_agree(rng):
    segs = [seg(f"r{i}", rng.normal(size=(2, 4)), rng.normal(size=(2, 40))) for i in range(4)]
    report = M.evaluate(M.li_predictor(10), segs, method="li")
    from_csv = M.report_from_csv(report.to_csv())
    from_json = json.loads(report.to_json())
    assert from_csv["segments"] == from_json["segments"]
    for k in M.METRICS:
        assert from_csv["summary"][k] == from_json["summary"][k]


def test_evaluate_errors(rng):
    with pytest.raises(ValueError, match="at least one"):
        M.evaluate(M.li_predictor(10), [])
    with pytest.raises(ValueError, match="shape"):
        M.evaluate(M.li_predictor(5), [seg("bad", rng.normal(size=(2, 4)), rng.normal(size=(2, 40)))])


def test_comparison_table(rng):
    segs = [seg(f"r{i}", rng.normal(size=(2, 4)), rng.normal(size=(2, 40))) for i in range(2)]
    table = M.comparison_table([M.evaluate(M.li_predictor(10), segs, method="LI")])
    assert table.splitlines()[2].startswith("| LI |")


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=20))
def test_aggregation_recomputable(vals):
    n = len(vals)
    report = M.MetricsReport("x", [str(i) for i in range(n)],
                             {"mse": vals, "cos": vals, "snr": vals, "mad": vals})
    assert report.mean("mse") == float(np.mean(vals))
    assert report.std("mad") == float(np.std(vals, ddof=1))
