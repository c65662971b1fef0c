import csv
import io
import math

import numpy as np
import pytest

from hrrfp.evaluation import (
    CSV_FIELDS,
    ExperimentConfig,
    QueryTruth,
    Workbench,
    calibrate_sigma,
    capacity_sweep,
    capacity_table,
    run_experiment,
    seconds_to_segments,
    top1_hit_rate,
    top1_near_rate,
)

SMALL = dict(tracks=60, segments=59, dim=128, distractors=0, queries=300, seed=3)


def _truths(n):
    return [QueryTruth(f"t{i}", 10) for i in range(n)]


def test_rates_basic():
    t = _truths(4)
    assert top1_hit_rate([(f"t{i}", 10) for i in range(4)], t) == 100.0
    assert top1_hit_rate([("x", 10)] * 4, t) == 0.0
    assert top1_hit_rate([("t0", 10), ("t1", 10), ("t2", 10), ("t3", 11)], t) == 75.0


def test_near_semantics():
    t = _truths(3)
    preds = [("t0", 11), ("t1", 8), ("x", 10)]
    assert top1_hit_rate(preds, t) == 0.0
    assert top1_near_rate(preds, t) == pytest.approx(100 / 3)
    assert top1_near_rate(preds, t, tol_segments=2) == pytest.approx(200 / 3)


def test_missing_prediction_is_a_miss():
    assert top1_near_rate([None, ("t1", 10)], _truths(2)) == 50.0


def test_length_mismatch():
    with pytest.raises(ValueError, match="2 predictions for 3"):
        top1_hit_rate([("a", 1)] * 2, _truths(3))


def test_seconds_mapping():
    assert [seconds_to_segments(s) for s in (1, 2, 3, 5, 10)] == [1, 3, 5, 9, 19]
    with pytest.raises(ValueError):
        seconds_to_segments(0.5)


def test_noise_free_no_aggregation_is_perfect():
    bench = Workbench(ExperimentConfig(**{**SMALL, "distractors": 200}))
    assert bench.cell("none", 1, 1, sigma=0.0).top1_exact == 100.0


@pytest.fixture(scope="module")
def small_report():
    cfg = ExperimentConfig(**SMALL, sigma=1.0, query_lengths=(1, 2, 3))
    return run_experiment(cfg)


def test_report_shape_and_bounds(small_report):
    cells = small_report.cells
    assert len(cells) == (1 + 3 * 2) * 3
    for c in cells:
        if c.absent:
            continue
        assert 0.0 <= c.top1_exact <= c.top1_near <= 100.0
        assert c.queries == 300


def test_hrr_short_query_absent(small_report):
    c = small_report.cell("hrr", 4, 2)
    assert c.absent and "shorter than M=4" in c.reason
    assert not small_report.cell("hrr", 4, 1).absent
    assert not small_report.cell("hrr", 4, 3).absent


def test_storage_accounting(small_report):
    for c in small_report.cells:
        assert c.storage_bytes_per_track == math.ceil(59 / c.M) * 128 * 4


def test_csv_schema(small_report):
    text = small_report.to_csv()
    assert text.startswith("# config: {")
    rows = list(csv.reader(io.StringIO(text.split("\n", 1)[1])))
    assert rows[0] == CSV_FIELDS
    assert len(rows) == 1 + len(small_report.cells)
    assert all(r[-1] == "" for r in rows[1:])
    assert all(r[-1] != "" for r in list(csv.reader(io.StringIO(small_report.to_csv(timing=True).split("\n", 1)[1])))[1:])


def test_table_layout(small_report):
    table = small_report.to_table()
    assert "1s->1, 2s->3, 3s->5" in table
    for label in ("none", "summation", "decimation", "hrr"):
        assert label in table
    assert "n/a" in table


def test_rerun_identical(small_report):
    again = run_experiment(ExperimentConfig(**SMALL, sigma=1.0, query_lengths=(1, 2, 3)))
    assert again.to_csv() == small_report.to_csv()


def test_queries_shared_across_methods():
    bench = Workbench(ExperimentConfig(**SMALL))
    a, ta = bench.queries(3, 0.7, 50)
    bench.database("hrr", 2)
    b, tb = bench.queries(3, 0.7, 50)
    assert np.array_equal(a, b) and ta == tb
    assert all(1 <= t.segment <= 59 - 3 + 1 for t in ta)


def test_starts_not_block_aligned():
    _, truths = Workbench(ExperimentConfig(**SMALL)).queries(5, 0.5, 400)
    assert {t.segment % 2 for t in truths} == {0, 1}


def test_exact_rate_non_increasing_in_sigma():
    cfg = ExperimentConfig(**{**SMALL, "queries": 2000, "distractors": 100})
    bench = Workbench(cfg)
    sigmas = (0.5, 1.0, 1.5, 2.0, 3.0)
    for method, M in (("hrr", 2), ("decimation", 2)):
        rates = [bench.cell(method, M, 1, s).top1_exact for s in sigmas]
        assert all(b <= a + 1.0 for a, b in zip(rates, rates[1:])), (method, rates)


def test_calibration_lands_in_band():
    bench = Workbench(ExperimentConfig(**{**SMALL, "distractors": 100}))
    sigma = calibrate_sigma(bench, (60, 80), queries=400)
    rate = bench.cell("none", 1, 1, sigma, 400).top1_exact
    assert 60 <= rate <= 80


def test_capacity_sweep_small():
    base = ExperimentConfig(**{**SMALL, "queries": 200})
    res = capacity_sweep(base, (64, 256), (2, 4, 8), sigma=0.5, threshold=50)
    assert set(res) == {64, 256}
    assert res[256]["max_M"] >= res[64]["max_M"]
    assert "max M" in capacity_table(res, 50, 0.5)


@pytest.mark.parametrize("raw,err", [({"colour": "red"}, "unknown config key"), ({"tracks": "x"}, "cannot parse"),
                                     ({"unitary": "maybe"}, "boolean"), ({"index": "hnsw"}, "index")])
def test_config_validation(raw, err):
    with pytest.raises(ValueError, match=err):
        ExperimentConfig.from_mapping(raw)


def test_config_from_strings():
    cfg = ExperimentConfig.from_mapping({"block-sizes": "2,4,8", "sigma": "1.5", "methods": "hrr,sum", "unitary": "no"})
    assert cfg.block_sizes == (2, 4, 8) and cfg.sigma == 1.5 and cfg.methods == ("hrr", "sum")
    assert cfg.unitary is False
