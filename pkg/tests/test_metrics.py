import numpy as np
import pytest
from hypothesis import given, strategies as st

from hsitrack.metrics import (
    MetricCurve, center_error, dp_at, emit_plot, evaluate_boxes, iou, precision_curve,
    read_plot_csv, read_result, success_auc, summarize, write_result,
)


def brute_auc(ious):
    total = 0.0
    for k in range(51):
        t = k / 50
        total += sum(1 for v in ious if v >= t) / len(ious)
    return total / 51


def brute_dp(errors, tau=20.0):
    hits = 0
    for e in errors:
        if e <= tau:
            hits += 1
    return hits / len(errors)


def test_iou_cases():
    assert iou((1, 2, 3, 4), (1, 2, 3, 4)) == 1.0
    assert iou((0, 0, 1, 1), (5, 5, 1, 1)) == 0.0
    assert iou((0, 0, 2, 2), (1, 0, 2, 2)) == pytest.approx(1 / 3, abs=1e-15)
    assert iou((0, 0, 0, 0), (0, 0, 0, 0)) == 0.0


def test_center_error_cases():
    assert center_error((0, 0, 2, 2), (0, 0, 2, 2)) == 0.0
    assert center_error((-1, -1, 2, 2), (2, 3, 2, 2)) == 5.0
    a, b = (1.5, 2, 3, 7), (4, -1, 2, 2)
    assert center_error(a, b) == center_error(b, a)


def test_auc_hand_cases():
    c = success_auc([1.0] * 7)
    assert c.summary == 1.0 and np.all(c.values == 1)
    c = success_auc([0.0, 0.0])
    assert c.values[0] == 1 and not np.any(c.values[1:])
    assert c.summary == pytest.approx(1 / 51, abs=1e-15)
    c = success_auc([0.5])
    assert c.values[:26].all() and not c.values[26:].any()
    assert c.summary == pytest.approx(26 / 51, abs=1e-15)


def test_dp_hand_cases():
    assert dp_at([0, 10, 30]) == pytest.approx(2 / 3)
    assert dp_at([0.0] * 4) == 1.0
    assert dp_at([20.0]) == 1.0     # inclusive boundary


def test_metrics_match_brute_force_on_random_instances():
    r = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(r.integers(1, 40))
        ious = r.choice([r.uniform(size=n), np.round(r.uniform(size=n) * 50) / 50])
        errs = r.choice([r.uniform(0, 60, size=n), np.round(r.uniform(0, 60, size=n))])
        assert abs(success_auc(ious).summary - brute_auc(list(ious))) <= 1e-12
        assert abs(dp_at(errs) - brute_dp(list(errs))) <= 1e-12


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.randoms())
def test_success_curve_monotone_and_order_invariant(ious, rnd):
    c = success_auc(ious)
    assert np.all(np.diff(c.values) <= 0)
    shuffled = list(ious)
    rnd.shuffle(shuffled)
    assert success_auc(shuffled).summary == c.summary


@given(st.lists(st.floats(0, 100), min_size=1, max_size=30), st.randoms())
def test_dp_order_invariant(errs, rnd):
    shuffled = list(errs)
    rnd.shuffle(shuffled)
    assert dp_at(shuffled) == dp_at(errs)


def test_metric_input_errors():
    with pytest.raises(ValueError):
        success_auc([])
    with pytest.raises(ValueError):
        success_auc([1.2])
    with pytest.raises(ValueError):
        dp_at([-1.0])
    with pytest.raises(ValueError):
        MetricCurve([0, 1], [0.5], 0.5)
    with pytest.raises(ValueError):
        evaluate_boxes(np.zeros((2, 4)), np.zeros((3, 4)))


def test_emit_plot_single_curve(tmp_path):
    c = success_auc(np.random.default_rng(0).uniform(size=20))
    csv_path, svg_path = emit_plot({"ours": c}, tmp_path / "success")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "curve,threshold,value" and len(lines) == 52
    t, v = read_plot_csv(csv_path)["ours"]
    assert np.array_equal(v, c.values) and np.array_equal(t, c.thresholds)
    assert svg_path.read_text().startswith("<svg")


def test_emit_plot_needs_curves(tmp_path):
    with pytest.raises(ValueError):
        emit_plot({}, tmp_path / "x")


def test_result_round_trip_and_summary(tmp_path):
    gt = np.array([[0, 0, 10, 10], [5, 5, 10, 10]], dtype=float)
    write_result(tmp_path / "a.json", "a", "VIS", gt)
    doc = read_result(tmp_path / "a.json")
    assert doc["sequence"] == "a" and doc["modality"] == "VIS"
    np.testing.assert_array_equal(doc["boxes"], gt)
    per = {"a": evaluate_boxes(gt, gt), "b": evaluate_boxes(gt + [30, 0, 0, 0], gt)}
    s = summarize(per, {"a": "VIS", "b": "NIR"})
    assert s["modalities"]["VIS"]["auc"] == 1.0 and s["modalities"]["NIR"]["dp20"] == 0.0
    assert s["overall"]["frames"] == 4 and s["overall"]["dp20"] == 0.5
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ValueError):
        read_result(tmp_path / "bad.json")


def test_precision_curve_summary_is_dp20():
    errs = [1.0, 19.5, 20.5, 40.0]
    c = precision_curve(errs)
    assert c.summary == 0.5 and c.thresholds[20] == 20.0 and c.values[20] == 0.5
