"""Matching, AP, NDS-lite, and success-rate metrics against hand-built
fixtures."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ovoda.errors import EmptyNovelSet, ValidationError
from ovoda.evaluation import (
    DetObject,
    GtObject,
    MatchConfig,
    GtAttributeItem,
    PredictedEvent,
    ap_novel,
    average_precision,
    evaluate_detections,
    match,
    nds_lite,
    sr_ad_od,
    sr_ad_only,
    tp_error_stats,
)
from ovoda.geometry import Box3D


def gt(cls, x, frame=("s", 0), y=0.0):
    return GtObject(frame, cls, Box3D((x, y, 0), (2, 1, 1)))


def det(cls, x, score, frame=("s", 0), y=0.0):
    return DetObject(frame, cls, Box3D((x, y, 0), (2, 1, 1)), score)


class TestMatch:
    def test_exact_copies_all_tp(self):
        gts = [gt("car", 0), gt("car", 10)]
        dets = [det("car", 0, 0.9), det("car", 10, 0.8)]
        res = match(gts, dets, "center_distance", 2.0)
        assert len(res.tp_pairs) == 2
        assert res.fp_detections == [] and res.fn_ground_truths == []

    def test_empty_detections_all_fn(self):
        gts = [gt("car", 0), gt("car", 10)]
        res = match(gts, [], "center_distance", 2.0)
        assert res.tp_pairs == [] and res.fn_ground_truths == [0, 1]

    def test_two_dets_one_gt_greedy(self):
        gts = [gt("car", 0)]
        dets = [det("car", 0.2, 0.6), det("car", 0.1, 0.9)]
        res = match(gts, dets, "center_distance", 2.0)
        # Higher score claims the ground truth; the other is a false positive.
        assert res.tp_pairs == [(1, 0)]
        assert res.fp_detections == [0]

    def test_class_must_agree(self):
        gts = [gt("car", 0)]
        dets = [det("bus", 0, 0.9)]
        res = match(gts, dets, "center_distance", 2.0)
        assert res.fp_detections == [0] and res.fn_ground_truths == [0]

    def test_iou_matcher(self):
        gts = [gt("car", 0)]
        dets = [det("car", 0.1, 0.9)]
        res = match(gts, dets, "iou", 0.5)
        assert res.tp_pairs == [(0, 0)]


class TestAveragePrecision:
    def test_perfect_detector(self):
        flags = [(0.9, True), (0.8, True)]
        assert average_precision(flags, 2) == pytest.approx(1.0)

    def test_all_wrong(self):
        flags = [(0.9, False), (0.8, False)]
        assert average_precision(flags, 2) == 0.0

    def test_one_tp_one_fp_two_gt(self):
        # TP at high score, FP at lower score: precision envelope is 1.0 up
        # to recall 0.5 and zero beyond, integrating to exactly 0.5.
        flags = [(0.9, True), (0.5, False)]
        assert average_precision(flags, 2) == pytest.approx(0.5, abs=0)

    def test_adding_top_tp_never_decreases(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            flags = [(float(rng.uniform(0, 0.8)), bool(rng.uniform() < 0.5)) for _ in range(10)]
            n_gt = 12
            base = average_precision(flags, n_gt)
            better = average_precision([(0.99, True)] + flags, n_gt)
            assert better >= base - 1e-12

    def test_bottom_fp_never_increases(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            flags = [(float(rng.uniform(0.2, 1.0)), bool(rng.uniform() < 0.6)) for _ in range(10)]
            n_gt = 6
            base = average_precision(flags, n_gt)
            worse = average_precision(flags + [(0.01, False)], n_gt)
            assert worse <= base + 1e-12

    def test_requires_ground_truth(self):
        with pytest.raises(ValidationError):
            average_precision([(0.5, True)], 0)


class TestApNovel:
    def test_all_classes_novel_equals_mean(self):
        table = {"a": 0.2, "b": 0.6}
        assert ap_novel(table, ["a", "b"]) == pytest.approx(0.4)

    def test_single_novel(self):
        assert ap_novel({"a": 0.3, "b": 0.9}, ["b"]) == pytest.approx(0.9)

    def test_two_novel_arithmetic(self):
        assert ap_novel({"x": 0.2, "y": 0.4}, ["x", "y"]) == pytest.approx(0.3)

    def test_empty_raises(self):
        with pytest.raises(EmptyNovelSet):
            ap_novel({"a": 0.5}, [])


class TestNdsLite:
    def test_perfect(self):
        assert nds_lite(1.0, {"ate": 0.0, "ase": 0.0, "aoe": 0.0}) == pytest.approx(1.0)

    def test_zero(self):
        assert nds_lite(0.0, {"ate": 1.5, "ase": 1.0, "aoe": 2.0}) == 0.0

    def test_mid_fixture(self):
        # (5 * 0.5 + 3 * (1 - 0.5)) / 8 = 0.5 exactly.
        got = nds_lite(0.5, {"ate": 0.5, "ase": 0.5, "aoe": 0.5})
        assert got == pytest.approx(0.5, abs=0)

    def test_tp_error_stats_no_pairs(self):
        assert tp_error_stats([]) == {"ate": 1.0, "ase": 1.0, "aoe": 1.0}

    def test_tp_error_stats_values(self):
        d = DetObject(("s", 0), "car", Box3D((1.0, 0, 0), (2, 1, 1), 0.1), 0.9)
        g = GtObject(("s", 0), "car", Box3D((0.0, 0, 0), (2, 1, 1), 0.0))
        stats = tp_error_stats([(d, g)])
        assert stats["ate"] == pytest.approx(1.0)
        assert stats["ase"] == pytest.approx(0.0, abs=1e-12)
        assert stats["aoe"] == pytest.approx(0.1)


def item(kind, keys, classes, attr, x=0.0, frame=0):
    return GtAttributeItem(kind, "s", frame, keys, classes, attr, Box3D((x, 0, 0), (2, 1, 1)))


class TestSuccessRates:
    def test_ad_only_all_correct(self):
        items = [item("nonspatial", ("a",), ("car",), "parked")]
        preds = {items[0].key: "parked"}
        assert sr_ad_only(items, preds) == 1.0

    def test_ad_only_none_predicted(self):
        items = [item("nonspatial", ("a",), ("car",), "parked")]
        assert sr_ad_only(items, {}) == 0.0

    def test_ad_only_three_of_four(self):
        items = [
            item("nonspatial", (k,), ("car",), "parked") for k in ("a", "b", "c", "d")
        ]
        preds = {it.key: "parked" for it in items[:3]}
        preds[items[3].key] = "moving"
        assert sr_ad_only(items, preds) == pytest.approx(0.75)

    def test_ad_od_requires_all_three_conditions(self):
        it = item("nonspatial", ("a",), ("car",), "parked")
        good = PredictedEvent("nonspatial", "s", 0, ("car",), "parked", it.box, 0.9)
        wrong_attr = PredictedEvent("nonspatial", "s", 0, ("car",), "moving", it.box, 0.9)
        wrong_class = PredictedEvent("nonspatial", "s", 0, ("bus",), "parked", it.box, 0.9)
        far = PredictedEvent(
            "nonspatial", "s", 0, ("car",), "parked", Box3D((50, 0, 0), (2, 1, 1)), 0.9
        )
        assert sr_ad_od([it], [good]) == 1.0
        assert sr_ad_od([it], [wrong_attr]) == 0.0
        assert sr_ad_od([it], [wrong_class]) == 0.0
        assert sr_ad_od([it], [far]) == 0.0

    def test_ad_od_never_exceeds_ad_only(self):
        rng = np.random.default_rng(7)
        attrs = ["parked", "moving", "stopped"]
        items, events, preds = [], [], {}
        for k in range(40):
            true_attr = attrs[int(rng.integers(0, 3))]
            it = item("nonspatial", (f"i{k}",), ("car",), true_attr, x=4.0 * k)
            items.append(it)
            pred_attr = attrs[int(rng.integers(0, 3))]
            preds[it.key] = pred_attr
            # The conditioned pipeline sometimes also misses localization.
            offset = 3.0 if rng.uniform() < 0.3 else 0.0
            events.append(
                PredictedEvent(
                    "nonspatial", "s", 0, ("car",), pred_attr,
                    Box3D((4.0 * k + offset, 0, 0), (2, 1, 1)), 0.9,
                )
            )
        assert sr_ad_od(items, events) <= sr_ad_only(items, preds) + 1e-12


class TestEvaluateDetections:
    def _scene(self):
        gts = [gt("car", 0), gt("car", 10), gt("bus", 20)]
        dets = [
            det("car", 0.1, 0.95),
            det("car", 10.2, 0.9),
            det("bus", 20.0, 0.85),
            det("car", 40.0, 0.2),  # false positive
        ]
        return gts, dets

    def test_full_report(self):
        gts, dets = self._scene()
        report = evaluate_detections(gts, dets, MatchConfig(), novel_classes=["bus"])
        assert report.per_class_ap["bus"] == pytest.approx(1.0)
        assert report.map_value == pytest.approx(1.0)
        assert report.ap_novel_value == pytest.approx(1.0)
        assert 0.0 <= report.nds_lite_value <= 1.0
        assert report.counts["n_ground_truth"] == 3

    def test_duplicated_dataset_same_map(self):
        gts, dets = self._scene()
        gts2 = gts + [GtObject(("s", 1), g.class_name, g.box) for g in gts]
        dets2 = dets + [DetObject(("s", 1), d.class_name, d.box, d.score) for d in dets]
        r1 = evaluate_detections(gts, dets, MatchConfig())
        r2 = evaluate_detections(gts2, dets2, MatchConfig())
        assert r2.map_value == pytest.approx(r1.map_value, abs=1e-9)

    def test_skipped_classes_recorded(self):
        gts = [gt("car", 0)]
        dets = [det("car", 0, 0.9), det("unicycle", 5, 0.5)]
        report = evaluate_detections(gts, dets, MatchConfig())
        assert report.skipped_classes == ["unicycle"]

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            MatchConfig(kind="plane")
        with pytest.raises(ValidationError):
            MatchConfig(thresholds=(4.0, 2.0))
