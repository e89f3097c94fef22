import json

import jsonschema
import numpy as np
import pytest

from helpers import (oracle_ap, oracle_fabrication, oracle_mislabel, oracle_mr, oracle_ssim, oracle_vanishing,
                     random_ap_instance, random_asr_instance)

from detattack.boxes import BoundingBox, DetectedObject, GroundTruthObject
from detattack.errors import UndefinedMetricError, ValidationError
from detattack.metrics import (DistortionRecord, TimingRecord, asr_fabrication, asr_mislabeling, asr_vanishing,
                               average_precision, distortion, evaluate_map, misdetection_rate, ssim)
from detattack.metrics.report import REPORT_SCHEMA, EvaluationReport, objects_vs_threshold, strip_timing


def to_det(corners, cls, conf=0.9):
    return DetectedObject(BoundingBox.from_corners(*corners), cls, conf)


def to_gt(corners, cls):
    return GroundTruthObject(BoundingBox.from_corners(*corners), cls)


def library_inputs(dets, gt):
    flat = [(to_det(box, c, conf), img) for box, c, conf, img in dets]
    truth = {img: [to_gt(b, c) for b, c in objs] for img, objs in gt.items()}
    return flat, truth


def test_ap_perfect_detector():
    gt = {0: [to_gt((0, 0, 10, 10), 0)], 1: [to_gt((5, 5, 20, 20), 0), to_gt((30, 30, 40, 40), 0)]}
    dets = [(to_det(g.box.corners, 0, 0.9 - 0.1 * k), img) for k, (img, g) in
            enumerate((i, g) for i, gs in gt.items() for g in gs)]
    assert average_precision(dets, gt, 0) == 1.0


def test_ap_no_detections_is_zero():
    gt = {0: [to_gt((0, 0, 10, 10), 0)]}
    assert average_precision([], gt, 0) == 0.0


def test_ap_undefined_class_excluded():
    gt = [[to_gt((0, 0, 10, 10), 0)]]
    dets = [[to_det((0, 0, 10, 10), 0)]]
    per_class, m = evaluate_map(dets, gt, 3)
    assert per_class[1] is None and per_class[2] is None
    assert m == 1.0


def test_ap_duplicate_is_false_positive():
    gt = {0: [to_gt((0, 0, 10, 10), 0)]}
    dets = [(to_det((0, 0, 10, 10), 0, 0.9), 0), (to_det((0, 0, 10, 10), 0, 0.8), 0)]
    # precision at full recall is 1.0 (first detection), so AP stays 1
    assert average_precision(dets, gt, 0) == 1.0
    dets = [(to_det((0, 0, 10, 10), 0, 0.8), 0), (to_det((50, 50, 60, 60), 0, 0.9), 0)]
    # the miss ranks first: precision 0.5 at every recall level
    assert average_precision(dets, gt, 0) == pytest.approx(0.5, abs=1e-12)


def test_ap_crafted_four_by_three():
    gt = {0: [to_gt((0, 0, 10, 10), 0), to_gt((20, 0, 30, 10), 0), to_gt((0, 20, 10, 30), 0)]}
    raw = [((0, 0, 10, 10), 0, 0.9, 0), ((40, 40, 50, 50), 0, 0.8, 0), ((20, 0, 30, 10), 0, 0.7, 0),
           ((0, 20, 10, 30), 0, 0.6, 0)]
    flat, truth = library_inputs(raw, {0: [((0, 0, 10, 10), 0), ((20, 0, 30, 10), 0), ((0, 20, 10, 30), 0)]})
    expected = oracle_ap(raw, {0: [((0, 0, 10, 10), 0), ((20, 0, 30, 10), 0), ((0, 20, 10, 30), 0)]}, 0)
    # levels 0..0.3 -> 1.0, 0.4..1.0 -> 0.75
    assert expected == pytest.approx((4 * 1.0 + 7 * 0.75) / 11, abs=1e-12)
    assert average_precision(flat, truth, 0) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_ap_matches_exhaustive_threshold_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    dets, gt = random_ap_instance(rng)
    flat, truth = library_inputs(dets, gt)
    for c in range(2):
        want = oracle_ap(dets, gt, c)
        got = average_precision(flat, truth, c)
        if want is None:
            assert got is None
        else:
            assert abs(got - want) <= 1e-9


def test_all_points_interpolation_bounds():
    gt = {0: [to_gt((0, 0, 10, 10), 0), to_gt((20, 0, 30, 10), 0)]}
    dets = [(to_det((0, 0, 10, 10), 0, 0.9), 0), (to_det((40, 40, 50, 50), 0, 0.8), 0),
            (to_det((20, 0, 30, 10), 0, 0.7), 0)]
    # recall 0.5 at precision 1, then recall 1 at precision 2/3
    assert average_precision(dets, gt, 0, interpolation="all") == pytest.approx(0.5 + 0.5 * 2 / 3)


def as_objects(instance):
    return [[to_det(box, c) for box, c in img] for img in instance]


@pytest.mark.parametrize("seed", range(50))
def test_asr_and_mr_match_enumeration(seed):
    rng = np.random.default_rng(5000 + seed)
    benign, adv = random_asr_instance(rng)
    b, a = as_objects(benign), as_objects(adv)
    target = {0: 1, 1: 2, 2: 0}
    assert asr_vanishing(b, a, 0.5) == oracle_vanishing(benign, adv, 0.5)
    assert asr_fabrication(b, a) == oracle_fabrication(benign, adv)
    assert asr_mislabeling(b, a, target, 0.5) == oracle_mislabel(benign, adv, target, 0.5)
    assert misdetection_rate(b, a, 0.5) == oracle_mr(benign, adv, 0.5)
    assert misdetection_rate(b, a, 0.5) >= asr_mislabeling(b, a, target, 0.5)


def simple_sets():
    return [[to_det((0, 0, 10, 10), 0), to_det((20, 20, 30, 30), 1)], [to_det((5, 5, 15, 15), 2)], []]


def test_asr_trivial_cases():
    b = simple_sets()
    empty = [[] for _ in b]
    assert asr_vanishing(b, b) == 0.0
    assert asr_vanishing(b, empty) == 1.0
    assert asr_fabrication(b, b) == 0.0
    more = [img + [to_det((40, 40, 50, 50), 0)] for img in b]
    assert asr_fabrication(b, more) == 1.0
    target = {0: 1, 1: 2, 2: 0}
    relabelled = [[DetectedObject(o.box, target[o.class_id], o.confidence) for o in img] for img in b]
    assert asr_mislabeling(b, relabelled, target) == 1.0
    assert asr_mislabeling(b, b, target) == 0.0
    assert misdetection_rate(b, relabelled) == 1.0
    assert misdetection_rate(b, b) == 0.0


def test_asr_fabrication_counts():
    def n(k):
        return [to_det((i * 12, 0, i * 12 + 10, 10), 0) for i in range(k)]

    assert asr_fabrication([n(2), n(2), n(0)], [n(3), n(2), n(5)]) == pytest.approx(2 / 3)


def test_asr_undefined_without_benign_objects():
    with pytest.raises(UndefinedMetricError):
        asr_vanishing([[], []], [[], []])
    with pytest.raises(UndefinedMetricError):
        asr_fabrication([], [])


def test_per_object_targets():
    b = [[to_det((0, 0, 10, 10), 0), to_det((20, 20, 30, 30), 0)]]
    a = [[to_det((0, 0, 10, 10), 1), to_det((20, 20, 30, 30), 2)]]
    assert asr_mislabeling(b, a, [[1, 1]]) == 0.5
    with pytest.raises(ValueError):
        asr_mislabeling(b, a, [[1]])


@pytest.mark.parametrize("seed", range(20))
def test_ssim_matches_direct_formula(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (16, 12, 3))
    b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.5), a.shape), 0, 1) if seed % 2 else rng.uniform(0, 1, a.shape)
    assert abs(ssim(a, b) - oracle_ssim(a, b)) <= 1e-6
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-9
    assert -1.0 <= ssim(a, b) <= 1.0


def test_ssim_identity_and_range():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (8, 8, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert ssim(x, 1.0 - x) < 0


def test_distortion_zero_record():
    x = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    assert distortion(x, x) == DistortionRecord(0.0, 0.0, 0.0, 1.0)


def test_distortion_half_pixels_shifted():
    x = np.full((8, 8, 3), 100 / 255)
    y = x.copy()
    y[:4] += 8 / 255
    d = distortion(x, y)
    assert d.l0_fraction == 0.5
    assert d.linf == pytest.approx(8 / 255, abs=1e-12)
    assert d.l2_per_pixel == pytest.approx(np.sqrt(32 * 3) * 8 / 255 / 64)


def test_distortion_ignores_subquantum_noise():
    x = np.full((4, 4, 3), 0.5)
    assert distortion(x, x + 1e-12).l0_fraction == 0.0


def test_distortion_shape_mismatch():
    with pytest.raises(ValidationError):
        distortion(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def sample_report():
    return EvaluationReport("tog-vanishing", "one-phase-conv3", 2, {0: 0.1, 1: None, 2: 0.3}, 0.2,
                            {0: 0.9, 1: None, 2: 0.7}, 0.8, DistortionRecord(0.03, 1e-3, 0.9, 0.95),
                            TimingRecord(0.01, 0.5), asr=0.9, class_names=["circle", "square", "triangle"])


def test_report_json_validates():
    r = sample_report()
    data = json.loads(r.to_json())
    jsonschema.validate(data, REPORT_SCHEMA)
    assert data["timing"]["total_time_s"] == pytest.approx(0.51)
    assert "timing" not in strip_timing(data)


def test_report_csv_rows():
    lines = sample_report().to_csv().strip().split("\n")
    assert lines[0].startswith("row,class,benign_ap,adv_ap")
    assert lines[1].split(",")[:4] == ["class", "circle", "90.00", "10.00"]
    assert lines[2].split(",")[2:4] == ["", ""]
    assert lines[-1].split(",")[:4] == ["summary", "all", "80.00", "20.00"]


def test_objects_vs_threshold_monotone(tiny_models):
    models, data = tiny_models
    model = models["one-phase"]
    cands = [model.candidates(x) for x in data.images[:4]]
    curve = objects_vs_threshold(cands, [0.1, 0.3, 0.5, 0.7, 0.9])
    assert all(a >= b for a, b in zip(curve, curve[1:]))
