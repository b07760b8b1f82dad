"""Tests for CDFs, dominance, histograms, heatmaps and disagreement diagnostics."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from segdecide.analysis import (
    EmpiricalCdf,
    Heatmap,
    detection_histograms,
    dominates_first_order,
    empirical_cdf,
    mean_cdf_gap,
    miou_histogram,
    nesting_fraction,
    nondetection_heatmaps,
    rule_disagreement,
    write_cdf_csv,
    write_heatmap,
    write_histogram_csv,
)
from segdecide.components import Segment, postprocess
from segdecide.const import HEATMAP_OBJECT_LEVEL, HEATMAP_PIXEL_LEVEL, RULE_BAYES, RULE_ML
from segdecide.exceptions import EmptyInputError, InvariantError, ShapeMismatchError
from segdecide.metrics import SegmentMatch, SegmentScore

from tests.conftest import label_map

EDGES = (10.0, 16.0, 32.0, float("inf"))


def _score(size: int, matched: bool, class_id: int = 1) -> SegmentScore:
    seg = Segment.from_mask(class_id, np.ones((1, size), dtype=bool))
    share = 0.5 if matched else 0.0
    return SegmentScore(seg, matched, share, share, share)


def _match(pred: list[SegmentScore], gt: list[SegmentScore]) -> SegmentMatch:
    return SegmentMatch("img", tuple(pred), tuple(gt))


def test_empirical_cdf_steps():
    cdf = empirical_cdf([1.0, 0.5, 0.2, 0.5])
    assert cdf.count == 4
    assert cdf(0.0) == 0.0
    assert cdf(0.49) == pytest.approx(0.25)
    assert cdf(0.5) == pytest.approx(0.75)
    assert cdf(1.0) == 1.0
    assert cdf.mean == pytest.approx(0.55)


def test_empirical_cdf_matches_counting():
    rng = np.random.default_rng(2)
    values = np.round(rng.random(40), 2)
    cdf = empirical_cdf(values)
    for x in np.linspace(0.0, 1.0, 101):
        assert cdf(x) == pytest.approx(np.count_nonzero(values <= x) / values.size)


@pytest.mark.parametrize("bad", [[], [0.5, 1.2], [-0.1], [np.nan]])
def test_empirical_cdf_rejects_bad_samples(bad):
    with pytest.raises((EmptyInputError, InvariantError)):
        empirical_cdf(bad)


def test_dominance_and_violation():
    low = empirical_cdf([0.1, 0.2])
    high = empirical_cdf([0.5, 0.9])
    result = dominates_first_order(low, high)
    assert result.dominated
    assert result.violation == 0.0
    reverse = dominates_first_order(high, low)
    assert not reverse.dominated
    assert reverse.violation == pytest.approx(1.0)
    assert reverse.holds_within(1.0)
    assert not reverse.holds_within(0.5)


def test_dominance_of_crossing_cdfs():
    first = empirical_cdf([0.0, 0.6])
    second = empirical_cdf([0.3, 0.4])
    result = dominates_first_order(first, second)
    # F2 reaches 1 at 0.4 while F1 is still 0.5.
    assert result.violation == pytest.approx(0.5)
    assert dominates_first_order(first, first).dominated


def test_mean_cdf_gap_is_integral_of_difference():
    first = empirical_cdf([0.1, 0.2, 0.7])
    second = empirical_cdf([0.3, 0.9])
    steps = 100000
    grid = (np.arange(steps) + 0.5) / steps
    integral = float(np.mean(first(grid) - second(grid)))
    assert mean_cdf_gap(first, second) == pytest.approx(integral, abs=1e-4)
    assert mean_cdf_gap(first, second) == pytest.approx(0.6 - 1.0 / 3.0)


def test_detection_histograms_bin_by_size():
    matches = {
        RULE_BAYES: [
            _match(
                [_score(5, False), _score(10, False), _score(20, True), _score(100, False)],
                [_score(12, False), _score(40, True)],
            )
        ],
        RULE_ML: [
            _match(
                [_score(15, False), _score(33, False), _score(33, False)],
                [_score(40, True)],
            )
        ],
    }
    false_hist, missed_hist = detection_histograms(matches, 1, EDGES)
    assert false_hist.counts[RULE_BAYES].tolist() == [1, 0, 1]
    assert false_hist.underflow[RULE_BAYES] == 1
    assert false_hist.counts[RULE_ML].tolist() == [1, 0, 2]
    assert false_hist.ratio == [1.0, None, 0.5]
    assert false_hist.total(RULE_BAYES) == 3
    assert missed_hist.counts[RULE_BAYES].tolist() == [1, 0, 0]
    assert missed_hist.counts[RULE_ML].tolist() == [0, 0, 0]
    assert missed_hist.to_json()["edges"] == [10.0, 16.0, 32.0, "inf"]


def test_detection_histograms_validate_edges():
    matches = {RULE_BAYES: [], RULE_ML: []}
    with pytest.raises(InvariantError):
        detection_histograms(matches, 1, (10.0, 10.0))
    with pytest.raises(InvariantError):
        detection_histograms({RULE_BAYES: []}, 1, EDGES)


def test_nondetection_heatmaps():
    gt = label_map(
        [
            [1, 1, 0, 0],
            [1, 1, 0, 1],
            [0, 0, 0, 1],
        ],
        2,
    )
    gt_set = postprocess(gt, connectivity=8, min_size=1, max_gap=0)
    hit_one_pixel = label_map([[1, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], 2)
    nothing = label_map(np.zeros((3, 4)), 2)
    heatmaps = nondetection_heatmaps(
        [gt_set, gt_set], {RULE_BAYES: [hit_one_pixel, nothing], RULE_ML: [nothing, nothing]}, 1
    )
    pixel, objects = heatmaps[RULE_BAYES]
    assert pixel.kind == HEATMAP_PIXEL_LEVEL
    assert objects.kind == HEATMAP_OBJECT_LEVEL
    assert pixel.counts.tolist() == [[1, 2, 0, 0], [2, 2, 0, 2], [0, 0, 0, 2]]
    # The first block counts as detected in image 0.
    assert objects.counts.tolist() == [[1, 1, 0, 0], [1, 1, 0, 2], [0, 0, 0, 2]]
    assert heatmaps[RULE_ML][1].max_count == 2


def test_pixel_heatmap_counts_post_processed_ground_truth():
    """A GT fragment dropped by the size filter is not counted as missed."""
    gt = label_map([[1, 1, 0, 0], [1, 1, 0, 1]], 2)
    nothing = label_map(np.zeros((2, 4)), 2)
    filtered = postprocess(gt, connectivity=4, min_size=2, max_gap=0)
    pixel, _ = nondetection_heatmaps([filtered], {RULE_ML: [nothing]}, 1)[RULE_ML]
    assert pixel.counts.tolist() == [[1, 1, 0, 0], [1, 1, 0, 0]]
    every_pixel = postprocess(gt, connectivity=4, min_size=1, max_gap=0)
    pixel, _ = nondetection_heatmaps([every_pixel], {RULE_ML: [nothing]}, 1)[RULE_ML]
    assert pixel.counts.tolist() == [[1, 1, 0, 0], [1, 1, 0, 1]]


def test_nondetection_heatmaps_errors():
    with pytest.raises(EmptyInputError):
        nondetection_heatmaps([], {RULE_BAYES: []}, 1)
    gt_set = postprocess(label_map([[1, 0]], 2), min_size=1, max_gap=0)
    with pytest.raises(ShapeMismatchError):
        nondetection_heatmaps([gt_set], {RULE_BAYES: []}, 1)


def test_heatmaps_add_only_when_compatible():
    first = Heatmap(np.ones((2, 2), dtype=np.int64), HEATMAP_PIXEL_LEVEL)
    assert (first + first).max_count == 2
    with pytest.raises(ShapeMismatchError):
        first + Heatmap(np.ones((2, 2), dtype=np.int64), HEATMAP_OBJECT_LEVEL)


def test_rule_disagreement():
    gt = label_map([[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 1, 1]], 2)
    bayes = label_map([[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], 2)
    ml = label_map([[1, 0, 0, 0], [0, 0, 0, 0], [0, 1, 1, 0]], 2)
    stats = rule_disagreement(bayes, ml, gt)
    assert stats.mask.sum() == 3
    assert stats.rate == pytest.approx(3 / 12)
    # (0, 0) is far from the class border; (2, 1) and (2, 2) touch it.
    assert stats.boundary_share == pytest.approx(2 / 3)
    assert stats.switched_to.tolist() == [0, 3]
    assert stats.switched_from.tolist() == [3, 0]
    assert rule_disagreement(bayes, bayes, gt).boundary_share is None


def test_nesting_fraction():
    bayes = label_map([[1, 1, 0, 0, 1], [0, 0, 0, 0, 1]], 2)
    ml = label_map([[1, 1, 1, 0, 1], [0, 0, 0, 0, 0]], 2)
    bayes_set = postprocess(bayes, min_size=1, max_gap=0)
    assert nesting_fraction(bayes_set, ml, 1) == pytest.approx(0.5)
    empty = postprocess(label_map(np.zeros((2, 5)), 2), min_size=1, max_gap=0)
    assert nesting_fraction(empty, ml, 1) is None


def test_miou_histogram():
    histogram = miou_histogram({RULE_BAYES: [0.05, 0.55, 1.0], RULE_ML: [0.15, 0.52, 0.95]}, 10)
    assert histogram.counts[RULE_BAYES].tolist() == [1, 0, 0, 0, 0, 1, 0, 0, 0, 1]
    assert histogram.counts[RULE_ML].tolist() == [0, 1, 0, 0, 0, 1, 0, 0, 0, 1]
    assert histogram.bayes_better_share == pytest.approx(2 / 3)
    with pytest.raises(EmptyInputError):
        miou_histogram({RULE_BAYES: [], RULE_ML: []})
    with pytest.raises(ShapeMismatchError):
        miou_histogram({RULE_BAYES: [0.5], RULE_ML: [0.5, 0.6]})


def test_write_cdf_csv(out_dir: Path):
    path = out_dir / "recall_cdf.csv"
    write_cdf_csv(path, {RULE_BAYES: empirical_cdf([0.5]), RULE_ML: empirical_cdf([0.25, 1.0])})
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["x", "F_bayes", "F_ml"]
    assert rows[1:] == [
        ["0.0", "0.0", "0.0"],
        ["0.25", "0.0", "0.5"],
        ["0.5", "1.0", "0.5"],
        ["1.0", "1.0", "1.0"],
    ]


def test_write_histogram_csv(out_dir: Path):
    matches = {
        RULE_BAYES: [_match([_score(5, False), _score(12, False)], [])],
        RULE_ML: [_match([_score(12, False), _score(13, False), _score(50, False)], [])],
    }
    false_hist, _ = detection_histograms(matches, 1, EDGES)
    path = out_dir / "false.csv"
    write_histogram_csv(path, false_hist)
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows == [
        ["bin_lo", "bin_hi", "bayes", "ml", "ratio"],
        ["-inf", "10.0", "1", "0", ""],
        ["10.0", "16.0", "1", "2", "0.5"],
        ["16.0", "32.0", "0", "0", ""],
        ["32.0", "inf", "0", "1", "0.0"],
        ["inf", "inf", "0", "0", ""],
    ]


def test_write_heatmap(out_dir: Path):
    path = out_dir / "heatmap.pgm"
    write_heatmap(path, Heatmap(np.array([[0, 3], [1, 2]], dtype=np.int64), HEATMAP_PIXEL_LEVEL))
    assert path.read_bytes() == b"P5\n2 2\n3\n" + bytes([0, 3, 1, 2])
    meta = json.loads((out_dir / "heatmap.pgm.meta.json").read_text(encoding="utf-8"))
    assert meta == {"kind": HEATMAP_PIXEL_LEVEL, "max_count": 3, "pgm_max_val": 3}


def test_empty_heatmap_is_written(out_dir: Path):
    path = out_dir / "empty.pgm"
    write_heatmap(path, Heatmap(np.zeros((1, 2), dtype=np.int64), HEATMAP_OBJECT_LEVEL))
    assert path.read_bytes() == b"P5\n2 1\n1\n" + bytes([0, 0])


def test_cdf_is_evaluated_on_arrays():
    cdf = EmpiricalCdf(np.array([0.25, 0.75]))
    assert cdf(np.array([0.0, 0.5, 1.0])).tolist() == [0.0, 0.5, 1.0]
