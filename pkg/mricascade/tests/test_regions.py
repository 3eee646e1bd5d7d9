import numpy as np
import pytest

from mricascade.pipelines import (CandidateRegion, PipelineError, binarize,
                                  extract_candidates)


def test_binarize_threshold_is_inclusive():
    assert binarize(np.full((3, 3), 0.5)).all()
    assert not binarize(np.zeros((3, 3))).any()
    assert binarize(np.array([[0.2, 0.8]]), 0.3).tolist() == [[0, 1]]


@pytest.mark.parametrize("threshold", [0.0, 1.0, 1.5])
def test_binarize_rejects_thresholds_outside_open_interval(threshold):
    with pytest.raises(PipelineError):
        binarize(np.zeros((2, 2)), threshold)


def test_single_blob_gets_a_margin():
    mask = np.zeros((64, 64), np.uint8)
    mask[10:13, 10:13] = 1
    [region] = extract_candidates(mask, slice_index=2)
    assert region.bbox == (6, 6, 16, 16)
    assert region.area == 9
    assert region.slice_index == 2
    assert (region.height, region.width) == (11, 11)


def test_empty_mask_has_no_candidates():
    assert extract_candidates(np.zeros((16, 16), np.uint8), 0) == []


def test_largest_component_wins():
    mask = np.zeros((32, 32), np.uint8)
    mask[2:4, 2:4] = 1  # area 4, top-left
    mask[20:23, 20:23] = 1  # area 9
    [region] = extract_candidates(mask, 0, top_k=1, margin=0)
    assert region.bbox == (20, 20, 22, 22) and region.area == 9

    both = extract_candidates(mask, 0, top_k=5, margin=0)
    assert [r.area for r in both] == [9, 4]


def test_equal_areas_are_ordered_by_position():
    mask = np.zeros((32, 32), np.uint8)
    mask[20:22, 3:5] = 1
    mask[5:7, 25:27] = 1
    mask[5:7, 10:12] = 1
    regions = extract_candidates(mask, 0, top_k=3, margin=0)
    assert [r.bbox[:2] for r in regions] == [(5, 10), (5, 25), (20, 3)]


def test_diagonal_pixels_are_one_component():
    mask = np.eye(5, dtype=np.uint8)
    [region] = extract_candidates(mask, 0, margin=0)
    assert region.area == 5 and region.bbox == (0, 0, 4, 4)


def test_margin_is_clipped_at_the_border():
    mask = np.zeros((10, 10), np.uint8)
    mask[0:2, 8:10] = 1
    [region] = extract_candidates(mask, 0, margin=4)
    assert region.bbox == (0, 4, 5, 9)


def test_invalid_inputs():
    with pytest.raises(PipelineError):
        extract_candidates(np.full((4, 4), 2), 0)
    with pytest.raises(PipelineError):
        extract_candidates(np.zeros((4, 4), np.uint8), 0, top_k=0)
    with pytest.raises(PipelineError):
        CandidateRegion(bbox=(0, 0, 1, 1), area=0, slice_index=0)
