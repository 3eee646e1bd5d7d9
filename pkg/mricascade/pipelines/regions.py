from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..dataio import MaskSlice


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class CandidateRegion:
    # inclusive pixel bounds: (row_min, col_min, row_max, col_max)
    bbox: tuple[int, int, int, int]
    area: int
    slice_index: int

    def __post_init__(self):
        row_min, col_min, row_max, col_max = self.bbox
        if row_min < 0 or col_min < 0 or row_max < row_min or col_max < col_min:
            raise PipelineError(f"malformed bounding box {self.bbox}")
        if self.area < 1:
            raise PipelineError("candidate area must be >= 1")

    @property
    def height(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def width(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1


def binarize(prob_map, threshold: float = 0.5) -> MaskSlice:
    if not 0.0 < threshold < 1.0:
        raise PipelineError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(prob_map) >= threshold).astype(np.uint8)


def extract_candidates(mask: MaskSlice,
                       slice_index: int,
                       top_k: int = 1,
                       margin: int = 4) -> list[CandidateRegion]:
    """8-connected components, largest first, bboxes grown by ``margin``.

    Ties in area are broken by the top-left corner of the unexpanded box.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
        raise PipelineError("extract_candidates needs a binary 2-D mask")
    if top_k < 1:
        raise PipelineError(f"top_k must be >= 1, got {top_k}")
    count, _, stats, _ = cv2.connectedComponentsWithStats(
        mask.astype(np.uint8), connectivity=8)
    components = []
    for label in range(1, count):  # 0 is the background
        col, row, width, height, area = (int(v) for v in stats[label])
        components.append((-area, row, col, row + height - 1, col + width - 1))
    components.sort()

    rows, cols = mask.shape
    regions = []
    for neg_area, row_min, col_min, row_max, col_max in components[:top_k]:
        bbox = (max(row_min - margin, 0), max(col_min - margin, 0),
                min(row_max + margin, rows - 1), min(col_max + margin, cols - 1))
        regions.append(
            CandidateRegion(bbox=bbox, area=-neg_area, slice_index=slice_index))
    return regions
