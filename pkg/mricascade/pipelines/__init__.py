from .cascade import (PipelineConfigs, PipelineKind, PipelineResult, PipelineRun,
                      PretrainedConfig, RoiConfig, RoiSequence, SegmenterStage,
                      crop_roi_sequence, execute_pipeline, initial_params,
                      rois_from_masks, run_pipeline, segment_slices)
from .overlay import OverlayImage, render_overlay, tinted_pixels, write_overlay
from .regions import CandidateRegion, PipelineError, binarize, extract_candidates
from .report import (ComparisonTable, SweepCell, SweepReport, compare, plot_sweep,
                     sweep_training_fraction)
