from .checkpoint import (PretrainedLoad, load_checkpoint_config, load_pretrained,
                         save_checkpoint)
from .gradcheck import GradCheckReport, default_suite, grad_check, run_suite
from .loops import (EpochRecord, TrainConfig, TrainReport, patient_probability,
                    predict_patients, train_classifier, train_segmenter)
from .losses import TrainError, cls_loss, seg_loss
from .optim import OptimizerConfig, sgd_step

__all__ = [
    "EpochRecord", "GradCheckReport", "OptimizerConfig", "PretrainedLoad",
    "TrainConfig", "TrainError", "TrainReport", "cls_loss", "default_suite",
    "grad_check", "load_checkpoint_config", "load_pretrained",
    "patient_probability", "predict_patients", "run_suite", "save_checkpoint",
    "seg_loss", "sgd_step", "train_classifier", "train_segmenter"
]
