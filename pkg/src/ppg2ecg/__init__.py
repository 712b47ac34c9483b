"""PPG-to-ECG reconstruction with hierarchical shifted-patch attention, plus
a multimodal cardiovascular classifier, on a self-contained numpy substrate."""

from .autodiff import Tensor, gradient_check, l1_loss, scaled_dot_attention
from .classifier import ClassifierConfig, MultimodalModel, classify, train_classifier
from .estimators import CvdClassifier, EcgReconstructor, SignalWindower
from .metrics import confusion_matrix, rmse
from .model import (
    ReconstructorModel,
    TrainSchedule,
    extract_attention,
    reconstruct,
    train_reconstructor,
)
from .optim import ParamStore, adam_step
from .patches import StageConfig
from .preprocessing import RawRecord, SignalWindow
from .synth import SynthParams, make_classes, make_dataset, synth_pair

__version__ = "0.1.0"

__all__ = [
    "ClassifierConfig",
    "CvdClassifier",
    "EcgReconstructor",
    "MultimodalModel",
    "ParamStore",
    "RawRecord",
    "ReconstructorModel",
    "SignalWindow",
    "SignalWindower",
    "StageConfig",
    "SynthParams",
    "Tensor",
    "TrainSchedule",
    "adam_step",
    "classify",
    "confusion_matrix",
    "extract_attention",
    "gradient_check",
    "l1_loss",
    "make_classes",
    "make_dataset",
    "reconstruct",
    "rmse",
    "scaled_dot_attention",
    "synth_pair",
    "train_classifier",
    "train_reconstructor",
    "__version__",
]
