"""EEG-Inception: a numpy implementation of the EEG-Inception motor-imagery
classifier, its noise-swap augmentation, and the tooling to train and
evaluate it."""

__version__ = "0.1.0"

from .data import (SynthConfig, Trial, TrialSet, filter_rejected, load_trialset, save_trialset,
                   synth_generate, train_test_split, window_split)
from .dsp import augment, design_butterworth_highpass, extract_noise, sos_filter
from .metrics import MetricsReport, cohen_kappa, cross_subject_stats, f1_recall, roc_auc
from .model import EegInceptionModel, ModelConfig, build_model, count_params, load_model, save_model
from .training import TrainConfig, evaluate, train

__all__ = [
    "EegInceptionModel", "MetricsReport", "ModelConfig", "SynthConfig", "TrainConfig", "Trial",
    "TrialSet", "augment", "build_model", "cohen_kappa", "count_params", "cross_subject_stats",
    "design_butterworth_highpass", "evaluate", "extract_noise", "f1_recall", "filter_rejected",
    "load_model", "load_trialset", "roc_auc", "save_model", "save_trialset", "sos_filter",
    "synth_generate", "train", "train_test_split", "window_split",
]
