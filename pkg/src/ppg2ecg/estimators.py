"""Scikit-learn style wrappers so the pipeline composes with the wider
ecosystem: a windowing transformer, the PPG-to-ECG regressor, and the
two-modality classifier. Constructor arguments follow sklearn conventions
(same-named attributes, no work in __init__), so get_params/set_params,
cloning, and pipelines all behave."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin

from .classifier import ClassifierConfig, MultimodalModel, classify, train_classifier
from .errors import InputError
from .metrics import rmse
from .model import ReconstructorModel, TrainSchedule, reconstruct, train_reconstructor
from .patches import StageConfig
from .preprocessing import RawRecord, preprocess_record, windows_to_array
from .validation import check_labels, check_modalities, check_window_pair, check_windows


class SignalWindower(BaseEstimator, TransformerMixin):
    """Raw recordings -> normalized 512-sample windows.

    transform accepts a 1-D signal, an (n_records, length) matrix, a list of
    1-D signals, or a list of RawRecords; output stacks every emitted window.
    """

    def __init__(self, sample_rate_hz=128.0, channel="ppg", band=None):
        self.sample_rate_hz = sample_rate_hz
        self.channel = channel
        self.band = band

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        records = self._as_records(X)
        windows = []
        for rec in records:
            windows.extend(preprocess_record(rec, band=self.band))
        if not windows:
            raise InputError("no window fits: every recording is shorter than 4 s at 128 Hz")
        return windows_to_array(windows)

    def _as_records(self, X):
        if isinstance(X, RawRecord):
            return [X]
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], RawRecord):
            return list(X)
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise InputError(f"expected 1-D or 2-D signal data, got shape {arr.shape}")
        return [
            RawRecord(
                samples=row,
                sample_rate_hz=self.sample_rate_hz,
                channel=self.channel,
                subject_id=f"r{i}",
            )
            for i, row in enumerate(arr)
        ]


class EcgReconstructor(BaseEstimator, RegressorMixin):
    """Hierarchical shifted-patch regressor from PPG windows to ECG windows.

    fit(X, y) takes aligned (n, 512) arrays; predict(X) returns (n, 512)
    estimates. fixed_patch switches to the single-stage unshifted baseline.
    """

    def __init__(
        self,
        d_model=64,
        heads=4,
        depths=(2, 2, 6, 6, 2),
        patch_sizes=(32, 64, 128, 256, 512),
        stem_channels=8,
        fixed_patch=None,
        lr=1e-4,
        epochs=50,
        batch_size=8,
        seed=0,
    ):
        self.d_model = d_model
        self.heads = heads
        self.depths = depths
        self.patch_sizes = patch_sizes
        self.stem_channels = stem_channels
        self.fixed_patch = fixed_patch
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _config(self):
        cfg = StageConfig(
            patch_sizes=tuple(self.patch_sizes),
            depths=tuple(self.depths),
            d_model=self.d_model,
            heads=self.heads,
            stem_channels=self.stem_channels,
        )
        if self.fixed_patch is not None:
            cfg = cfg.fixed_patch_variant(self.fixed_patch)
        return cfg

    def fit(self, X, y):
        X, y = check_window_pair(X, y)
        self.config_ = self._config()
        self.model_ = ReconstructorModel.build(self.config_, seed=self.seed)
        sched = TrainSchedule(
            lr=self.lr, epochs=self.epochs, batch_size=self.batch_size, seed=self.seed
        )
        self.loss_trace_ = train_reconstructor(X, y, self.model_, sched)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        self._check_fitted()
        X = check_windows(X)
        return reconstruct(X, self.model_)

    def rmse_score(self, X, y):
        """Mean per-window RMSE (lower is better); complements R^2 score()."""
        X, y = check_window_pair(X, y)
        pred = self.predict(X)
        return float(np.mean([rmse(p, t) for p, t in zip(pred, y)]))

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise InputError("this EcgReconstructor is not fitted yet; call fit first")


class CvdClassifier(BaseEstimator, ClassifierMixin):
    """Multimodal window classifier over (PPG | reconstructed-ECG) rows.

    X rows are either 1024 wide (the two 512-sample modalities side by side)
    or 512 wide (single-modality ablation); y holds arbitrary hashable labels.
    """

    def __init__(
        self,
        d_model=32,
        heads=4,
        depth=4,
        stem_channels=8,
        lr=1e-3,
        epochs=50,
        batch_size=8,
        seed=0,
        weight_classes=False,
    ):
        self.d_model = d_model
        self.heads = heads
        self.depth = depth
        self.stem_channels = stem_channels
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.weight_classes = weight_classes

    def fit(self, X, y):
        inputs = check_modalities(X)
        labels = check_labels(y, inputs[0].shape[0])
        self.classes_ = np.unique(np.asarray(y))
        if self.classes_.shape[0] < 2:
            raise InputError("training needs at least two classes present")
        modalities = ("ppg", "ecg") if len(inputs) == 2 else ("ppg",)
        self.config_ = ClassifierConfig(
            labels=tuple(self.classes_.tolist()),
            modalities=modalities,
            d_model=self.d_model,
            heads=self.heads,
            depth=self.depth,
            stem_channels=self.stem_channels,
        )
        self.model_ = MultimodalModel.build(self.config_, seed=self.seed)
        sched = TrainSchedule(
            lr=self.lr, epochs=self.epochs, batch_size=self.batch_size, seed=self.seed
        )
        self.loss_trace_ = train_classifier(
            inputs, labels, self.model_, sched, weight_classes=self.weight_classes
        )
        self.n_features_in_ = int(np.asarray(X).shape[1])
        return self

    def predict_proba(self, X):
        self._check_fitted()
        inputs = check_modalities(X)
        if len(inputs) != len(self.config_.modalities):
            raise InputError(
                f"fitted on {len(self.config_.modalities)} modalities, got {len(inputs)}"
            )
        return classify(self.model_, *inputs)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[probs.argmax(axis=1)]

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise InputError("this CvdClassifier is not fitted yet; call fit first")
