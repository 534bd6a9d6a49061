"""End-to-end vehicle counter: features -> distance regression -> minima."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .cvmd import T_D, cvmd_series, vpis
from .dataset import AudioClip
from .detector import POST_SMOOTHING, PROMINENCE, classify, detect_minima
from .errors import NumericalError
from .features import FeatureExtractor, assemble, feature_columns
from .metrics import sweep
from .svr import EpsilonSVR


@dataclass(frozen=True, eq=False)
class ClipFeatures:
    """Full (all-family) feature matrix of one clip plus its time axis."""

    clip_id: str
    matrix: np.ndarray
    frame_times: np.ndarray
    duration: float


def clip_features(clip, extractor):
    mat = assemble(clip, extractor.config)
    # round through float32 so in-memory and cached features agree exactly
    mat = mat.astype(np.float32).astype(np.float64)
    times = np.arange(mat.shape[0]) * extractor.n_hop / clip.sample_rate
    return ClipFeatures(clip.id, mat, times, clip.duration)


def _passbys(ann):
    return np.asarray(getattr(ann, "passby_times", ann), dtype=np.float64)


class VehicleCounter(BaseEstimator):
    """Count vehicles by regressing the clipped distance and finding its minima.

    ``fit`` takes clips (or precomputed :class:`ClipFeatures`) with their
    pass-by annotations; ``predict`` returns one vehicle count per clip.

    Parameters
    ----------
    features : FeatureExtractor
        Feature settings and the families fed to the regressor.
    regressor : EpsilonSVR
        Cloned on ``fit``.
    t_d : float
        Distance clipping level in seconds.
    threshold : float
        Detection threshold in seconds; minima strictly below it count.
    stride : int
        Keep every ``stride``-th frame of each training clip.
    """

    def __init__(self, features=None, regressor=None, t_d=T_D, threshold=0.78 * T_D,
                 prominence=PROMINENCE, smoothing=POST_SMOOTHING, stride=1):
        self.features = features
        self.regressor = regressor
        self.t_d = t_d
        self.threshold = threshold
        self.prominence = prominence
        self.smoothing = smoothing
        self.stride = stride

    def _extractor(self):
        return self.features if self.features is not None else FeatureExtractor()

    def _as_features(self, X):
        ext = self._extractor()
        return [clip_features(x, ext) if isinstance(x, AudioClip) else x for x in X]

    def _columns(self):
        ext = self._extractor()
        return feature_columns(ext.families, ext.context, ext.n_mel)

    def training_set(self, X, y):
        """Stacked ``(rows, targets)`` the regressor is trained on."""
        cols = self._columns()
        rows, targets = [], []
        for feats, ann in zip(self._as_features(X), y):
            target = cvmd_series(_passbys(ann), feats.frame_times, self.t_d).values
            rows.append(feats.matrix[::self.stride, cols])
            targets.append(target[::self.stride])
        return np.vstack(rows), np.concatenate(targets)

    def fit(self, X, y):
        if not 0 <= self.threshold <= self.t_d:
            raise ValueError(f"threshold must lie in [0, {self.t_d}]")
        if len(X) != len(y):
            raise ValueError("need one annotation set per clip")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        rows, targets = self.training_set(X, y)
        reg = self.regressor if self.regressor is not None else EpsilonSVR()
        self.regressor_ = clone(reg).fit(rows, targets)
        self.n_train_rows_ = rows.shape[0]
        return self

    def predict_distance(self, X):
        """Raw regressor output per clip, as ``[(clip_features, prediction), ...]``."""
        check_is_fitted(self, "regressor_")
        cols = self._columns()
        out = []
        for feats in self._as_features(X):
            pred = self.regressor_.predict(feats.matrix[:, cols])
            if not np.all(np.isfinite(pred)):
                raise NumericalError(f"non-finite distance prediction for {feats.clip_id}")
            out.append((feats, pred))
        return out

    def detect(self, X):
        """Prominent minima of the smoothed prediction per clip."""
        return [detect_minima(pred, feats.frame_times, self.smoothing, self.prominence)
                for feats, pred in self.predict_distance(X)]

    def predict(self, X):
        """Vehicle count per clip at ``self.threshold``."""
        return np.array([sum(m.value < self.threshold for m in minima) for minima in self.detect(X)])

    def outcomes(self, X, y, threshold=None):
        """Per-clip :class:`~vcount.detector.DetectionOutcome` at one threshold."""
        thr = self.threshold if threshold is None else threshold
        res = []
        for (feats, pred), ann in zip(self.predict_distance(X), y):
            minima = detect_minima(pred, feats.frame_times, self.smoothing, self.prominence)
            res.append((feats.clip_id, classify(minima, thr, vpis(_passbys(ann), self.t_d, feats.duration))))
        return res

    def sweep(self, X, y, n_thresholds=100):
        preds, anns, lens = {}, {}, {}
        for (feats, pred), ann in zip(self.predict_distance(X), y):
            preds[feats.clip_id] = (pred, feats.frame_times)
            anns[feats.clip_id] = _passbys(ann)
            lens[feats.clip_id] = feats.duration
        return sweep(preds, anns, self.t_d, n_thresholds, self.smoothing, self.prominence, lens)

    def score(self, X, y):
        """Normalised area under the TP-probability curve (higher is better)."""
        return self.sweep(X, y).summary().nauc


__all__ = ["ClipFeatures", "VehicleCounter", "clip_features"]
