"""Threshold sweeps and the counting metrics built on them."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .cvmd import T_D, vpis
from .detector import PROMINENCE, POST_SMOOTHING, classify, detect_minima


def threshold_grid(t_d=T_D, n=100):
    """``i * t_d / n`` for ``i = 0 .. n-1``."""
    return np.arange(n) * (t_d / n)


@dataclass(frozen=True, eq=False)
class SweepReport:
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    n_true: int
    t_d: float = T_D

    @property
    def p_tp(self):
        return self.tp / self.n_true

    @property
    def p_fp(self):
        return self.fp / self.n_true

    @property
    def p_fn(self):
        return self.fn / self.n_true

    @property
    def n_est(self):
        return self.tp + self.fp

    @property
    def rvce(self):
        return np.abs(self.n_true - self.n_est) / self.n_true * 100.0

    def __add__(self, other):
        if not np.array_equal(self.thresholds, other.thresholds):
            raise ValueError("cannot pool sweeps over different threshold grids")
        return SweepReport(self.thresholds, self.tp + other.tp, self.fp + other.fp,
                           self.fn + other.fn, self.n_true + other.n_true, self.t_d)

    def summary(self):
        return summarize(self)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["threshold", "p_tp", "p_fp", "p_fn", "tp", "fp", "fn", "n_est", "rvce"])
            for i, t in enumerate(self.thresholds):
                writer.writerow([f"{t:.6f}", f"{self.p_tp[i]:.6f}", f"{self.p_fp[i]:.6f}",
                                 f"{self.p_fn[i]:.6f}", int(self.tp[i]), int(self.fp[i]),
                                 int(self.fn[i]), int(self.n_est[i]), f"{self.rvce[i]:.4f}"])


@dataclass(frozen=True)
class MetricSummary:
    nauc: float
    efp: float  # percent
    delta_efp: float  # percent
    i_min: int
    threshold: float
    rvce_at_efp: float  # percent

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self, path, **extra):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dict(self.to_dict(), **extra), fh, indent=1, sort_keys=True)
            fh.write("\n")


def sweep(predictions, annotations, t_d=T_D, n_thresholds=100, smoothing=POST_SMOOTHING,
          prominence=PROMINENCE, clip_len=20.0):
    """Pooled TP/FP/FN counts over a grid of detection thresholds.

    ``predictions`` maps clip id to ``(predicted_distance, frame_times)`` and
    ``annotations`` maps clip id to pass-by times (or an AnnotationSet).
    ``clip_len`` may be a float or a mapping by clip id.
    """
    if set(predictions) != set(annotations):
        raise ValueError("predictions and annotations cover different clips")
    grid = threshold_grid(t_d, n_thresholds)
    tp = np.zeros(grid.size, dtype=np.int64)
    fp = np.zeros_like(tp)
    fn = np.zeros_like(tp)
    n_true = 0
    for clip_id in sorted(predictions):
        pred, times = predictions[clip_id]
        length = clip_len[clip_id] if isinstance(clip_len, dict) else clip_len
        intervals = vpis(annotations[clip_id], t_d, length)
        n_true += len(intervals)
        minima = detect_minima(pred, times, smoothing, prominence)
        for i, thr in enumerate(grid):
            o = classify(minima, thr, intervals)
            tp[i] += o.tp
            fp[i] += o.fp
            fn[i] += o.fn
    if n_true == 0:
        raise ValueError("no annotated vehicles: probabilities are undefined")
    return SweepReport(grid, tp, fp, fn, n_true, t_d)


def nauc(report):
    """Normalised area under the TP-probability curve (mean of ``p_tp``)."""
    p_tp = np.asarray(getattr(report, "p_tp", report), dtype=np.float64)
    return float(np.sum(p_tp) / p_tp.size)


def efp(report, p_fn=None):
    """Equal-false-probability point: ``(efp, delta_efp, i_min)`` as fractions.

    Accepts a :class:`SweepReport` or the two curves ``p_fp, p_fn``. The
    first index wins ties.
    """
    if p_fn is None:
        p_fp, p_fn = report.p_fp, report.p_fn
    else:
        p_fp = report
    p_fp = np.asarray(p_fp, dtype=np.float64)
    p_fn = np.asarray(p_fn, dtype=np.float64)
    gap = np.abs(p_fp - p_fn)
    i_min = int(np.argmin(gap))
    return float(p_fp[i_min]), float(gap[i_min]), i_min


def rvce(n_true, n_est):
    """Relative vehicle-counting error in percent."""
    if n_true <= 0:
        raise ValueError("RVCE needs a positive true count")
    return abs(n_true - n_est) / n_true * 100.0


def summarize(report):
    e, d, i = efp(report)
    return MetricSummary(nauc(report), 100.0 * e, 100.0 * d, i, float(report.thresholds[i]),
                         rvce(report.n_true, int(report.n_est[i])))
