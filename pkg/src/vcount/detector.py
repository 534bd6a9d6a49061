"""Local-minimum detection in a predicted distance and TP/FP/FN bookkeeping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.signal import find_peaks

from .features import ma_smooth

POST_SMOOTHING = (7, 5, 3)
PROMINENCE = 0.05


class Minimum(NamedTuple):
    index: int
    time: float
    value: float


@dataclass(frozen=True)
class DetectionOutcome:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    matches: tuple = ()  # (Minimum, vehicle_index)
    false_positives: tuple = ()
    missed: tuple = ()  # vehicle indices
    minima: tuple = field(default=(), compare=False)

    @property
    def n_vehicles(self):
        return self.tp + self.fn


def smooth_prediction(pred, lengths=POST_SMOOTHING):
    pred = np.asarray(pred, dtype=np.float64)
    if pred.size < max(lengths):
        raise ValueError(f"prediction of length {pred.size} shorter than the smoothing window")
    return ma_smooth(pred, lengths)


def find_minima(series, prominence=PROMINENCE):
    """Interior local minima whose prominence (on ``-series``) reaches ``prominence``.

    Plateaus report their middle sample (left of centre for even widths).
    Returns ``[(index, value), ...]`` in index order.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.size < 3:
        return []
    idx, _ = find_peaks(-series, prominence=prominence)
    return [(int(i), float(series[i])) for i in idx]


def detect_minima(pred, frame_times, lengths=POST_SMOOTHING, prominence=PROMINENCE):
    """Smooth a predicted distance and return its prominent minima with times."""
    smooth = smooth_prediction(pred, lengths)
    times = np.asarray(frame_times, dtype=np.float64)
    return [Minimum(i, float(times[i]), v) for i, v in find_minima(smooth, prominence)]


def classify(minima, threshold, vpis):
    """Split minima into TP/FP and count missed vehicles.

    A minimum qualifies when its value is strictly below ``threshold``.
    Each qualifying minimum goes to the interval containing its time (the
    earliest one if it sits on a shared boundary). Every interval with at
    least one qualifying minimum yields one TP, taken from its deepest
    minimum (earliest on ties); the rest, and qualifying minima outside all
    intervals, are FPs. Intervals without one are FNs.
    """
    vpis = sorted(vpis, key=lambda v: (v.start, v.end))
    for a, b in zip(vpis, vpis[1:]):
        if b.start < a.end:
            raise ValueError(f"pass-by intervals overlap: {a} and {b}")

    minima = sorted((Minimum(*m) for m in minima), key=lambda m: (m.time, m.index))
    hits = [m for m in minima if m.value < threshold]
    assigned = {v.vehicle_index: [] for v in vpis}
    false_pos = []
    for m in hits:
        owner = next((v for v in vpis if v.start <= m.time <= v.end), None)
        if owner is None:
            false_pos.append(m)
        else:
            assigned[owner.vehicle_index].append(m)

    matches, missed = [], []
    for v in vpis:
        group = assigned[v.vehicle_index]
        if not group:
            missed.append(v.vehicle_index)
            continue
        best = min(group, key=lambda m: (m.value, m.time, m.index))
        matches.append((best, v.vehicle_index))
        false_pos.extend(m for m in group if m is not best)

    false_pos.sort(key=lambda m: (m.time, m.index))
    return DetectionOutcome(len(matches), len(false_pos), len(missed), tuple(matches),
                            tuple(false_pos), tuple(missed), tuple(minima))


def count(outcome):
    """Estimated number of vehicles: TPs plus FPs."""
    return outcome.tp + outcome.fp


def write_detections(path, outcomes):
    """CSV of classified minima, ``clip_id,time_s,value,class``, one row per detection."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "time_s", "value", "class"])
        for clip_id, outcome in outcomes:
            rows = [(m, "TP") for m, _ in outcome.matches] + [(m, "FP") for m in outcome.false_positives]
            for m, label in sorted(rows, key=lambda r: (r[0].time, r[0].index)):
                writer.writerow([clip_id, f"{m.time:.4f}", f"{m.value:.6f}", label])


def write_summary(path, outcomes):
    """Per-clip ``clip_id,tp,fp,fn,n_est`` table."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "tp", "fp", "fn", "n_est"])
        for clip_id, o in outcomes:
            writer.writerow([clip_id, o.tp, o.fp, o.fn, count(o)])
