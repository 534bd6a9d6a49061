"""Clipped vehicle-to-microphone distance (CVMD) targets and pass-by intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

T_D = 0.75


@dataclass(frozen=True, eq=False)
class CvmdTarget:
    values: np.ndarray
    frame_times: np.ndarray
    t_d: float = T_D


@dataclass(frozen=True)
class Vpi:
    vehicle_index: int
    start: float
    end: float
    passby_time: float

    def __contains__(self, t):
        return self.start <= t <= self.end


def single_vehicle_distance(t, t_l, t_d=T_D):
    """``|t - t_l|`` where it is below ``t_d``, else ``t_d``. Vectorised over ``t``."""
    d = np.abs(np.asarray(t, dtype=np.float64) - t_l)
    return np.where(d < t_d, d, t_d)


def cvmd_series(passby_times, frame_times, t_d=T_D):
    """Pointwise minimum of the clipped distances of all vehicles."""
    times = np.asarray(getattr(passby_times, "passby_times", passby_times), dtype=np.float64)
    frame_times = np.asarray(frame_times, dtype=np.float64)
    values = np.full(frame_times.shape, float(t_d))
    for t_l in times:
        values = np.minimum(values, single_vehicle_distance(frame_times, t_l, t_d))
    return CvmdTarget(values, frame_times, t_d)


def vpis(passby_times, t_d=T_D, clip_len=20.0):
    """One interval per vehicle: ``[T - t_d, T + t_d]`` clipped to the clip.

    Neighbours closer than ``2 t_d`` share their midpoint as the boundary.
    """
    times = np.asarray(getattr(passby_times, "passby_times", passby_times), dtype=np.float64)
    out = []
    for i, t in enumerate(times):
        start = max(0.0, t - t_d)
        end = min(clip_len, t + t_d)
        if i > 0 and t - times[i - 1] < 2 * t_d:
            start = (times[i - 1] + t) / 2
        if i + 1 < times.size and times[i + 1] - t < 2 * t_d:
            end = (t + times[i + 1]) / 2
        out.append(Vpi(i, float(start), float(end), float(t)))
    return out
