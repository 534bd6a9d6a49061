import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import prominent_peaks
from vcount.cvmd import T_D, cvmd_series, vpis
from vcount.detector import (
    Minimum, classify, count, detect_minima, find_minima, write_detections, write_summary,
)
from vcount.features import frame_times

TIMES = frame_times(882000, 44100)


def test_v_shape():
    x = np.abs(np.arange(-10, 11)) * 0.05
    assert find_minima(x) == [(10, 0.0)]


def test_monotone_has_none():
    assert find_minima(np.linspace(0.75, 0.0, 40)) == []
    assert find_minima(np.linspace(0.0, 0.75, 40)) == []


def test_shallow_second_dip_merges():
    x = np.full(40, 0.75)
    x[10:15] = [0.6, 0.45, 0.47, 0.44, 0.6]
    assert find_minima(x) == [(13, 0.44)]


def test_plateau_reports_middle():
    x = np.array([0.7, 0.5, 0.2, 0.2, 0.2, 0.5, 0.7])
    assert find_minima(x) == [(3, 0.2)]


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(3, 60), elements=st.floats(0, 0.75).map(lambda v: round(v, 2))),
       st.sampled_from([0.0, 0.01, 0.05, 0.2]))
def test_find_minima_matches_oracle(x, prominence):
    want = [(p, float(x[p])) for p, _ in prominent_peaks(-x, prominence)]
    assert find_minima(x, prominence) == want


def test_detect_smooths_first():
    pred = cvmd_series([4.0, 11.0], TIMES).values
    found = detect_minima(pred, TIMES)
    assert [round(m.time) for m in found] == [4, 11]
    assert all(isinstance(m, Minimum) for m in found)


def _m(t, v):
    return Minimum(int(round(t * 10)), t, v)


class TestClassify:
    def test_figure_scenario(self):
        intervals = vpis([3.0, 8.0, 14.0])
        minima = [_m(3.1, 0.1), _m(8.2, 0.6), _m(11.0, 0.2), _m(14.0, 0.3)]
        out = classify(minima, 0.5, intervals)
        assert (out.tp, out.fp, out.fn) == (2, 1, 1)
        assert [vi for _, vi in out.matches] == [0, 2]
        assert out.missed == (1,)
        assert out.false_positives[0].time == 11.0
        assert count(out) == 3

    def test_threshold_zero_misses_everything(self):
        minima = [_m(3.0, 0.0), _m(8.0, 0.0)]
        out = classify(minima, 0.0, vpis([3.0, 8.0]))
        assert (out.tp, out.fp, out.fn) == (0, 0, 2)

    def test_two_minima_in_one_interval(self):
        out = classify([_m(5.0, 0.2), _m(5.5, 0.1)], 0.5, vpis([5.2]))
        assert (out.tp, out.fp, out.fn) == (1, 1, 0)
        assert out.matches[0][0].time == 5.5

    def test_overlapping_intervals_rejected(self):
        from vcount.cvmd import Vpi
        with pytest.raises(ValueError):
            classify([], 0.5, [Vpi(0, 1.0, 3.0, 2.0), Vpi(1, 2.0, 4.0, 3.0)])

    def test_no_vehicles(self):
        out = classify([_m(1.0, 0.1)], 0.5, [])
        assert (out.tp, out.fp, out.fn) == (0, 1, 0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 20), st.floats(0, 0.75)), max_size=12),
           st.lists(st.floats(0, 20), max_size=6, unique=True),
           st.floats(0, 0.75), st.floats(0, 0.75), st.randoms(use_true_random=False))
    def test_invariants(self, raw, passbys, t1, t2, random):
        minima = [Minimum(i, t, v) for i, (t, v) in enumerate(raw)]
        intervals = vpis(sorted(passbys))
        out = classify(minima, t1, intervals)
        assert out.tp + out.fn == len(passbys)
        assert out.tp + out.fp == sum(m.value < t1 for m in minima)
        shuffled = list(minima)
        random.shuffle(shuffled)
        again = classify(shuffled, t1, intervals)
        assert (again.tp, again.fp, again.fn) == (out.tp, out.fp, out.fn)
        lo, hi = sorted((t1, t2))
        a, b = classify(minima, lo, intervals), classify(minima, hi, intervals)
        assert a.tp <= b.tp and a.fp <= b.fp and a.fn >= b.fn


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1, 19), max_size=5))
def test_ground_truth_target_is_perfect(raw):
    passbys = []
    for t in sorted(raw):
        if not passbys or t - passbys[-1] >= 2 * T_D:
            passbys.append(round(t, 2))
    pred = cvmd_series(passbys, TIMES).values
    minima = detect_minima(pred, TIMES)
    out = classify(minima, 0.5 * T_D, vpis(passbys))
    assert (out.tp, out.fp, out.fn) == (len(passbys), 0, 0)


def test_writers(tmp_path):
    out = classify([_m(3.1, 0.1), _m(11.0, 0.2)], 0.5, vpis([3.0, 8.0]))
    write_detections(tmp_path / "d.csv", [("c1", out)])
    write_summary(tmp_path / "s.csv", [("c1", out)])
    assert (tmp_path / "d.csv").read_text().splitlines() == [
        "clip_id,time_s,value,class", "c1,3.1000,0.100000,TP", "c1,11.0000,0.200000,FP"]
    assert (tmp_path / "s.csv").read_text().splitlines() == ["clip_id,tp,fp,fn,n_est", "c1,1,1,1,2"]
