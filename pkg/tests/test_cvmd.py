import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cvmd_direct
from vcount.cvmd import T_D, cvmd_series, single_vehicle_distance, vpis
from vcount.dataset import AnnotationSet
from vcount.features import frame_times


def test_single_vehicle_examples():
    got = single_vehicle_distance([5.0, 4.7, 6.0, 5.75], 5.0)
    np.testing.assert_allclose(got, [0.0, 0.3, 0.75, 0.75])


def test_no_vehicles_is_flat():
    target = cvmd_series([], frame_times(882000, 44100))
    assert target.values.shape == (539,)
    assert np.all(target.values == T_D)


def test_accepts_annotation_set():
    ann = AnnotationSet("c", np.array([2.0, 9.0]), ("car", "car"))
    times = np.array([2.0, 2.5, 5.0, 9.1])
    np.testing.assert_allclose(cvmd_series(ann, times).values, [0.0, 0.5, 0.75, 0.1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 20), max_size=6), st.floats(0.1, 2.0))
def test_matches_direct(passbys, t_d):
    passbys = sorted(passbys)
    times = frame_times(882000, 44100)
    got = cvmd_series(passbys, times, t_d).values
    want = [cvmd_direct(t, passbys, t_d) for t in times]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    assert np.all((got >= 0) & (got <= t_d))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 20), min_size=1, max_size=6))
def test_zero_at_passby_frames(passbys):
    times = np.asarray(sorted(passbys))
    assert not cvmd_series(times, times).values.any()


class TestVpi:
    def test_isolated(self):
        (v,) = vpis([10.0])
        assert (v.start, v.end) == (9.25, 10.75)
        assert 10.0 in v and 11.0 not in v

    def test_close_pair_split_at_midpoint(self):
        a, b = vpis([5.0, 5.8])
        assert (a.start, a.end) == pytest.approx((4.25, 5.4))
        assert (b.start, b.end) == pytest.approx((5.4, 6.55))

    def test_clipped_to_clip(self):
        (v,) = vpis([0.3])
        assert (v.start, v.end) == pytest.approx((0.0, 1.05))
        (w,) = vpis([19.8], clip_len=20.0)
        assert w.end == 20.0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 20), max_size=8, unique=True))
    def test_disjoint_and_contain_passby(self, passbys):
        passbys = sorted(passbys)
        out = vpis(passbys)
        assert len(out) == len(passbys)
        for v in out:
            assert v.start <= v.passby_time <= v.end
            assert v.end - v.start <= 2 * T_D + 1e-12
        for a, b in zip(out, out[1:]):
            assert a.end <= b.start
