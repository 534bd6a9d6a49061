import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import find_peaks

from oracles import reflect_pad, ste_direct
from vcount.dataset import (
    AudioClip, Manifest, ManifestEntry, SynthSpec, load_annotations, load_clip, load_manifest,
    save_clip, split_kfold, synth_clip, synth_dataset, write_manifest, write_wav,
)
from vcount.errors import AudioFormatError, DataError


def _wav_bytes(tag, channels, rate, bits, payload):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


class TestLoadClip:
    def test_float32_twenty_seconds(self, tmp_path, rng):
        x = (0.1 * rng.standard_normal(882000)).astype(np.float32)
        path = tmp_path / "a.wav"
        path.write_bytes(_wav_bytes(3, 1, 44100, 32, x.tobytes()))
        clip = load_clip(path)
        assert clip.samples.size == 882000
        assert clip.sample_rate == 44100
        assert clip.id == "a"
        np.testing.assert_array_equal(clip.samples, x.astype(np.float64))

    def test_pcm16_zero(self, tmp_path):
        path = tmp_path / "z.wav"
        path.write_bytes(_wav_bytes(1, 1, 44100, 16, bytes(2000)))
        clip = load_clip(path)
        assert clip.samples.size == 1000
        assert not clip.samples.any()

    @pytest.mark.parametrize("bits,values,expected", [
        (16, struct.pack("<3h", -32768, 16384, 32767), [-1.0, 0.5, 32767 / 32768]),
        (32, struct.pack("<2i", -2**31, 2**30), [-1.0, 0.5]),
        (24, b"\x00\x00\x80" + b"\x00\x00\x40" + b"\xff\xff\xff", [-1.0, 0.5, -1 / 8388608]),
    ])
    def test_integer_scaling(self, tmp_path, bits, values, expected):
        path = tmp_path / "p.wav"
        path.write_bytes(_wav_bytes(1, 1, 44100, bits, values))
        np.testing.assert_allclose(load_clip(path).samples, expected, rtol=0, atol=0)

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "s.wav"
        path.write_bytes(_wav_bytes(1, 2, 44100, 16, bytes(400)))
        with pytest.raises(AudioFormatError, match="channel count") as exc:
            load_clip(path)
        assert exc.value.code == "channels"

    def test_wrong_rate_rejected(self, tmp_path):
        path = tmp_path / "r.wav"
        path.write_bytes(_wav_bytes(3, 1, 48000, 32, bytes(400)))
        with pytest.raises(AudioFormatError) as exc:
            load_clip(path)
        assert exc.value.code == "sample_rate"
        assert load_clip(path, sample_rate=None).sample_rate == 48000

    def test_unsupported_encoding(self, tmp_path):
        path = tmp_path / "u.wav"
        path.write_bytes(_wav_bytes(6, 1, 44100, 8, bytes(400)))  # A-law
        with pytest.raises(AudioFormatError) as exc:
            load_clip(path)
        assert exc.value.code == "encoding"

    def test_not_riff(self, tmp_path):
        path = tmp_path / "x.wav"
        path.write_bytes(b"garbage" * 10)
        with pytest.raises(AudioFormatError) as exc:
            load_clip(path)
        assert exc.value.code == "container"

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            AudioClip(np.array([0.0, np.nan]), 44100)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-4, 4, width=32), min_size=1, max_size=300))
def test_float32_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "c.wav"
    clip = AudioClip(np.array(values, dtype=np.float32), 44100, "c")
    save_clip(clip, path)
    again = load_clip(path)
    np.testing.assert_array_equal(again.samples, clip.samples)
    save_clip(again, path)
    np.testing.assert_array_equal(load_clip(path).samples, clip.samples)


class TestAnnotations:
    def test_direct_parse(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("3.52,car\n11.07,truck\n")
        ann = load_annotations(p)
        np.testing.assert_array_equal(ann.passby_times, [3.52, 11.07])
        assert ann.classes == ("car", "truck")

    def test_empty(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        assert len(load_annotations(p)) == 0

    def test_sorted(self, tmp_path):
        p = tmp_path / "o.csv"
        p.write_text("# comment\n5.0\n\n2.0  # trailing\n")
        np.testing.assert_array_equal(load_annotations(p).passby_times, [2.0, 5.0])

    def test_bad_line_reports_number(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("1.0\nabc\n")
        with pytest.raises(DataError, match=":2:"):
            load_annotations(p)

    @pytest.mark.parametrize("text", ["21.0\n", "-0.5\n"])
    def test_out_of_range(self, tmp_path, text):
        p = tmp_path / "r.csv"
        p.write_text(text)
        with pytest.raises(DataError, match="outside"):
            load_annotations(p)

    def test_duplicates(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("4.00\n4.005\n")
        with pytest.raises(DataError, match="duplicate"):
            load_annotations(p)

    def test_unknown_class(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("4.0,tram\n")
        with pytest.raises(DataError, match="class"):
            load_annotations(p)


def _manifest(n, tmp_path):
    entries = []
    for i in range(n):
        wav = tmp_path / f"c{i:03d}.wav"
        ann = tmp_path / f"c{i:03d}.csv"
        entries.append(ManifestEntry(wav, ann, i % 6 + 1))
    return Manifest(tuple(entries))


class TestKFold:
    def test_250_clips_five_folds(self, tmp_path):
        folds = split_kfold(_manifest(250, tmp_path), 5, seed=0)
        assert [len(te) for _, te in folds] == [50] * 5

    def test_leave_one_out(self, tmp_path):
        folds = split_kfold(_manifest(10, tmp_path), 10, seed=1)
        assert all(len(te) == 1 and len(tr) == 9 for tr, te in folds)

    def test_deterministic(self, tmp_path):
        m = _manifest(17, tmp_path)
        a = [te.clip_ids for _, te in split_kfold(m, 4, seed=3)]
        b = [te.clip_ids for _, te in split_kfold(m, 4, seed=3)]
        assert a == b

    def test_k_too_large(self, tmp_path):
        with pytest.raises(ValueError):
            split_kfold(_manifest(3, tmp_path), 4)
        with pytest.raises(ValueError):
            split_kfold(_manifest(3, tmp_path), 1)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 60), k=st.integers(2, 12), seed=st.integers(0, 2**16))
    def test_partition(self, tmp_path_factory, n, k, seed):
        if k > n:
            return
        m = _manifest(n, tmp_path_factory.mktemp("kf"))
        folds = split_kfold(m, k, seed)
        tests = [set(te.clip_ids) for _, te in folds]
        assert set().union(*tests) == set(m.clip_ids)
        assert sum(len(t) for t in tests) == n
        sizes = [len(t) for t in tests]
        assert max(sizes) - min(sizes) <= 1
        for (tr, te) in folds:
            assert not set(tr.clip_ids) & set(te.clip_ids)
            assert len(tr) + len(te) == n


class TestManifest:
    def test_round_trip_and_validation(self, tmp_path):
        m = synth_dataset(tmp_path / "ds", 3, seed=1, duration=2.0, n_test=1)
        loaded = load_manifest(tmp_path / "ds" / "manifest.csv")
        assert loaded.clip_ids == m.clip_ids
        assert [e.split for e in loaded] == ["train", "train", "test"]
        assert len(loaded.select(split="test")) == 1
        write_manifest(loaded, tmp_path / "ds" / "copy.csv")
        assert load_manifest(tmp_path / "ds" / "copy.csv").clip_ids == m.clip_ids

    def test_missing_file(self, tmp_path):
        (tmp_path / "m.csv").write_text("clip,annotation,location\nnope.wav,nope.csv,1\n")
        with pytest.raises(DataError, match="missing"):
            load_manifest(tmp_path / "m.csv")

    def test_bad_location(self, tmp_path):
        (tmp_path / "m.csv").write_text("clip,annotation,location\na.wav,a.csv,7\n")
        with pytest.raises(DataError, match="location"):
            load_manifest(tmp_path / "m.csv", check=False)

    def test_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("path,location\n")
        with pytest.raises(DataError, match="header"):
            load_manifest(tmp_path / "m.csv")


class TestSynth:
    def test_two_passbys_show_as_two_ste_peaks(self):
        clip, ann = synth_clip(SynthSpec(20.0, (5.0, 12.0), 0.01, 7))
        np.testing.assert_array_equal(ann.passby_times, [5.0, 12.0])
        n_window, n_hop = 4096, 1638
        padded = reflect_pad(clip.samples, n_window // 2)
        frames = clip.samples.size // n_hop + 1
        energy = np.array([ste_direct(padded, n_window, n_hop, m) for m in range(frames)])
        peaks, props = find_peaks(energy, prominence=0.25 * energy.max())
        times = peaks * n_hop / 44100
        assert len(peaks) == 2
        np.testing.assert_allclose(times, [5.0, 12.0], atol=0.15)

    def test_empty_is_noise(self):
        clip, ann = synth_clip(SynthSpec(2.0, (), 0.01, 0))
        assert len(ann) == 0
        assert abs(clip.samples.std() - 0.01) < 1e-3

    def test_deterministic(self):
        spec = SynthSpec(3.0, (1.0, 2.0), 0.02, 99)
        a, _ = synth_clip(spec)
        b, _ = synth_clip(spec)
        assert a.samples.tobytes() == b.samples.tobytes()

    @pytest.mark.parametrize("times", [(1.0, 1.1), (-0.5,), (2.5,)])
    def test_invalid(self, times):
        with pytest.raises(ValueError):
            synth_clip(SynthSpec(2.0, times, 0.01, 0))

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.floats(0, 3), max_size=6), st.integers(0, 100))
    def test_annotation_count(self, raw, seed):
        times = []
        for t in sorted(raw):
            if not times or t - times[-1] >= 0.2:
                times.append(t)
        _, ann = synth_clip(SynthSpec(3.0, tuple(times), 0.01, seed))
        assert len(ann) == len(times)

    def test_write_wav_pcm16(self, tmp_path):
        write_wav(tmp_path / "p.wav", [0.0, 0.5, -1.0], subtype="pcm16")
        np.testing.assert_array_equal(load_clip(tmp_path / "p.wav").samples, [0.0, 0.5, -1.0])
