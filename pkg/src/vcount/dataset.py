"""Audio clips, pass-by annotations, manifests and synthetic data.

Clips are mono WAV files at 44.1 kHz. Annotations are small CSV files with
one pass-by per line (``time_s[,class]``). A manifest is a CSV listing
``clip,annotation,location`` triples, optionally with a ``split`` column.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import AudioFormatError, DataError

SAMPLE_RATE = 44100
CLIP_DURATION = 20.0
VEHICLE_CLASSES = ("motorcycle", "car", "van", "bus", "truck")
LOCATIONS = range(1, 7)

_WAVE_PCM = 0x0001
_WAVE_FLOAT = 0x0003
_WAVE_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise DataError(f"clip {self.id!r}: expected a non-empty 1-D sample buffer")
        if not np.all(np.isfinite(x)):
            raise DataError(f"clip {self.id!r}: samples contain non-finite values")
        object.__setattr__(self, "samples", x)

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    clip_id: str
    passby_times: np.ndarray
    classes: tuple | None = None

    def __post_init__(self):
        t = np.asarray(self.passby_times, dtype=np.float64).reshape(-1)
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise DataError(f"annotations for {self.clip_id!r} are not strictly increasing")
        if self.classes is not None and len(self.classes) != t.size:
            raise DataError("classes must align with passby_times")
        object.__setattr__(self, "passby_times", t)

    def __len__(self):
        return self.passby_times.size


# -- WAV -----------------------------------------------------------------------


def _parse_wav(data):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioFormatError("container", "not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        tag, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if tag == b"fmt ":
            fmt = body
        elif tag == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None or len(fmt) < 16:
        raise AudioFormatError("container", "missing fmt or data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _WAVE_EXTENSIBLE:
        if len(fmt) < 26:
            raise AudioFormatError("container", "truncated WAVE_FORMAT_EXTENSIBLE header")
        tag = struct.unpack("<H", fmt[24:26])[0]
    return tag, channels, rate, block_align, bits, payload


def read_wav(path):
    """Decode a mono WAV file into ``(samples, sample_rate)``.

    Integer PCM is scaled to [-1, 1] by dividing by 2**(bits-1); 32-bit
    float data is returned unchanged (as float64).
    """
    tag, channels, rate, block_align, bits, payload = _parse_wav(Path(path).read_bytes())
    if channels != 1:
        raise AudioFormatError("channels", f"unsupported channel count: {channels}")

    n = len(payload) // (bits // 8) if bits in (16, 24, 32) else 0
    if tag == _WAVE_FLOAT and bits == 32:
        x = np.frombuffer(payload, dtype="<f4", count=n).astype(np.float64)
    elif tag == _WAVE_PCM and bits == 16:
        x = np.frombuffer(payload, dtype="<i2", count=n) / 32768.0
    elif tag == _WAVE_PCM and bits == 32:
        x = np.frombuffer(payload, dtype="<i4", count=n) / 2147483648.0
    elif tag == _WAVE_PCM and bits == 24:
        raw = np.frombuffer(payload, dtype=np.uint8, count=3 * n).reshape(n, 3)
        # place the 3 bytes in the top of an int32 so the sign bit lands right
        wide = np.zeros((n, 4), dtype=np.uint8)
        wide[:, 1:] = raw
        x = (wide.view("<i4").reshape(n) >> 8) / 8388608.0
    else:
        raise AudioFormatError("encoding", f"unsupported encoding: format tag {tag:#06x}, {bits} bits")
    return np.ascontiguousarray(x, dtype=np.float64), rate


def write_wav(path, samples, sample_rate=SAMPLE_RATE, subtype="float32"):
    """Write a mono WAV file. ``subtype`` is ``"float32"`` or ``"pcm16"``."""
    x = np.asarray(samples, dtype=np.float64)
    if subtype == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = _WAVE_FLOAT, 32
    elif subtype == "pcm16":
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = _WAVE_PCM, 16
    else:
        raise ValueError(f"unknown subtype {subtype!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, sample_rate, sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def load_clip(path, sample_rate=SAMPLE_RATE):
    """Load a WAV file as an :class:`AudioClip`.

    Pass ``sample_rate=None`` to accept any rate; otherwise a mismatch raises
    :class:`AudioFormatError` with code ``"sample_rate"``.
    """
    path = Path(path)
    x, rate = read_wav(path)
    if sample_rate is not None and rate != sample_rate:
        raise AudioFormatError("sample_rate", f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    return AudioClip(x, rate, path.stem)


def save_clip(clip, path, subtype="float32"):
    write_wav(path, clip.samples, clip.sample_rate, subtype)


# -- annotations ---------------------------------------------------------------


def load_annotations(path, duration=CLIP_DURATION, clip_id=None):
    """Parse a pass-by annotation CSV (``time_s[,class]`` per line, ``#`` comments)."""
    path = Path(path)
    records = []
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) > 2:
                raise DataError(f"{path}:{lineno}: expected 'time_s[,class]', got {line!r}")
            try:
                t = float(parts[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: cannot parse time {parts[0]!r}") from None
            if not np.isfinite(t) or (duration is not None and not 0.0 <= t <= duration):
                raise DataError(f"{path}:{lineno}: time {t} outside [0, {duration}]")
            cls = parts[1].lower() if len(parts) == 2 and parts[1] else None
            if cls is not None and cls not in VEHICLE_CLASSES:
                raise DataError(f"{path}:{lineno}: unknown vehicle class {parts[1]!r}")
            records.append((t, cls, lineno))

    records.sort(key=lambda r: r[0])
    for prev, cur in zip(records, records[1:]):
        if cur[0] - prev[0] < 0.01 - 1e-9:
            raise DataError(f"{path}:{cur[2]}: duplicate pass-by time {cur[0]} (line {prev[2]})")
    times = [r[0] for r in records]
    classes = tuple(r[1] for r in records)
    if all(c is None for c in classes):
        classes = None
    return AnnotationSet(clip_id if clip_id is not None else path.stem, np.array(times), classes)


def save_annotations(annotations, path):
    classes = annotations.classes or (None,) * len(annotations)
    with Path(path).open("w", encoding="utf-8") as fh:
        for t, c in zip(annotations.passby_times, classes):
            fh.write(f"{t:.2f},{c}\n" if c else f"{t:.2f}\n")


# -- manifests -----------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    clip: Path
    annotation: Path
    location: int
    split: str | None = None

    @property
    def clip_id(self):
        return self.clip.stem


@dataclass(frozen=True)
class Manifest:
    entries: tuple = ()
    path: Path | None = field(default=None, compare=False)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def subset(self, indices):
        return replace(self, entries=tuple(self.entries[i] for i in indices))

    def select(self, split=None, locations=None):
        keep = [
            e for e in self.entries
            if (split is None or e.split == split) and (locations is None or e.location in locations)
        ]
        return replace(self, entries=tuple(keep))

    @property
    def clip_ids(self):
        return [e.clip_id for e in self.entries]


def load_manifest(path, check=True):
    """Read a manifest CSV; relative paths resolve against the manifest's folder.

    With ``check`` every listed file must exist and parse (annotations are
    parsed; clips only need to exist, they are decoded lazily).
    """
    path = Path(path)
    root = path.parent
    entries = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"clip", "annotation", "location"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: manifest header lacks {sorted(missing)}")
        for row in reader:
            lineno = reader.line_num
            try:
                location = int(row["location"])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: bad location {row['location']!r}") from None
            if location not in LOCATIONS:
                raise DataError(f"{path}:{lineno}: location {location} not in 1..6")
            entry = ManifestEntry(
                clip=(root / row["clip"]).resolve(),
                annotation=(root / row["annotation"]).resolve(),
                location=location,
                split=(row.get("split") or None),
            )
            if check:
                if not entry.clip.is_file():
                    raise DataError(f"{path}:{lineno}: missing clip {entry.clip}")
                if not entry.annotation.is_file():
                    raise DataError(f"{path}:{lineno}: missing annotation {entry.annotation}")
                load_annotations(entry.annotation)
            entries.append(entry)
    ids = [e.clip_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: clip ids (file stems) must be unique")
    return Manifest(tuple(entries), path)


def write_manifest(manifest, path):
    path = Path(path)
    root = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        return p.relative_to(root).as_posix() if p.is_relative_to(root) else str(p)

    with_split = any(e.split for e in manifest)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip", "annotation", "location"] + (["split"] if with_split else []))
        for e in manifest:
            row = [rel(e.clip), rel(e.annotation), e.location]
            writer.writerow(row + ([e.split or ""] if with_split else []))


def split_kfold(manifest, k, seed=0):
    """File-level k-fold split; returns ``[(train, test), ...]``.

    Clips are shuffled with ``seed`` and dealt into ``k`` folds whose sizes
    differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(manifest):
        raise ValueError(f"k={k} exceeds the number of clips ({len(manifest)})")
    order = np.random.default_rng(seed).permutation(len(manifest))
    folds = np.array_split(order, k)
    splits = []
    for i, test_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        splits.append((manifest.subset(train_idx), manifest.subset(np.sort(test_idx))))
    return splits


# -- synthetic data ------------------------------------------------------------

# envelope sharpness (1/s) and peak standard deviation of a vehicle burst
_BURST_RATE = 2.0
_BURST_LEVEL = 0.2
_BAND = (50.0, 18000.0)


@dataclass(frozen=True)
class SynthSpec:
    duration_s: float = CLIP_DURATION
    passby_times: tuple = ()
    noise_level: float = 0.01
    seed: int = 0
    sample_rate: int = SAMPLE_RATE


def synth_clip(spec, clip_id="synth"):
    """Generate a labelled clip: white-noise floor plus one burst per vehicle.

    Each burst is Gaussian noise shaped by ``1 / (1 + (a (t - T))**2)`` and
    band-passed to 50 Hz - 18 kHz. Output is bit-identical for equal specs.
    """
    times = np.sort(np.asarray(spec.passby_times, dtype=np.float64))
    if spec.duration_s <= 0 or spec.noise_level < 0 or spec.sample_rate <= 2 * _BAND[1]:
        raise ValueError(f"invalid synthetic clip spec: {spec}")
    if times.size and (times[0] < 0 or times[-1] > spec.duration_s):
        raise ValueError("pass-by times must lie within the clip")
    if times.size > 1 and np.min(np.diff(times)) < 0.2:
        raise ValueError("pass-by times must be at least 0.2 s apart")

    fs = spec.sample_rate
    n = int(round(spec.duration_s * fs))
    rng = np.random.default_rng(spec.seed)
    x = spec.noise_level * rng.standard_normal(n)
    if times.size:
        t = np.arange(n) / fs
        burst = np.zeros(n)
        for tl in times:
            burst += rng.standard_normal(n) / (1.0 + (_BURST_RATE * (t - tl)) ** 2)
        sos = signal.butter(4, _BAND, btype="bandpass", fs=fs, output="sos")
        x += _BURST_LEVEL * signal.sosfiltfilt(sos, burst)
    return AudioClip(x, fs, clip_id), AnnotationSet(clip_id, times)


def random_passbys(rng, duration=CLIP_DURATION, mean=3.0, min_gap=2.0, margin=0.5):
    """Poisson number of pass-bys, uniformly placed with pairwise gaps >= ``min_gap``."""
    span = duration - 2 * margin
    n = min(rng.poisson(mean), int(span // min_gap) + 1)
    if n == 0:
        return ()
    free = span - (n - 1) * min_gap
    base = np.sort(rng.uniform(0.0, free, size=n))
    return tuple(np.round(margin + base + min_gap * np.arange(n), 2))


def synth_dataset(out_dir, n_clips, seed=0, mean_vehicles=3.0, min_gap=2.0,
                  noise_level=0.02, duration=CLIP_DURATION, n_test=0):
    """Write ``n_clips`` synthetic clips plus annotations and ``manifest.csv``.

    With ``n_test > 0`` the last ``n_test`` clips get split label ``test``
    and the rest ``train``.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_clips):
        clip_id = f"synth_{i:04d}"
        spec = SynthSpec(duration, random_passbys(rng, duration, mean_vehicles, min_gap),
                         noise_level, int(rng.integers(2**31)))
        clip, ann = synth_clip(spec, clip_id)
        wav = out_dir / "audio" / f"{clip_id}.wav"
        csv_path = out_dir / "annotations" / f"{clip_id}.csv"
        save_clip(clip, wav)
        save_annotations(ann, csv_path)
        split = None if n_test <= 0 else ("test" if i >= n_clips - n_test else "train")
        entries.append(ManifestEntry(wav, csv_path, location=i % 6 + 1, split=split))
    manifest = Manifest(tuple(entries), out_dir / "manifest.csv")
    write_manifest(manifest, manifest.path)
    return manifest
