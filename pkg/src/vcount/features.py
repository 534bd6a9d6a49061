"""Spectrogram and the per-frame feature families used for distance regression.

Four families are computed on a common frame grid: short-term energy (STE),
top-right frequency (TRF), high-frequency power (HFP) and a log-mel
spectrogram (LMS). The three scalar series are smoothed, z-scored and
expanded to ``2K+1``-frame context windows; the mel bands are z-scored per
band. :func:`assemble` produces the ``M x (3(2K+1) + n_mel)`` matrix.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DataError

FAMILIES = ("STE", "TRF", "HFP", "LMS")
LOG_FLOOR = 1e-10
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class StftConfig:
    n_window: int = 4096
    n_hop: int = 1638
    window: str = "hamming"
    centered: bool = True

    def __post_init__(self):
        if not 0 < self.n_hop <= self.n_window:
            raise ValueError("need 0 < n_hop <= n_window")


@dataclass(frozen=True)
class FeatureConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    context: int = 10
    n_mel: int = 64
    f_min: float = 6000.0
    f_max: float = 22050.0
    trf_percentile: float = 90.0
    smoothing: tuple = (11, 5)

    @property
    def n_features(self):
        return 3 * (2 * self.context + 1) + self.n_mel

    def to_dict(self):
        d = asdict(self)
        d["smoothing"] = list(self.smoothing)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stft"] = StftConfig(**d.get("stft", {}))
        d["smoothing"] = tuple(d.get("smoothing", (11, 5)))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    power: np.ndarray  # (M, n_window // 2 + 1)
    bin_freqs: np.ndarray
    frame_times: np.ndarray
    sample_rate: int
    n_window: int

    @property
    def n_frames(self):
        return self.power.shape[0]


def frame_times(n_samples, sample_rate, cfg=StftConfig()):
    """Frame-centre times in seconds for a signal of ``n_samples``."""
    return np.arange(n_frames(n_samples, cfg)) * cfg.n_hop / sample_rate


def n_frames(n_samples, cfg=StftConfig()):
    if cfg.centered:
        return n_samples // cfg.n_hop + 1
    return (n_samples - cfg.n_window) // cfg.n_hop + 1


def _frames(x, cfg):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("empty signal")
    if cfg.centered:
        x = np.pad(x, cfg.n_window // 2, mode="reflect")
    elif x.size < cfg.n_window:
        raise DataError(f"signal shorter than the window ({x.size} < {cfg.n_window})")
    return sliding_window_view(x, cfg.n_window)[::cfg.n_hop]


def stft_power(clip, cfg=StftConfig()):
    """One-sided power spectrogram ``|STFT|**2`` (no 1/N scaling).

    With ``cfg.centered`` the signal is reflection-padded by ``n_window/2``
    on both sides so frame ``m`` is centred on sample ``m * n_hop``.
    """
    frames = _frames(clip.samples, cfg)
    win = get_window(cfg.window, cfg.n_window)
    coeffs = np.fft.rfft(frames * win, axis=1)
    power = coeffs.real ** 2 + coeffs.imag ** 2
    freqs = np.fft.rfftfreq(cfg.n_window, d=1.0 / clip.sample_rate)
    times = np.arange(power.shape[0]) * cfg.n_hop / clip.sample_rate
    return Spectrogram(power, freqs, times, clip.sample_rate, cfg.n_window)


def ste(clip, cfg=StftConfig()):
    """Mean of squared (unwindowed) samples per frame, on the STFT frame grid."""
    return np.mean(_frames(clip.samples, cfg) ** 2, axis=1)


def trf(spec, threshold):
    """Highest bin frequency whose power reaches ``threshold`` (0 if none does)."""
    if not threshold > 0:
        raise ValueError("TRF threshold must be positive")
    hit = spec.power >= threshold
    # index of the last True per row; rows without any hit fall back to 0 Hz
    last = hit.shape[1] - 1 - np.argmax(hit[:, ::-1], axis=1)
    return np.where(hit.any(axis=1), spec.bin_freqs[last], 0.0)


def trf_threshold(spec, percentile=90.0):
    """Clip-adaptive TRF threshold: a percentile of all spectrogram powers."""
    t = float(np.percentile(spec.power, percentile))
    return max(t, np.finfo(np.float64).tiny)


def band_mask(spec, f_min, f_max):
    nyquist = spec.sample_rate / 2
    if not 0 <= f_min < f_max <= nyquist:
        raise ValueError(f"need 0 <= f_min < f_max <= {nyquist} Hz, got ({f_min}, {f_max})")
    return (spec.bin_freqs >= f_min) & (spec.bin_freqs <= f_max)


def hfp(spec, f_min=6000.0, f_max=22050.0):
    """Rectangle-rule integral of power over the bins in ``[f_min, f_max]``."""
    df = spec.sample_rate / spec.n_window
    return spec.power[:, band_mask(spec, f_min, f_max)].sum(axis=1) * df


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mel, bin_freqs, f_lo=0.0, f_hi=None):
    """Triangular HTK-mel filters with unit peaks, shape ``(n_mel, n_bins)``."""
    bin_freqs = np.asarray(bin_freqs, dtype=np.float64)
    if n_mel < 1:
        raise ValueError("n_mel must be >= 1")
    if n_mel > bin_freqs.size:
        raise ValueError(f"n_mel={n_mel} exceeds the number of frequency bins ({bin_freqs.size})")
    f_hi = bin_freqs[-1] if f_hi is None else f_hi
    edges = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_mel + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs - lo) / (mid - lo)
    falling = (hi - bin_freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def lms(spec, n_mel=64):
    """Log-mel spectrogram, shape ``(n_mel, M)``."""
    fb = mel_filterbank(n_mel, spec.bin_freqs)
    return np.log(fb @ spec.power.T + LOG_FLOOR)


def ma_smooth(series, lengths=(11, 5)):
    """Successive centred moving averages.

    Near the ends the window shrinks symmetrically (half-width
    ``min(h, i, M-1-i)``), so the output has the input's length and the end
    samples pass through unchanged.
    """
    y = np.asarray(series, dtype=np.float64)
    n = y.size
    idx = np.arange(n)
    for length in lengths:
        if length < 1 or length % 2 == 0:
            raise ValueError(f"moving-average lengths must be odd and >= 1, got {length}")
        h = np.minimum(length // 2, np.minimum(idx, n - 1 - idx))
        csum = np.concatenate(([0.0], np.cumsum(y)))
        y = (csum[idx + h + 1] - csum[idx - h]) / (2 * h + 1)
    return y


def standardize(series, axis=-1):
    """Population z-score; near-constant series map to zeros."""
    x = np.asarray(series, dtype=np.float64)
    if x.shape[axis] < 2:
        raise ValueError("standardize needs at least 2 samples")
    mu = x.mean(axis=axis, keepdims=True)
    sd = x.std(axis=axis, keepdims=True)
    flat = sd ** 2 < VARIANCE_FLOOR
    return np.where(flat, 0.0, (x - mu) / np.where(flat, 1.0, sd))


def _extrapolate(values, offsets):
    # least-squares quadratic (lower degree if too few points) through values at 0..len-1
    deg = min(2, values.size - 1)
    coef = np.polyfit(np.arange(values.size, dtype=np.float64), values, deg)
    return np.polyval(coef, offsets)


def context_stack(series, k=10):
    """Stack each frame with its ``k`` predecessors and successors, ``(M, 2k+1)``.

    Values beyond either end come from a quadratic fitted to the ``k+1``
    nearest in-range values.
    """
    x = np.asarray(series, dtype=np.float64)
    if k == 0:
        return x[:, None].copy()
    if x.size < k + 1:
        raise ValueError(f"series of length {x.size} too short for context {k}")
    left = _extrapolate(x[:k + 1], np.arange(-k, 0, dtype=np.float64))
    right = _extrapolate(x[-(k + 1):], np.arange(k + 1, 2 * k + 1, dtype=np.float64))
    padded = np.concatenate((left, x, right))
    return sliding_window_view(padded, 2 * k + 1).copy()


def scalar_features(clip, cfg=FeatureConfig()):
    """Raw STE, TRF and HFP series plus the spectrogram they came from."""
    spec = stft_power(clip, cfg.stft)
    series = {
        "STE": ste(clip, cfg.stft),
        "TRF": trf(spec, trf_threshold(spec, cfg.trf_percentile)),
        "HFP": hfp(spec, cfg.f_min, min(cfg.f_max, clip.sample_rate / 2)),
    }
    return series, spec


def assemble(clip, cfg=FeatureConfig()):
    """Full feature matrix for one clip, columns ``[STE | TRF | HFP | LMS]``."""
    series, spec = scalar_features(clip, cfg)
    blocks = [
        context_stack(standardize(ma_smooth(series[name], cfg.smoothing)), cfg.context)
        for name in ("STE", "TRF", "HFP")
    ]
    blocks.append(standardize(lms(spec, cfg.n_mel), axis=1).T)
    return np.hstack(blocks)


def feature_columns(families, context=10, n_mel=64):
    """Column indices of the requested families within the assembled layout."""
    families = [f.upper() for f in families]
    if not families:
        raise ValueError("feature subset must not be empty")
    width = 2 * context + 1
    spans = {"STE": (0, width), "TRF": (width, 2 * width), "HFP": (2 * width, 3 * width),
             "LMS": (3 * width, 3 * width + n_mel)}
    unknown = set(families) - set(spans)
    if unknown:
        raise ValueError(f"unknown feature families {sorted(unknown)}")
    return np.concatenate([np.arange(*spans[f]) for f in FAMILIES if f in families])


def parse_subset(text):
    """``"HFP+LMS"`` -> ``("HFP", "LMS")``; ``"all"`` selects every family."""
    if text.strip().lower() == "all":
        return FAMILIES
    parts = tuple(p.strip().upper() for p in text.split("+") if p.strip())
    feature_columns(parts)
    return tuple(f for f in FAMILIES if f in parts)


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from clips to stacked feature rows.

    ``transform`` accepts a sequence of :class:`~vcount.dataset.AudioClip`
    and returns their matrices concatenated row-wise; use
    :meth:`transform_clip` to keep clips separate.
    """

    def __init__(self, n_window=4096, n_hop=1638, context=10, n_mel=64, f_min=6000.0,
                 f_max=22050.0, trf_percentile=90.0, smoothing=(11, 5), families=FAMILIES):
        self.n_window = n_window
        self.n_hop = n_hop
        self.context = context
        self.n_mel = n_mel
        self.f_min = f_min
        self.f_max = f_max
        self.trf_percentile = trf_percentile
        self.smoothing = smoothing
        self.families = families

    @property
    def config(self):
        return FeatureConfig(StftConfig(self.n_window, self.n_hop), self.context, self.n_mel,
                             self.f_min, self.f_max, self.trf_percentile, tuple(self.smoothing))

    def fit(self, X=None, y=None):
        self.columns_ = feature_columns(self.families, self.context, self.n_mel)
        self.n_features_out_ = self.columns_.size
        return self

    def transform_clip(self, clip):
        cols = feature_columns(self.families, self.context, self.n_mel)
        return assemble(clip, self.config)[:, cols]

    def transform(self, X):
        return np.vstack([self.transform_clip(clip) for clip in X])


# -- cache ---------------------------------------------------------------------


def _cache_paths(path):
    path = Path(path)
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".f32")


def save_matrix(path, matrix, header):
    """Write ``<path>.json`` (header) and ``<path>.f32`` (row-major float32)."""
    json_path, data_path = _cache_paths(path)
    m = np.atleast_2d(np.asarray(matrix, dtype="<f4"))
    if np.asarray(matrix).ndim == 1:
        m = m.T
    head = dict(header, M=int(m.shape[0]), D=int(m.shape[1]), dtype="float32-le")
    data_path.write_bytes(np.ascontiguousarray(m).tobytes())
    json_path.write_text(json.dumps(head, indent=1, sort_keys=True) + "\n")


def load_matrix(path):
    """Inverse of :func:`save_matrix`; returns ``(matrix, header)``."""
    json_path, data_path = _cache_paths(path)
    try:
        head = json.loads(json_path.read_text())
        raw = data_path.read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read cache {path}: {exc}") from exc
    m = np.frombuffer(raw, dtype="<f4")
    if m.size != head["M"] * head["D"]:
        raise DataError(f"cache {path} is truncated")
    return m.reshape(head["M"], head["D"]).astype(np.float64), head
