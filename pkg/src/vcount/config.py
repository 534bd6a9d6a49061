"""Pipeline configuration and its INI-file form.

Every default reproduces the reference setup, so an empty config file (or
none at all) runs the reference configuration.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .cvmd import T_D
from .features import FeatureConfig, parse_subset


@dataclass(frozen=True)
class SvrParams:
    C: float = 1.0
    epsilon: float = 0.05
    kernel: str = "rbf"
    gamma: str = "auto"
    tol: float = 1e-3
    max_iter: int = 0  # 0: solver default
    cache_size: float = 1024.0
    stride: int = 1

    def estimator_params(self):
        gamma = self.gamma if self.gamma == "auto" else float(self.gamma)
        return dict(C=self.C, epsilon=self.epsilon, kernel=self.kernel, gamma=gamma, tol=self.tol,
                    max_iter=self.max_iter or None, cache_size=self.cache_size)


@dataclass(frozen=True)
class DetectionParams:
    smoothing: tuple = (7, 5, 3)
    prominence: float = 0.05
    # 78 % of T_d: the equal-false-probability point reported for all features
    threshold: float = 0.78 * T_D
    n_thresholds: int = 100


@dataclass(frozen=True)
class PipelineConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    t_d: float = T_D
    sample_rate: int = 44100
    clip_duration: float = 20.0
    svr: SvrParams = field(default_factory=SvrParams)
    detection: DetectionParams = field(default_factory=DetectionParams)
    families: tuple = ("STE", "TRF", "HFP", "LMS")
    k: int = 5
    seed: int = 0

    def validate(self):
        if not 0 <= self.detection.threshold <= self.t_d:
            raise ValueError(f"threshold must lie in [0, {self.t_d}]")
        if self.svr.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.detection.prominence <= 0:
            raise ValueError("prominence must be positive")
        return self


def _tuple(text):
    return tuple(int(p) for p in str(text).replace("+", ",").split(",") if p.strip())


def _coerce(kind, value):
    if kind is bool:
        return str(value).lower() in ("1", "true", "yes", "on")
    if kind is tuple:
        return value if isinstance(value, tuple) else _tuple(value)
    return kind(value)


def _update(obj, values):
    kinds = {f.name: type(getattr(obj, f.name)) for f in fields(obj)}
    # keys match case-insensitively so "c = 2" and "C = 2" both work
    names = {k.lower(): k for k in kinds}
    values = {names.get(k.lower(), k): v for k, v in values.items()}
    unknown = set(values) - set(kinds)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)} for {type(obj).__name__}")
    return replace(obj, **{k: _coerce(kinds[k], v) for k, v in values.items()})


def from_sections(sections, base=None):
    """Build a config from ``{section: {key: value}}`` (as read from INI)."""
    cfg = base or PipelineConfig()
    s = {k: dict(v) for k, v in sections.items()}
    stft = _update(cfg.features.stft, s.pop("stft", {}))
    features = replace(_update(cfg.features, s.pop("features", {})), stft=stft)
    svr = _update(cfg.svr, s.pop("svr", {}))
    det = _update(cfg.detection, s.pop("detection", {}))
    run = dict(s.pop("run", {}))
    if "families" in run:
        run["families"] = parse_subset(run["families"])
    if s:
        raise ValueError(f"unknown config sections {sorted(s)}")
    top = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    top.update(features=features, svr=svr, detection=det)
    cfg = PipelineConfig(**top)
    kinds = {"t_d": float, "sample_rate": int, "clip_duration": float, "k": int, "seed": int}
    for key, value in run.items():
        if key == "families":
            cfg = replace(cfg, families=value)
        elif key in kinds:
            cfg = replace(cfg, **{key: kinds[key](value)})
        else:
            raise ValueError(f"unknown config key {key!r} in [run]")
    return cfg.validate()


def load_config(path=None, overrides=None):
    """Read an INI config; ``overrides`` is ``{section: {key: value}}``."""
    sections = {}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        sections = {name: dict(parser[name]) for name in parser.sections()}
    for name, values in (overrides or {}).items():
        sections.setdefault(name, {}).update({k: v for k, v in values.items() if v is not None})
    return from_sections(sections)


def to_sections(cfg):
    def plain(obj, skip=()):
        out = {}
        for f in fields(obj):
            if f.name in skip:
                continue
            v = getattr(obj, f.name)
            out[f.name] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
        return out

    return {
        "stft": plain(cfg.features.stft),
        "features": plain(cfg.features, skip=("stft",)),
        "svr": plain(cfg.svr),
        "detection": plain(cfg.detection),
        "run": {"t_d": str(cfg.t_d), "sample_rate": str(cfg.sample_rate),
                "clip_duration": str(cfg.clip_duration), "families": "+".join(cfg.families),
                "k": str(cfg.k), "seed": str(cfg.seed)},
    }


def write_config(cfg, path):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_dict(to_sections(cfg))
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
