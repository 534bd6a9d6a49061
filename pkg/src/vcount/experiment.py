"""Cache-backed experiment harness: extraction, training, sweeps, CV, ablations."""

from __future__ import annotations

import csv
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .counter import ClipFeatures, VehicleCounter, clip_features
from .cvmd import cvmd_series
from .dataset import load_annotations, load_clip, split_kfold
from .errors import DataError
from .features import FAMILIES, FeatureConfig, FeatureExtractor, load_matrix, parse_subset, save_matrix
from .svr import EpsilonSVR, load_model, save_model

log = logging.getLogger(__name__)

ABLATION_SUBSETS = (
    "STE+TRF+HFP+LMS", "TRF+HFP+LMS", "STE+HFP+LMS", "STE+TRF+LMS", "STE+TRF+HFP",
    "STE+LMS", "TRF+LMS", "HFP+LMS", "LMS",
)


def make_extractor(cfg, families=None):
    f = cfg.features
    return FeatureExtractor(f.stft.n_window, f.stft.n_hop, f.context, f.n_mel, f.f_min, f.f_max,
                            f.trf_percentile, f.smoothing, tuple(families or cfg.families))


def make_counter(cfg, families=None):
    return VehicleCounter(
        features=make_extractor(cfg, families),
        regressor=EpsilonSVR(**cfg.svr.estimator_params()),
        t_d=cfg.t_d,
        threshold=cfg.detection.threshold,
        prominence=cfg.detection.prominence,
        smoothing=cfg.detection.smoothing,
        stride=cfg.svr.stride,
    )


# -- feature cache -------------------------------------------------------------


def _layout(cfg):
    w = 2 * cfg.features.context + 1
    spans = [("STE", 0, w), ("TRF", w, 2 * w), ("HFP", 2 * w, 3 * w),
             ("LMS", 3 * w, 3 * w + cfg.features.n_mel)]
    return [{"family": f, "start": a, "stop": b} for f, a, b in spans]


def _header(entry, cfg, clip):
    stat = entry.clip.stat()
    return {
        "clip_id": entry.clip_id,
        "layout": _layout(cfg),
        "configs": cfg.features.to_dict(),
        "sample_rate": clip.sample_rate,
        "n_samples": int(clip.samples.size),
        "source_size": stat.st_size,
        "source_mtime_ns": stat.st_mtime_ns,
    }


def _fresh(head, entry, cfg):
    try:
        stat = entry.clip.stat()
    except OSError:
        return False
    return (head.get("configs") == cfg.features.to_dict()
            and head.get("source_size") == stat.st_size
            and head.get("source_mtime_ns") == stat.st_mtime_ns)


def _read_head(path):
    try:
        _, head = load_matrix(path)
    except DataError:
        return None
    return head


def extract(manifest, cfg, cache_dir, force=False):
    """Write feature (and CVMD target) caches; skips clips whose cache is current.

    Returns ``[(clip_id, written: bool), ...]``.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    ext = make_extractor(cfg, FAMILIES)
    done = []
    for entry in manifest:
        path = cache_dir / entry.clip_id
        head = _read_head(path)
        if not force and head is not None and _fresh(head, entry, cfg):
            done.append((entry.clip_id, False))
            continue
        try:
            clip = load_clip(entry.clip, cfg.sample_rate)
        except DataError as exc:
            raise DataError(f"{entry.clip}: {exc}") from exc
        feats = clip_features(clip, ext)
        header = _header(entry, cfg, clip)
        save_matrix(path, feats.matrix, header)
        ann = load_annotations(entry.annotation, duration=clip.duration)
        target = cvmd_series(ann, feats.frame_times, cfg.t_d)
        save_matrix(cache_dir / f"{entry.clip_id}.cvmd", target.values,
                    {"clip_id": entry.clip_id, "t_d": cfg.t_d, "kind": "cvmd"})
        log.info("extracted %s (%d x %d)", entry.clip_id, *feats.matrix.shape)
        done.append((entry.clip_id, True))
    return done


def load_features(manifest, cfg, cache_dir=None, require_cache=False):
    """:class:`ClipFeatures` per manifest entry, from cache when possible."""
    out = []
    ext = make_extractor(cfg, FAMILIES)
    for entry in manifest:
        if cache_dir is not None:
            path = Path(cache_dir) / entry.clip_id
            head = _read_head(path)
            if head is not None and _fresh(head, entry, cfg):
                mat, head = load_matrix(path)
                rate = head["sample_rate"]
                times = np.arange(mat.shape[0]) * cfg.features.stft.n_hop / rate
                out.append(ClipFeatures(entry.clip_id, mat, times, head["n_samples"] / rate))
                continue
            if require_cache:
                raise DataError(f"no up-to-date feature cache for {entry.clip_id} in {cache_dir}; "
                                f"run 'vcount extract' first")
        out.append(clip_features(load_clip(entry.clip, cfg.sample_rate), ext))
    return out


def load_annotation_sets(manifest, cfg):
    return [load_annotations(e.annotation, duration=cfg.clip_duration) for e in manifest]


# -- models --------------------------------------------------------------------


def save_counter(counter, path, cfg):
    extra = {
        "families": list(counter.features.families),
        "t_d": counter.t_d,
        "stride": counter.stride,
        "n_train_rows": int(counter.n_train_rows_),
        "features": cfg.features.to_dict(),
    }
    save_model(counter.regressor_, path, extra)


def load_counter(path, cfg):
    """Rebuild a fitted :class:`VehicleCounter`; feature settings come from the file."""
    reg, extra = load_model(path)
    cfg = replace(cfg, features=FeatureConfig.from_dict(extra["features"]), t_d=extra["t_d"])
    counter = make_counter(cfg, tuple(extra["families"]))
    counter.regressor_ = reg
    counter.n_train_rows_ = extra["n_train_rows"]
    return counter, cfg


# -- experiments ---------------------------------------------------------------


def train(manifest, cfg, cache_dir=None, families=None, require_cache=False):
    if len(manifest) == 0:
        raise ValueError("cannot train on an empty manifest")
    feats = load_features(manifest, cfg, cache_dir, require_cache)
    anns = load_annotation_sets(manifest, cfg)
    return make_counter(cfg, families).fit(feats, anns)


def evaluate(counter, manifest, cfg, cache_dir=None):
    feats = load_features(manifest, cfg, cache_dir)
    anns = load_annotation_sets(manifest, cfg)
    return counter.sweep(feats, anns, cfg.detection.n_thresholds)


def crossval(manifest, cfg, k=None, cache_dir=None, families=None):
    """k-fold CV over clips; returns ``(pooled_report, [fold_report, ...])``."""
    k = cfg.k if k is None else k
    folds = split_kfold(manifest, k, cfg.seed)
    reports = []
    for i, (tr, te) in enumerate(folds):
        log.info("fold %d/%d: %d train, %d test clips", i + 1, k, len(tr), len(te))
        counter = train(tr, cfg, cache_dir, families)
        reports.append(evaluate(counter, te, cfg, cache_dir))
    pooled = reports[0]
    for r in reports[1:]:
        pooled = pooled + r
    return pooled, reports


def cross_location(manifest, cfg, test_locations, cache_dir=None, families=None):
    """Train on every location not in ``test_locations``, test on those."""
    test_locations = set(test_locations)
    tr = manifest.select(locations=set(range(1, 7)) - test_locations)
    te = manifest.select(locations=test_locations)
    if not len(tr) or not len(te):
        raise ValueError("cross-location split leaves an empty side")
    counter = train(tr, cfg, cache_dir, families)
    return evaluate(counter, te, cfg, cache_dir)


def ablation_run(manifest, subsets, cfg, cache_dir=None, test_locations=None):
    """Evaluate each feature subset; rows are ``(name, nauc, efp %, delta_efp %, report)``.

    Uses k-fold CV, or a cross-location split when ``test_locations`` is given.
    """
    rows = []
    for subset in subsets:
        fams = parse_subset(subset) if isinstance(subset, str) else tuple(subset)
        if not fams:
            raise ValueError("feature subset must not be empty")
        if test_locations:
            report = cross_location(manifest, cfg, test_locations, cache_dir, fams)
        else:
            report, _ = crossval(manifest, cfg, cfg.k, cache_dir, fams)
        s = report.summary()
        rows.append(("+".join(fams), s.nauc, s.efp, s.delta_efp, report))
    return rows


def write_ablation(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["features", "nauc", "efp_percent", "delta_efp_percent", "threshold"])
        for name, n, e, d, report in rows:
            thr = report.summary().threshold
            writer.writerow([name, f"{n:.4f}", f"{e:.2f}", f"{d:.2f}", f"{thr:.4f}"])


def write_fold_counts(reports, path):
    """Per-fold, per-threshold counts so pooled totals can be audited."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fold", "threshold", "tp", "fp", "fn", "n_true"])
        for i, r in enumerate(reports):
            for t, tp, fp, fn in zip(r.thresholds, r.tp, r.fp, r.fn):
                writer.writerow([i, f"{t:.6f}", int(tp), int(fp), int(fn), r.n_true])


__all__ = [
    "ABLATION_SUBSETS", "ablation_run", "cross_location", "crossval", "evaluate",
    "extract", "load_counter", "load_features", "make_counter", "save_counter", "train",
]
