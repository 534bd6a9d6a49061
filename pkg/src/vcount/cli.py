"""``vcount`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as exp
from .config import load_config, write_config
from .dataset import load_annotations, load_clip, load_manifest, synth_dataset
from .detector import count, write_detections, write_summary
from .errors import DataError, NumericalError
from .features import parse_subset, save_matrix

log = logging.getLogger("vcount")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag -> (config section, key)
_FLAG_KEYS = {
    "n_window": ("stft", "n_window"), "n_hop": ("stft", "n_hop"),
    "context": ("features", "context"), "n_mel": ("features", "n_mel"),
    "f_min": ("features", "f_min"), "f_max": ("features", "f_max"),
    "trf_percentile": ("features", "trf_percentile"),
    "C": ("svr", "C"), "epsilon": ("svr", "epsilon"), "kernel": ("svr", "kernel"),
    "gamma": ("svr", "gamma"), "tol": ("svr", "tol"), "stride": ("svr", "stride"),
    "max_iter": ("svr", "max_iter"),
    "prominence": ("detection", "prominence"), "threshold": ("detection", "threshold"),
    "t_d": ("run", "t_d"), "families": ("run", "families"), "k": ("run", "k"), "seed": ("run", "seed"),
}


def _add_config_flags(p):
    g = p.add_argument_group("configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="INI config file")
    g.add_argument("--n-window", type=int)
    g.add_argument("--n-hop", type=int)
    g.add_argument("--context", type=int, help="K: context frames each side")
    g.add_argument("--n-mel", type=int)
    g.add_argument("--f-min", type=float)
    g.add_argument("--f-max", type=float)
    g.add_argument("--trf-percentile", type=float)
    g.add_argument("--C", type=float)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--kernel", choices=["rbf", "linear"])
    g.add_argument("--gamma", help='RBF width or "auto"')
    g.add_argument("--tol", type=float)
    g.add_argument("--stride", type=int, help="training frame subsampling")
    g.add_argument("--max-iter", type=int)
    g.add_argument("--prominence", type=float)
    g.add_argument("--t-d", type=float, help="distance clipping level, seconds")
    g.add_argument("--families", help='feature families, e.g. "HFP+LMS" or "all"')
    g.add_argument("--seed", type=int)


def _config(args):
    overrides = {}
    for flag, (section, key) in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    try:
        return load_config(args.config, overrides)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _manifest(args):
    manifest = load_manifest(args.manifest)
    if getattr(args, "split", None):
        manifest = manifest.select(split=args.split)
    if getattr(args, "locations", None):
        manifest = manifest.select(locations=_locations(args.locations))
    return manifest


def _locations(text):
    try:
        locs = {int(p) for p in text.split(",") if p.strip()}
    except ValueError:
        raise UsageError(f"bad location list {text!r}") from None
    if not locs <= set(range(1, 7)):
        raise UsageError("locations must be in 1..6")
    return locs


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cache(args):
    return Path(args.cache) if args.cache else Path(args.out) / "features"


def _report(report, out, stem, **extra):
    report.to_csv(out / f"{stem}.csv")
    summary = report.summary()
    summary.to_json(out / f"{stem}_summary.json", n_true=int(report.n_true), **extra)
    print(f"NAUC={summary.nauc:.4f}  EFP={summary.efp:.2f}% (delta {summary.delta_efp:.2f}%)  "
          f"threshold={summary.threshold:.4f}s  RVCE@EFP={summary.rvce_at_efp:.2f}%")
    return summary


# -- commands ------------------------------------------------------------------


def cmd_synth(args):
    if args.n_clips < 0:
        raise UsageError("--n-clips must be >= 0")
    manifest = synth_dataset(args.out, args.n_clips, args.seed, args.mean_vehicles, args.min_gap,
                             args.noise, args.duration, args.n_test)
    print(f"wrote {len(manifest)} clips to {manifest.path}")


def cmd_extract(args):
    cfg = _config(args)
    manifest = _manifest(args)
    _out(args)
    done = exp.extract(manifest, cfg, _cache(args), force=args.force)
    written = sum(w for _, w in done)
    write_config(cfg, Path(args.out) / "config.ini")
    print(f"{written} extracted, {len(done) - written} up to date")


def cmd_train(args):
    cfg = _config(args)
    manifest = _manifest(args)
    if not len(manifest):
        raise UsageError("no clips selected for training")
    out = _out(args)
    counter = exp.train(manifest, cfg, _cache(args), require_cache=True)
    exp.save_counter(counter, out / args.model_name, cfg)
    reg = counter.regressor_
    print(f"trained on {counter.n_train_rows_} rows: {reg.dual_coef_.size} support vectors, "
          f"{reg.n_iter_} iterations, KKT gap {reg.kkt_gap_:.2e}")
    if not reg.converged_:
        log.warning("solver hit the iteration cap before reaching tol")


def cmd_predict(args):
    cfg = _config(args)
    counter, cfg = exp.load_counter(args.model, cfg)
    manifest = _manifest(args)
    out = _out(args) / "predictions"
    out.mkdir(exist_ok=True)
    feats = exp.load_features(manifest, cfg, _cache(args))
    for f, pred in counter.predict_distance(feats):
        save_matrix(out / f.clip_id, pred, {"clip_id": f.clip_id, "kind": "predicted_cvmd",
                                            "hop_s": float(f.frame_times[1] - f.frame_times[0])})
    print(f"wrote {len(feats)} predictions to {out}")


def cmd_count(args):
    cfg = _config(args)
    counter, cfg = exp.load_counter(args.model, cfg)
    threshold = cfg.detection.threshold if args.threshold is None else args.threshold
    if not 0 <= threshold <= counter.t_d:
        raise UsageError(f"--threshold must lie in [0, {counter.t_d}]")
    clip = load_clip(args.clip, cfg.sample_rate)
    counter.set_params(threshold=threshold)
    minima = counter.detect([clip])[0]
    hits = [m for m in minima if m.value < threshold]
    out = _out(args) if args.out else None
    if args.annotations:
        ann = load_annotations(args.annotations, duration=clip.duration)
        outcome = counter.outcomes([clip], [ann])[0][1]
        n = count(outcome)
        if out:
            write_detections(out / "detections.csv", [(clip.id, outcome)])
            write_summary(out / "clip_summary.csv", [(clip.id, outcome)])
    else:
        n = len(hits)
        if out:
            _write_unlabelled(out / "detections.csv", clip.id, hits)
    print(n)


def _write_unlabelled(path, clip_id, hits):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("clip_id,time_s,value,class\n")
        for m in hits:
            fh.write(f"{clip_id},{m.time:.4f},{m.value:.6f},\n")


def cmd_sweep(args):
    cfg = _config(args)
    counter, cfg = exp.load_counter(args.model, cfg)
    manifest = _manifest(args)
    if not len(manifest):
        raise UsageError("no clips selected")
    out = _out(args)
    report = exp.evaluate(counter, manifest, cfg, _cache(args))
    summary = _report(report, out, "sweep")
    feats = exp.load_features(manifest, cfg, _cache(args))
    anns = exp.load_annotation_sets(manifest, cfg)
    outcomes = counter.outcomes(feats, anns, threshold=summary.threshold)
    write_detections(out / "detections.csv", outcomes)
    write_summary(out / "clip_summary.csv", outcomes)


def cmd_crossval(args):
    cfg = _config(args)
    manifest = _manifest(args)
    k = cfg.k
    if not 2 <= k <= len(manifest):
        raise UsageError(f"k={k} must lie in [2, {len(manifest)}] (number of clips)")
    out = _out(args)
    exp.extract(manifest, cfg, _cache(args))
    pooled, reports = exp.crossval(manifest, cfg, k, _cache(args))
    _report(pooled, out, "crossval", k=k, fold_sizes=[int(r.n_true) for r in reports])
    exp.write_fold_counts(reports, out / "crossval_folds.csv")


def cmd_ablate(args):
    cfg = _config(args)
    manifest = _manifest(args)
    try:
        subsets = [parse_subset(s) for s in args.subsets.split(",")]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    test_locs = _locations(args.test_locations) if args.test_locations else None
    if not test_locs and not 2 <= cfg.k <= len(manifest):
        raise UsageError(f"k={cfg.k} must lie in [2, {len(manifest)}]")
    out = _out(args)
    exp.extract(manifest, cfg, _cache(args))
    rows = exp.ablation_run(manifest, subsets, cfg, _cache(args), test_locs)
    exp.write_ablation(rows, out / "ablation.csv")
    for name, nauc, efp, delta, _ in rows:
        print(f"{name:<16} NAUC={nauc:.3f}  EFP={efp:.2f}% ({delta:.2f})")


def build_parser():
    parser = _Parser(prog="vcount", description="Acoustic vehicle counting by distance regression.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-clips", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-vehicles", type=float, default=3.0)
    p.add_argument("--min-gap", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--n-test", type=int, default=0, help="label the last N clips as split 'test'")
    p.set_defaults(func=cmd_synth)

    def data_cmd(name, help, func, manifest=True, model=False):
        p = sub.add_parser(name, help=help)
        if manifest:
            p.add_argument("--manifest", required=True, type=Path)
            p.add_argument("--split", help="only entries with this split label")
            p.add_argument("--locations", help="only these locations, e.g. 1,2,3")
        if model:
            p.add_argument("--model", required=True, type=Path, help="model path (without suffix)")
        p.add_argument("--out", default="out")
        p.add_argument("--cache", help="feature cache directory (default OUT/features)")
        _add_config_flags(p)
        p.set_defaults(func=func)
        return p

    p = data_cmd("extract", "compute and cache feature matrices", cmd_extract)
    p.add_argument("--force", action="store_true")
    p = data_cmd("train", "train the distance regressor", cmd_train)
    p.add_argument("--model-name", default="model")
    data_cmd("predict", "write predicted distances", cmd_predict, model=True)
    p = data_cmd("count", "count vehicles in one clip", cmd_count, manifest=False, model=True)
    p.add_argument("--clip", required=True, type=Path)
    p.add_argument("--annotations", type=Path, help="optional ground truth for TP/FP labels")
    p.add_argument("--threshold", type=float, help="detection threshold, seconds")
    p.set_defaults(out=None)
    data_cmd("sweep", "threshold sweep and metrics", cmd_sweep, model=True)
    p = data_cmd("crossval", "k-fold cross-validation", cmd_crossval)
    p.add_argument("--k", type=int)
    p = data_cmd("ablate", "feature-subset ablation", cmd_ablate)
    p.add_argument("--subsets", default=",".join(exp.ABLATION_SUBSETS))
    p.add_argument("--k", type=int)
    p.add_argument("--test-locations", help="cross-location protocol instead of k-fold")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"vcount: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"vcount: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"vcount: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"vcount: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
