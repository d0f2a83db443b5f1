"""Command-line entry point.

Exit status is 0 on success, 1 for usage errors (bad flags, bad config)
and 2 for data errors (unreadable or inconsistent inputs, failed fits).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, synth
from .classify import TrainingError
from .config import Config, ConfigError, derive_seed, load_config
from .geometry import GeometryError
from .imagecore import ImageError, load_pgm, read_label_pgm, write_label_pgm, write_pgm, write_ppm
from .segment import colourize, error_rate, summarize, write_stats_csv
from .surf import DetectorParams, positions, read_features_csv, write_features_csv
from .texmodel import CLASS_NAMES, TrainingSet, TrainingSetError, pca2, split_dense, variability_matrix

log = logging.getLogger("salientseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DATA_ERRORS = (ImageError, TrainingSetError, TrainingError, GeometryError, OSError, ValueError)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _stem(path: str | Path) -> str:
    return Path(path).stem


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen_mosaic(args, cfg: Config) -> int:
    out = _out_dir(args.out)
    root = cfg.seed if args.seed is None else args.seed
    specs = []
    if args.spec:
        specs.append(synth.MosaicSpec.from_dict(json.loads(Path(args.spec).read_text())))
    else:
        for i in range(args.count):
            specs.append(synth.random_spec(derive_seed(root, "mosaic", args.start + i), args.width, args.height))
    for i, spec in enumerate(specs):
        name = f"{args.prefix}_{args.start + i:03d}"
        img, labels = synth.render(spec)
        write_pgm(out / f"{name}.pgm", img)
        write_label_pgm(out / f"{name}_labels.pgm", labels)
        (out / f"{name}.json").write_text(json.dumps(spec.to_dict(), indent=1))
        fr = synth.class_fractions(labels)
        log.info("%s: class fractions %.3f %.3f %.3f", name, *fr)
    return EXIT_OK


def cmd_extract(args, cfg: Config) -> int:
    if args.labels and len(args.labels) != len(args.images):
        raise UsageError("--labels needs one label map per image")
    out = _out_dir(args.out)
    merged = []
    for i, path in enumerate(args.images):
        img = load_pgm(path)
        if args.labels:
            feats = pipeline.extract_labelled(img, read_label_pgm(args.labels[i]), cfg).features
        else:
            feats = pipeline.extract_image(img, cfg)
        write_features_csv(out / f"{_stem(path)}.csv", feats)
        merged.extend(feats)
        log.info("%s: %d features", path, len(feats))
    if args.merged:
        write_features_csv(args.merged, merged)
    if args.labels:
        counts = TrainingSet(merged).counts()
        for c, n in counts.items():
            print(f"class {c} ({CLASS_NAMES[c]}): {n}")
        print(f"total: {len(merged)}")
    return EXIT_OK


def _write_matrix(path: Path, m: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", *(CLASS_NAMES[c] for c in (1, 2, 3))])
        for c, row in zip((1, 2, 3), m):
            w.writerow([CLASS_NAMES[c], *(format(v, ".10g") for v in row)])


def cmd_train(args, cfg: Config) -> int:
    feats = [f for path in args.features for f in read_features_csv(path)]
    ts = TrainingSet(feats)
    trained = pipeline.train(ts, cfg)
    pipeline.save_model(args.out, trained)
    print(f"{cfg.classifier}: {len(ts)} features, {len(trained.filtered)} after filtering -> {args.out}")
    if trained.result is not None:
        from .classify import write_training_log
        log_path = Path(args.log or Path(args.out).with_suffix(".log.csv"))
        write_training_log(log_path, trained.result)
        print(f"loss {trained.result.losses[0]:.6g} -> {trained.result.best_loss:.6g}")
    if args.report:
        rep = _out_dir(args.report)
        from . import plotting
        _write_matrix(rep / "variability.csv", variability_matrix(trained.filtered))
        dense, _ = split_dense(trained.filtered)
        try:
            _write_matrix(rep / "variability_dense.csv", variability_matrix(dense))
        except TrainingSetError as e:
            log.warning("dense subset: %s", e)
        coords, explained = pca2(trained.filtered.descriptors)
        lab = trained.filtered.labels
        with open(rep / "pca.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pc1", "pc2", "label"])
            for (a, b), c in zip(coords, lab):
                w.writerow([format(a, ".10g"), format(b, ".10g"), int(c)])
        plotting.pca_scatter(coords, lab, explained, rep / "pca.png")
        if trained.result is not None:
            plotting.loss_curve(trained.result.losses, rep / "loss.png", cfg.train.algorithm)
    return EXIT_OK


def _save_seg(out: Path, name: str, seg) -> None:
    write_label_pgm(out / f"{name}_seg.pgm", seg.classes)
    write_ppm(out / f"{name}_seg.ppm", colourize(seg.classes))


def cmd_segment(args, cfg: Config) -> int:
    if args.truth and len(args.truth) != len(args.images):
        raise UsageError("--truth needs one label map per image")
    out = _out_dir(args.out)
    clf = pipeline.load_model(args.model, cfg)
    rates = []
    for i, path in enumerate(args.images):
        img = load_pgm(path)
        seg, feats = pipeline.segment_image(img, clf, cfg)
        if not feats:
            print(f"warning: {path}: no features detected, map is all 0", file=sys.stderr)
        _save_seg(out, _stem(path), seg)
        if args.truth:
            rates.append(error_rate(seg, read_label_pgm(args.truth[i])))
            log.info("%s: error %.2f %%", path, 100 * rates[-1])
        if args.report:
            from . import plotting
            plotting.segmentation_overlay(img.data, seg.classes, _out_dir(args.report) / f"{_stem(path)}.png",
                                          positions(feats))
    if rates:
        stats = {args.name: summarize(rates)}
        write_stats_csv(out / "stats.csv", stats)
        _print_stats(stats)
    return EXIT_OK


def _print_stats(table) -> None:
    print(f"{'':12s}" + "".join(f"{k:>9s}" for k in ("mean", "std", "min", "max")))
    for name, s in table.items():
        print(f"{name:12s}" + "".join(f"{100 * s[k]:9.2f}" for k in ("mean", "std", "min", "max")))


def cmd_track(args, cfg: Config) -> int:
    if len(args.frames) < 2:
        raise UsageError("tracking needs at least two frames")
    out = _out_dir(args.out)
    tracker = pipeline.Tracker(pipeline.load_model(args.model, cfg), cfg)
    frames = []
    for path in args.frames:
        fr = tracker.step(load_pgm(path))
        _save_seg(out, f"frame_{fr.index:04d}", fr.seg)
        frames.append(fr)
        print(",".join(map(str, fr.track_row())))
    pipeline.write_track_logs(out / "track.csv", out / "pose.csv", frames)
    if args.report:
        from . import plotting
        posed = [f for f in frames if f.centre is not None]
        if posed:
            meas = np.array([f.centre for f in posed])
            pred = np.array([f.predicted if f.predicted is not None else np.full(3, np.nan) for f in posed])
            plotting.track_plot([f.index for f in posed], meas, pred, _out_dir(args.report) / "track.png")
    return EXIT_OK


def _parse_variant(text: str, base: DetectorParams) -> tuple[str, DetectorParams]:
    name, _, rest = text.partition(":")
    kw = {}
    for item in filter(None, rest.split(",")):
        k, sep, v = item.partition("=")
        if not sep or k not in DetectorParams.__dataclass_fields__:
            raise UsageError(f"bad detector variant {text!r}")
        kw[k] = type(getattr(base, k))(float(v)) if k != "threshold" else float(v)
    try:
        return name, DetectorParams(**{**base.__dict__, **kw})
    except ValueError as e:
        raise UsageError(str(e)) from e


def cmd_bench_match(args, cfg: Config) -> int:
    if len(args.pairs) % 2:
        raise UsageError("--pairs takes an even number of images")
    variants = [_parse_variant(v, cfg.detector) for v in (args.variant or ["default"])]
    pairs = [(args.pairs[i], args.pairs[i + 1]) for i in range(0, len(args.pairs), 2)]
    rows = []
    for name, det in variants:
        for j, (a, b) in enumerate(pairs):
            rows.append(pipeline.bench_pair(load_pgm(a), load_pgm(b), name, det, cfg,
                                            cfg.derive_seed("bench", name, j)))
    pipeline.write_bench_csv(args.out, rows)
    for r in rows:
        print(f"{r['impl']:>12s} {r['detected1']:6d} {r['detected2']:6d} {r['matched']:6d} "
              f"{r['inliers']:6d} {r['ratio']:7.3f}")
    if args.report:
        from . import plotting
        plotting.bench_chart(rows, Path(args.report))
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    if len(args.seg) != len(args.truth):
        raise UsageError("--seg and --truth need the same number of maps")
    rates = [error_rate(read_label_pgm(s), read_label_pgm(t)) for s, t in zip(args.seg, args.truth)]
    stats = {args.name: summarize(rates)}
    write_stats_csv(args.out, stats)
    _print_stats(stats)
    if args.report:
        from . import plotting
        plotting.error_boxplot({args.name: rates}, Path(args.report))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> Parser:
    p = Parser(prog="salientseg", description="Texture segmentation from sparse blob features.")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. segment.sigma=32 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen-mosaic", help="write synthetic mosaics with label maps")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--start", type=int, default=0, help="index of the first mosaic")
    g.add_argument("--seed", type=int, help="root seed (default: config seed)")
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--height", type=int, default=256)
    g.add_argument("--prefix", default="mosaic")
    g.add_argument("--spec", help="JSON mosaic spec; renders exactly one mosaic")
    g.set_defaults(func=cmd_gen_mosaic)

    e = sub.add_parser("extract", help="detect and describe features")
    e.add_argument("images", nargs="+")
    e.add_argument("--labels", nargs="+", help="label maps, one per image")
    e.add_argument("--out", required=True, help="directory for per-image CSVs")
    e.add_argument("--merged", help="also write all features to this CSV")
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", help="fit the configured classifier")
    t.add_argument("features", nargs="+", help="labelled feature CSVs")
    t.add_argument("--out", required=True, help="model file")
    t.add_argument("--log", help="training log CSV (MLP only)")
    t.add_argument("--report", help="directory for variability, PCA tables and figures")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", help="segment images with a trained model")
    s.add_argument("images", nargs="+")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--truth", nargs="+", help="ground-truth label maps, one per image")
    s.add_argument("--name", default="model", help="row name in the stats table")
    s.add_argument("--report", help="directory for overlay figures")
    s.set_defaults(func=cmd_segment)

    k = sub.add_parser("track", help="segment an ordered frame sequence with tracking")
    k.add_argument("frames", nargs="+")
    k.add_argument("--model", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--report", help="directory for the trajectory figure")
    k.set_defaults(func=cmd_track)

    b = sub.add_parser("bench-match", help="detected/matched/inlier counts on image pairs")
    b.add_argument("--pairs", nargs="+", required=True, help="images, two per pair")
    b.add_argument("--variant", action="append",
                   help="NAME[:key=value,...] detector variant, e.g. t3:threshold=3e-4 (repeatable)")
    b.add_argument("--out", required=True, help="CSV table")
    b.add_argument("--report", help="bar chart file")
    b.set_defaults(func=cmd_bench_match)

    v = sub.add_parser("eval", help="error statistics of segmentation maps against ground truth")
    v.add_argument("--seg", nargs="+", required=True)
    v.add_argument("--truth", nargs="+", required=True)
    v.add_argument("--name", default="model")
    v.add_argument("--out", required=True, help="stats CSV")
    v.add_argument("--report", help="box plot file")
    v.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as e:
        print(f"salientseg: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"salientseg: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, cfg)
    except UsageError as e:
        print(f"salientseg: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"salientseg: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
