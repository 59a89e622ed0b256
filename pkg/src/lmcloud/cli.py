"""Command-line entry point: ``lmcloud <command> [flags]``.

Commands: synth, scan, train, predict, evaluate, report.  Data goes to
files under --out; progress and log lines go to stderr (level from the
LANDMARKS_LOG environment variable).  Exit status: 0 ok, 2 usage, 3 data
error, 4 internal error.  Failures print one line::

    error: kind=<ExceptionName> code=<status> msg=<message>
"""

import argparse
import dataclasses
import datetime as dt
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import archive, ensemble, metrics, synth
from .errors import DataError, IoFailure, LandmarkError, WrongLandmark
from .masks import coastline_from_landcover, cover_grid, landcover_from_votes, screen_labels
from .radiometry import load_calibration
from .sampling import SampleSpec
from .solar import annotate_sza
from .svm import DEFAULT_C_GRID, DEFAULT_GAMMA_GRID, DEFAULT_TOL

LOG = logging.getLogger("lmcloud")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
PRED_SUFFIX = ".pred.lmch"


class UsageError(LandmarkError):
    pass


@dataclasses.dataclass
class RunConfig:
    archive: Path = None
    cal: Path = None
    out: Path = None
    seed: int = 0
    workers: int = 1
    landmarks: tuple = None
    train_size: int = 10000
    test_size: int = 100000
    folds: int = 10
    grid: tuple = ()
    exclude_defaults: bool = True
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if self.folds < 2:
            raise UsageError("--folds must be >= 2")
        if self.train_size < 1 or self.test_size < 1:
            raise UsageError("--train-size and --test-size must be >= 1")

    @classmethod
    def from_args(cls, args):
        fields = {f.name for f in dataclasses.fields(cls)}
        values = {k: v for k, v in vars(args).items() if k in fields and v is not None}
        if "grid" in values:
            values["grid"] = parse_grid(Path(values["grid"]).read_text())
        else:
            values["grid"] = tuple((c, g) for c in DEFAULT_C_GRID for g in DEFAULT_GAMMA_GRID)
        return cls(**values)

    @property
    def exclude(self):
        return None if self.exclude_defaults else {}


def parse_grid(text):
    """``C = 1, 10`` and ``gamma = 0.5, 2`` lines -> list of (C, gamma)."""
    values = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rhs = line.partition("=")
        key = key.strip()
        if not sep or key not in ("C", "gamma"):
            raise UsageError(f"grid file: cannot parse {line!r}")
        try:
            values[key] = [float(v) for v in rhs.replace(",", " ").split()]
        except ValueError:
            raise UsageError(f"grid file: bad number in {line!r}") from None
    if not values.get("C") or not values.get("gamma"):
        raise UsageError("grid file needs non-empty C and gamma lines")
    return tuple((c, g) for c in values["C"] for g in values["gamma"])


def _landmark_list(text):
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad landmark list {text!r}") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


# -- commands -----------------------------------------------------------------

def _registry(cfg):
    if cfg.archive is None:
        raise UsageError("--archive is required")
    reg = archive.scan_archive(cfg.archive, exclude=cfg.exclude, workers=cfg.workers)
    if cfg.landmarks:
        missing = sorted(set(cfg.landmarks) - set(reg.entries))
        if missing:
            raise WrongLandmark(f"landmark(s) {missing} not in archive")
    return reg


def _selected(cfg, reg):
    entries = reg.included()
    if cfg.landmarks:
        entries = [e for e in entries if e.num in cfg.landmarks]
    return entries


def cmd_synth(args):
    spec = synth.SynthSpec(
        rows=args.rows, cols=args.cols, start=dt.datetime.strptime(args.start, "%Y-%m-%d"),
        days=args.days, cadence_minutes=args.cadence, coverage=args.coverage,
        clear_fraction=args.clear_fraction, blob_size=args.blob_size, contrast=args.contrast,
        noise=args.noise, nodata_rate=args.nodata_rate, seed=args.seed)
    reg = synth.generate_archive(spec, args.out, workers=args.workers)
    LOG.info("wrote %d landmark(s) to %s", len(reg), args.out)
    return EXIT_OK


def cmd_scan(args):
    cfg = RunConfig.from_args(args)
    reg = _registry(cfg)
    archive.ensure_dir(cfg.out)
    archive.write_registry(reg, Path(cfg.out) / "registry.csv")
    LOG.info("%d landmark(s), %d included", len(reg), len(reg.included()))
    return EXIT_OK


def cmd_train(args):
    cfg = RunConfig.from_args(args)
    cal = load_calibration(cfg.cal)
    reg = _registry(cfg)
    entries = _selected(cfg, reg)
    out = archive.ensure_dir(cfg.out)
    spec = SampleSpec(n_train=cfg.train_size, n_test=cfg.test_size, seed=cfg.seed)
    failures = []

    def on_error(k, exc):
        LOG.warning("landmark %d skipped: %s", entries[k].num, exc)
        failures.append((entries[k].num, type(exc).__name__, str(exc)))

    loaders = [lambda e=e: archive.load_landmark(e) for e in entries]
    models = ensemble.train_landmarks(loaders, spec, cfg.grid, cal, folds=cfg.folds, tol=cfg.tol,
                                      workers=cfg.workers, on_error=on_error)
    reports = []
    for ens in models:
        ensemble.save_ensemble(ens, out / f"LM{ens.num:03d}")
        reports.append(metrics.evaluate(ens))
    metrics.write_summary(reports, out / "summary.csv")
    metrics.write_histograms(reports, out)
    with open(out / "failures.csv", "w") as fh:
        fh.write("landmark,kind,msg\n")
        for num, kind, msg in failures:
            fh.write(f"{num},{kind},\"{msg}\"\n")
    LOG.info("trained %d landmark(s), %d failed", len(models), len(failures))
    if not models and failures:
        raise DataError(f"no landmark could be trained ({len(failures)} failed)")
    return EXIT_OK


def _bundle_dirs(path):
    path = Path(path)
    if (path / "manifest.txt").is_file():
        return [path]
    dirs = sorted(p.parent for p in path.glob("LM*/manifest.txt"))
    if not dirs:
        raise IoFailure(f"no ensemble bundle under {path}")
    return dirs


def cmd_predict(args):
    cfg = RunConfig.from_args(args)
    cal = load_calibration(cfg.cal)
    out = archive.ensure_dir(cfg.out)
    bundles = [ensemble.load_ensemble(d) for d in _bundle_dirs(args.bundle)]
    reg = _registry(cfg)
    for ens in bundles:
        nums = cfg.landmarks or (ens.num,)
        for num in nums:
            if num != ens.num:
                raise WrongLandmark(f"bundle is for landmark {ens.num}, asked to predict landmark {num}")
            chips = archive.load_landmark(reg[num])
            folder = archive.ensure_dir(out / f"LM{num:03d}")
            for chip in chips:
                mask = ensemble.predict_chip(ens, chip, cal)
                archive.write_grid(mask, folder / f"LM{num:03d}_{chip.time}{PRED_SUFFIX}",
                                   name=f"LM{num} prediction", time=chip.time)
            LOG.info("LM%d: %d chip(s) predicted", num, len(chips))
    return EXIT_OK


def _chip_reports(cfg, bundles, pred_dir):
    reg = _registry(cfg)
    reports = []
    for ens in bundles:
        chips = annotate_sza(archive.load_landmark(reg[ens.num]))
        lc = landcover_from_votes(chips)
        coast = coastline_from_landcover(lc)
        folder = Path(pred_dir) / f"LM{ens.num:03d}"
        preds, kept = [], []
        for chip in chips:
            path = folder / f"LM{ens.num:03d}_{chip.time}{PRED_SUFFIX}"
            if path.is_file():
                preds.append(archive.read_grid(path)[0])
                kept.append(chip)
        if not kept:
            raise IoFailure(f"no predictions for landmark {ens.num} under {folder}")
        reports.append(metrics.evaluate_chips(ens, kept, preds, cover_grid(lc, coast),
                                              suspect_of=lambda c: screen_labels(c, coast).suspect))
    return reports


def _emit(reports, out):
    metrics.write_report_files(reports, out)
    metrics.write_histograms(reports, out)
    from . import plots
    plots.write_figures(reports, out)


def cmd_evaluate(args):
    cfg = RunConfig.from_args(args)
    out = archive.ensure_dir(cfg.out)
    dirs = _bundle_dirs(args.bundle)
    if args.predictions:
        bundles = [ensemble.load_ensemble(d) for d in dirs]
        reports = _chip_reports(cfg, bundles, args.predictions)
    else:
        reports = [metrics.evaluate(ensemble.load_ensemble(d, with_test_sets=True)) for d in dirs]
    if cfg.landmarks:
        reports = [r for r in reports if r.num in cfg.landmarks]
    _emit(reports, out)
    sys.stderr.write(metrics.table_summary(reports))
    return EXIT_OK


def cmd_report(args):
    paths = sorted(Path(args.reports).glob("report_LM*.json"))
    if not paths:
        raise IoFailure(f"no report_LM*.json under {args.reports}")
    reports = [metrics.load_report(p) for p in paths]
    out = archive.ensure_dir(args.out)
    _emit(reports, out)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _common(p, archive_required=False):
    p.add_argument("--archive", type=Path, required=archive_required, help="archive root directory")
    p.add_argument("--cal", type=Path, help="calibration table (default: packaged MSG-2 nominal values)")
    p.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker processes (default: logical CPU count)")
    p.add_argument("--landmarks", type=_landmark_list, help="comma-separated landmark numbers")
    p.add_argument("--exclude-defaults", action=argparse.BooleanOptionalAction, default=True,
                   help="apply the default exclusion of landmarks 91 and 98")


def build_parser():
    parser = argparse.ArgumentParser(prog="lmcloud", description="Landmark cloud masking with per-range SVMs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic archive")
    p.add_argument("--out", type=Path, required=True, help="archive root to create")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--days", type=_positive_int, default=30, help="number of days")
    p.add_argument("--start", default="2010-03-01", help="first day, YYYY-MM-DD")
    p.add_argument("--cadence", type=_positive_int, default=15, help="minutes between chips")
    p.add_argument("--rows", type=_positive_int, default=16, help="chip rows")
    p.add_argument("--cols", type=_positive_int, default=16, help="chip columns")
    p.add_argument("--coverage", type=float, default=0.5, help="mean cloud fraction of cloudy chips")
    p.add_argument("--clear-fraction", type=float, default=0.1, help="share of cloud-free chips")
    p.add_argument("--blob-size", type=float, default=2.0, help="cloud smoothing sigma, pixels")
    p.add_argument("--contrast", type=float, default=6.0, help="cloud signal in noise sigmas")
    p.add_argument("--noise", type=float, default=0.01, help="reflectance noise sigma")
    p.add_argument("--nodata-rate", type=float, default=0.0, help="share of nodata mask pixels")
    p.add_argument("--workers", type=_positive_int, default=1, help="worker processes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("scan", help="index an archive into registry.csv")
    _common(p, archive_required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("train", help="train one ensemble bundle per landmark")
    _common(p, archive_required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory for bundles and summaries")
    p.add_argument("--seed", type=int, default=0, help="sampling and CV seed")
    p.add_argument("--train-size", type=_positive_int, default=10000, help="training pixels per range")
    p.add_argument("--test-size", type=_positive_int, default=100000, help="test pixels per range")
    p.add_argument("--folds", type=_positive_int, default=10, help="cross-validation folds")
    p.add_argument("--grid", type=Path, help="grid file with 'C = ...' and 'gamma = ...' lines")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="SMO stopping tolerance")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-chip cloud masks with trained bundles")
    _common(p, archive_required=True)
    p.add_argument("--bundle", type=Path, required=True, help="bundle directory or train output directory")
    p.add_argument("--out", type=Path, required=True, help="output directory for masks")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score bundles on held-out pixels or on predicted masks")
    _common(p)
    p.add_argument("--bundle", type=Path, required=True, help="bundle directory or train output directory")
    p.add_argument("--predictions", type=Path, help="predict output directory (scores chips; needs --archive)")
    p.add_argument("--out", type=Path, required=True, help="report directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="re-render tables, CSVs and figures from report JSON files")
    p.add_argument("--reports", type=Path, required=True, help="directory holding report_LM*.json")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def _error_line(exc, code):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    return f"error: kind={type(exc).__name__} code={code} msg={msg}\n"


def main(argv=None):
    level = os.environ.get("LANDMARKS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except Exception as exc:   # noqa: BLE001
        if isinstance(exc, UsageError):
            code = EXIT_USAGE
        elif isinstance(exc, DataError):
            code = EXIT_DATA
        else:
            LOG.debug("internal error", exc_info=True)
            code = EXIT_INTERNAL
        sys.stderr.write(_error_line(exc, code))
    return code


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
