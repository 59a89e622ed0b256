"""Per-landmark pool of four SVMs, one per illumination range.

Training a landmark runs: sun zenith annotation, calibration, land-cover vote
and coastline band, SZA_m, partition, then for each range feature
extraction, balanced sampling, a 0-1 scaler fitted on the training split and
a cross-validated grid search.  The per-range fits are independent tasks and
can be spread over a process pool; results do not depend on the pool size.

Bundle layout (one directory per landmark)::

    manifest.txt
    model_high.svm  model_medium.svm  model_low.svm  model_night.svm
    grid_<range>.csv                 full CV surface
    test_<range>.feat / .keys        held-out pixels (raw features + keys)
    train_<range>.keys               (chip time, row, col) of every training pixel
"""

import csv
import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import archive
from .errors import CorruptBundle, RangeUnderpopulated, VersionMismatch, WrongLandmark
from .features import Regime, extract_features, fit_scaler, read_feature_table, regime_for_sza, write_feature_table
from .masks import PixelLabel, coastline_from_landcover, landcover_from_votes
from .partition import RANGES, IlluminationRange, SzaThresholds, assign_range, compute_sza_m, partition_archive
from .radiometry import calibrate_chip
from .sampling import PixelPool, SampleSpec, collect_labeled, draw_balanced
from .solar import annotate_sza
from .svm import (DEFAULT_CACHE_MB, DEFAULT_TOL, GridSearchReport, cv_grid_search, format_model,
                  parse_model)

LOG = logging.getLogger(__name__)

BUNDLE_VERSION = 1
SCALER_POLICY = "fit once per range on the full training split, reused across CV folds"


@dataclasses.dataclass(eq=False)
class EnsembleModel:
    num: int
    name: str
    thresholds: SzaThresholds
    models: dict                    # IlluminationRange -> SvmModel
    manifest: dict = dataclasses.field(default_factory=dict)
    grid_reports: dict = dataclasses.field(default_factory=dict)
    test_sets: dict = dataclasses.field(default=None, repr=False)
    shape: tuple = None
    train_keys: dict = dataclasses.field(default=None, repr=False)   # range -> set of (time, row, col)

    def __post_init__(self):
        if set(self.models) != set(RANGES):
            raise CorruptBundle(f"ensemble needs models for {[r.value for r in RANGES]}")
        for rng, model in self.models.items():
            want = Regime.NIGHT if rng is IlluminationRange.NIGHT else Regime.DAY
            if model.regime != want.value:
                raise CorruptBundle(f"{rng.value} model has regime {model.regime}")

    def model_for(self, sza):
        return self.models[assign_range(sza, self.thresholds)]

    def same_as(self, other):
        return (self.num == other.num and self.name == other.name
                and self.thresholds == other.thresholds and self.manifest == other.manifest
                and all(self.models[r].same_as(other.models[r]) for r in RANGES))


@dataclasses.dataclass
class PreparedLandmark:
    num: int
    name: str
    shape: tuple
    thresholds: SzaThresholds
    splits: dict            # IlluminationRange -> SampleSplit
    chip_counts: dict


@dataclasses.dataclass
class RangeTask:
    num: int
    range: IlluminationRange
    X: np.ndarray
    y: np.ndarray
    grid: list
    folds: int
    seed: int
    tol: float
    cache_mb: float


def derive_seed(seed, num, rng):
    """Independent, platform-stable seed for one (landmark, range) task."""
    ss = np.random.SeedSequence([int(seed), int(num), RANGES.index(IlluminationRange(rng))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _prepare_chips(chips, cal):
    chips = annotate_sza([c for c in chips])
    return [c if c.calibrated else calibrate_chip(c, cal) for c in chips]


def prepare_landmark(chips, cal, spec, folds=10):
    """Everything up to and including the train/test draw for each range."""
    if not chips:
        raise RangeUnderpopulated("high", "landmark has no chips")
    chips = _prepare_chips(chips, cal)
    nums = {c.num for c in chips}
    if len(nums) != 1:
        raise WrongLandmark(f"chips from several landmarks: {sorted(nums)}")
    lc = landcover_from_votes(chips)
    coast = coastline_from_landcover(lc)
    thresholds = SzaThresholds(compute_sza_m(c.sza for c in chips))
    parts = partition_archive(chips, thresholds)
    splits, counts = {}, {}
    for rng in RANGES:
        members = parts[rng]
        counts[rng] = len(members)
        if not members:
            raise RangeUnderpopulated(rng.value, "no chips")
        regime = Regime.NIGHT if rng is IlluminationRange.NIGHT else Regime.DAY
        pool = collect_labeled(members, lc, coast, regime)
        sub = dataclasses.replace(spec, seed=derive_seed(spec.seed, chips[0].num, rng))
        split = draw_balanced(pool, sub)
        for cls in (1, -1):
            have = int(np.sum(split.train.label == cls))
            if have < 2 * folds:
                raise RangeUnderpopulated(rng.value, f"{have} training pixels of class {cls:+d}, need {2 * folds}")
        splits[rng] = split
    return PreparedLandmark(num=chips[0].num, name=chips[0].name, shape=tuple(chips[0].shape),
                            thresholds=thresholds, splits=splits, chip_counts=counts)


def fit_range(task):
    """Scale, grid-search and retrain one range.  Pure function of the task."""
    scaler = fit_scaler(task.X)
    Xs = scaler.transform(task.X)
    model, report = cv_grid_search(Xs, task.y, task.grid, v=task.folds, seed=task.seed,
                                   tol=task.tol, cache_mb=task.cache_mb)
    model.scaler = scaler
    model.regime = (Regime.NIGHT if task.range is IlluminationRange.NIGHT else Regime.DAY).value
    return model, report


def _tasks(prep, grid, folds, seed, tol, cache_mb):
    return [RangeTask(num=prep.num, range=rng, X=prep.splits[rng].train.features,
                      y=prep.splits[rng].train.label.astype(np.float64), grid=list(grid),
                      folds=folds, seed=derive_seed(seed, prep.num, rng), tol=tol, cache_mb=cache_mb)
            for rng in RANGES]


def _assemble(prep, fitted, spec, folds, tol):
    models, reports = {}, {}
    manifest = {
        "version": str(BUNDLE_VERSION),
        "landmark": str(prep.num),
        "name": prep.name,
        "rows": str(prep.shape[0]),
        "cols": str(prep.shape[1]),
        "sza_m": format(prep.thresholds.sza_m, ".17g"),
        "low_threshold": format(prep.thresholds.low, ".17g"),
        "night_threshold": format(prep.thresholds.night, ".17g"),
        "seed": str(spec.seed),
        "n_train_requested": str(spec.n_train),
        "n_test_requested": str(spec.n_test),
        "folds": str(folds),
        "tol": format(tol, ".17g"),
        "scaler_policy": SCALER_POLICY,
    }
    for rng, (model, report) in zip(RANGES, fitted):
        split = prep.splits[rng]
        models[rng] = model
        reports[rng] = report
        best = report.pairs.index(report.chosen)
        p = rng.value
        manifest.update({
            f"{p}.chips": str(prep.chip_counts[rng]),
            f"{p}.n_train": str(len(split.train)),
            f"{p}.n_train_cloud": str(int(np.sum(split.train.label == 1))),
            f"{p}.n_test": str(len(split.test)),
            f"{p}.C": format(report.chosen[0], ".17g"),
            f"{p}.gamma": format(report.chosen[1], ".17g"),
            f"{p}.cv_accuracy": format(report.mean_accuracy[best], ".17g"),
            f"{p}.n_sv": str(model.n_sv),
            f"{p}.warnings": " | ".join(split.warnings),
        })
    return EnsembleModel(num=prep.num, name=prep.name, thresholds=prep.thresholds, models=models,
                         manifest=manifest, grid_reports=reports,
                         test_sets={r: prep.splits[r].test for r in RANGES}, shape=prep.shape,
                         train_keys={r: set(prep.splits[r].train.keys()) for r in RANGES})


def _run(tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fit_range, tasks))
    return [fit_range(t) for t in tasks]


def train_ensemble(chips, spec, grid, cal, folds=10, tol=DEFAULT_TOL, workers=1,
                   cache_mb=DEFAULT_CACHE_MB):
    """Train the four-model ensemble for the chips of one landmark."""
    prep = prepare_landmark(chips, cal, spec, folds)
    fitted = _run(_tasks(prep, grid, folds, spec.seed, tol, cache_mb), workers)
    return _assemble(prep, fitted, spec, folds, tol)


def train_landmarks(landmarks, spec, grid, cal, folds=10, tol=DEFAULT_TOL, workers=1,
                    cache_mb=DEFAULT_CACHE_MB, on_error=None):
    """Train many landmarks with one shared worker pool over (landmark x range) tasks.

    ``landmarks`` is an iterable of chip sequences (or zero-argument callables
    returning one).  Landmarks whose preparation fails are passed to
    ``on_error(index, exc)`` when given; otherwise the error propagates.
    """
    preps, tasks = [], []
    for k, item in enumerate(landmarks):
        chips = item() if callable(item) else item
        try:
            prep = prepare_landmark(chips, cal, spec, folds)
        except Exception as exc:
            if on_error is None:
                raise
            on_error(k, exc)
            continue
        preps.append(prep)
        tasks.extend(_tasks(prep, grid, folds, spec.seed, tol, cache_mb))
    fitted = _run(tasks, workers)
    out = []
    for i, prep in enumerate(preps):
        out.append(_assemble(prep, fitted[4 * i:4 * i + 4], spec, folds, tol))
    return out


# -- prediction ---------------------------------------------------------------

def chip_features(ensemble, chip, cal):
    """Calibrated chip, the range it falls in, and its feature grid."""
    if chip.num != ensemble.num:
        raise WrongLandmark(f"chip belongs to landmark {chip.num}, ensemble to {ensemble.num}")
    if chip.sza is None:
        chip = annotate_sza([chip])[0]
    if not chip.calibrated:
        chip = calibrate_chip(chip, cal)
    rng = assign_range(chip.sza, ensemble.thresholds)
    return chip, rng, extract_features(chip, regime_for_sza(chip.sza))


def predict_chip(ensemble, chip, cal):
    """Per-pixel cloud mask (1 cloud, 0 clear) using the range-specific model."""
    chip, rng, grid = chip_features(ensemble, chip, cal)
    model = ensemble.models[rng]
    labels = model.predict(model.scaler.transform(grid.rows())).reshape(chip.shape)
    mask = (labels == 1).astype(np.uint8)
    nodata = np.asarray(chip.l2mask) == PixelLabel.NODATA
    if nodata.any():
        LOG.warning("LM%d %s: %d nodata pixel(s) labelled clear", chip.num, chip.time, int(nodata.sum()))
        mask[nodata] = 0
    return mask


# -- persistence --------------------------------------------------------------

def _write_kv(path, mapping):
    with open(path, "w") as fh:
        for k, v in mapping.items():
            fh.write(f"{k} = {v}\n")


def _read_kv(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            key, sep, val = line.partition(" = ")
            if not sep:
                raise CorruptBundle(f"{path}: malformed line {line!r}")
            out[key] = val
    return out


def save_grid_report(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["C", "gamma", "mean_accuracy", "chosen"] + [f"fold{k}" for k in range(report.folds)])
        for (c, g), accs, mean in zip(report.pairs, report.fold_accuracy, report.mean_accuracy):
            w.writerow([repr(c), repr(g), repr(mean), int((c, g) == report.chosen)] + [repr(a) for a in accs])


def load_grid_report(path):
    pairs, accs, means, chosen, folds = [], [], [], None, 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        folds = len(header) - 4
        for row in reader:
            pair = (float(row[0]), float(row[1]))
            pairs.append(pair)
            means.append(float(row[2]))
            if row[3] == "1":
                chosen = pair
            accs.append([float(a) for a in row[4:]])
    return GridSearchReport(pairs=pairs, fold_accuracy=accs, mean_accuracy=means, chosen=chosen, folds=folds)


KEY_FIELDS = ("chip_time", "row", "col", "label", "month", "cover", "sza", "suspect", "flagged")


def save_test_set(pool, directory, rng):
    directory = Path(directory)
    write_feature_table(directory / f"test_{rng.value}.feat", pool.features, pool.regime)
    with open(directory / f"test_{rng.value}.keys", "w", newline="") as fh:
        fh.write(f"# rows={pool.shape[0]} cols={pool.shape[1]} regime={pool.regime}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KEY_FIELDS)
        for i in range(len(pool)):
            w.writerow([pool.chip_times[pool.chip[i]], int(pool.row[i]), int(pool.col[i]), int(pool.label[i]),
                        int(pool.month[i]), int(pool.cover[i]), repr(float(pool.sza[i])),
                        int(pool.suspect[i]), int(pool.flagged[i])])


def load_test_set(directory, rng):
    directory = Path(directory)
    features, regime = read_feature_table(directory / f"test_{rng.value}.feat")
    with open(directory / f"test_{rng.value}.keys", newline="") as fh:
        head = fh.readline().lstrip("# ").split()
        meta = dict(item.split("=") for item in head)
        rows = list(csv.DictReader(fh))
    if len(rows) != features.shape[0]:
        raise CorruptBundle(f"{directory}: test set keys and features disagree for {rng.value}")
    times = sorted({r["chip_time"] for r in rows})
    index = {t: k for k, t in enumerate(times)}

    def col(name, dtype):
        return np.array([r[name] for r in rows], dtype=np.float64).astype(dtype)

    return PixelPool(features=features, label=col("label", np.int8), month=col("month", np.int8),
                     cover=col("cover", np.int8),
                     chip=np.array([index[r["chip_time"]] for r in rows], dtype=np.int32),
                     row=col("row", np.int32), col=col("col", np.int32), sza=col("sza", np.float64),
                     suspect=col("suspect", bool), flagged=col("flagged", bool),
                     chip_times=tuple(times), shape=(int(meta["rows"]), int(meta["cols"])),
                     regime=regime.value)


def save_train_keys(keys, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("chip_time", "row", "col"))
        w.writerows(sorted(keys))


def load_train_keys(path):
    with open(path, newline="") as fh:
        return {(r["chip_time"], int(r["row"]), int(r["col"])) for r in csv.DictReader(fh)}


def save_ensemble(ensemble, directory, with_test_sets=True):
    directory = archive.ensure_dir(directory)
    _write_kv(directory / "manifest.txt", ensemble.manifest)
    for rng in RANGES:
        with open(directory / f"model_{rng.value}.svm", "w") as fh:
            fh.write(format_model(ensemble.models[rng]))
        if rng in ensemble.grid_reports:
            save_grid_report(ensemble.grid_reports[rng], directory / f"grid_{rng.value}.csv")
        if ensemble.train_keys and rng in ensemble.train_keys:
            save_train_keys(ensemble.train_keys[rng], directory / f"train_{rng.value}.keys")
        if with_test_sets and ensemble.test_sets and rng in ensemble.test_sets:
            save_test_set(ensemble.test_sets[rng], directory, rng)
    return directory


def load_ensemble(directory, with_test_sets=False):
    directory = Path(directory)
    manifest_path = directory / "manifest.txt"
    if not manifest_path.is_file():
        raise CorruptBundle(f"{directory}: no manifest.txt")
    manifest = _read_kv(manifest_path)
    try:
        version = int(manifest["version"])
    except (KeyError, ValueError):
        raise CorruptBundle(f"{directory}: manifest has no version") from None
    if version != BUNDLE_VERSION:
        raise VersionMismatch(f"{directory}: bundle version {version}, expected {BUNDLE_VERSION}")
    try:
        thresholds = SzaThresholds(float(manifest["sza_m"]), float(manifest["low_threshold"]),
                                   float(manifest["night_threshold"]))
        num, name = int(manifest["landmark"]), manifest["name"]
        shape = (int(manifest["rows"]), int(manifest["cols"]))
    except (KeyError, ValueError) as exc:
        raise CorruptBundle(f"{directory}: bad manifest ({exc})") from None
    models, reports, tests, train_keys = {}, {}, {}, {}
    for rng in RANGES:
        path = directory / f"model_{rng.value}.svm"
        if not path.is_file():
            raise CorruptBundle(f"{directory}: missing {path.name}")
        models[rng] = parse_model(path.read_text(), str(path))
        grid_path = directory / f"grid_{rng.value}.csv"
        if grid_path.is_file():
            reports[rng] = load_grid_report(grid_path)
        keys_path = directory / f"train_{rng.value}.keys"
        if keys_path.is_file():
            train_keys[rng] = load_train_keys(keys_path)
        if with_test_sets and (directory / f"test_{rng.value}.feat").is_file():
            tests[rng] = load_test_set(directory, rng)
    return EnsembleModel(num=num, name=name, thresholds=thresholds, models=models, manifest=manifest,
                         grid_reports=reports, test_sets=tests or None, shape=shape,
                         train_keys=train_keys or None)
