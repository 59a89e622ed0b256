"""Landmark chip records, the on-disk chip container and archive scanning.

Container layout (all little-endian)::

    magic   b"LMCH"
    version u16
    kind    u8        0 = chip, 1 = single-channel grid
    flags   u8        chip: bit0 calibrated, bit1 has sza, bit2 has HRV
    ... kind-specific header, length-prefixed UTF-8 strings, float64 arrays

Arrays are written row-major.  The format is deliberately dumb: no
compression, no padding, nothing that depends on the platform.
"""

import csv
import dataclasses
import datetime as dt
import io
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import (BadMaskCode, DimensionMismatch, EmptyArchive, InvariantViolation,
                     IoFailure, MalformedContainer)

LOG = logging.getLogger(__name__)

MAGIC = b"LMCH"
VERSION = 1
KIND_CHIP = 0
KIND_GRID = 1

CHIP_SUFFIX = ".lmch"
TRUTH_SUFFIX = ".lmt"

# SEVIRI channels without HRV (channel 12).
SEVIRI_CHANNELS = tuple(range(1, 12))
MASK_CODES = (0, 50, 100, 200)
TIME_FORMAT = "%Y%m%d%H%M%S"

DEFAULT_EXCLUDED = {91: "excluded by default: different L2 mask codification",
                    98: "excluded by default: different L2 mask codification"}
DEFAULT_NODATA_THRESHOLD = 0.5
CADENCE_MINUTES = 15

_F_CALIBRATED = 1
_F_SZA = 2
_F_HRV = 4


def parse_time(stamp):
    """Parse ``YYYYMMDDhhmmss`` into a naive UTC datetime."""
    if len(stamp) != 14 or not stamp.isdigit():
        raise InvariantViolation(f"bad timestamp {stamp!r}")
    return dt.datetime.strptime(stamp, TIME_FORMAT)


def format_time(when):
    return when.strftime(TIME_FORMAT)


@dataclasses.dataclass(eq=False)
class LandmarkChip:
    """One acquisition of one landmark."""

    id: int
    num: int
    name: str
    centre: tuple
    latlon: tuple
    time: str
    cube: np.ndarray
    l2mask: np.ndarray
    channels: tuple = SEVIRI_CHANNELS
    sza: float = None
    calibrated: bool = False
    hrv: np.ndarray = None

    @property
    def shape(self):
        return self.l2mask.shape

    @property
    def datetime(self):
        return parse_time(self.time)

    def channel(self, number):
        """Return the 2-D plane of SEVIRI channel ``number``."""
        return self.cube[:, :, self.channels.index(number)]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def validate(self, check_mask=True, source=None):
        if self.cube.ndim != 3 or self.l2mask.ndim != 2:
            raise DimensionMismatch("cube must be 3-D and l2mask 2-D")
        rows, cols = self.l2mask.shape
        if rows < 1 or cols < 1:
            raise InvariantViolation(f"chip must have rows, cols >= 1 (got {rows}x{cols})")
        if self.cube.shape[:2] != (rows, cols):
            raise DimensionMismatch(
                f"cube {self.cube.shape[:2]} and mask {self.l2mask.shape} dimensions differ")
        if len(self.channels) != 11 or self.cube.shape[2] != len(self.channels):
            raise InvariantViolation("expected 11 non-HRV channels")
        if 12 in self.channels:
            raise InvariantViolation("HRV must not appear in the channel list")
        lat, lon = self.latlon
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            raise InvariantViolation(f"latlon out of range: {self.latlon}")
        if format_time(parse_time(self.time)) != self.time:
            raise InvariantViolation(f"timestamp does not round-trip: {self.time!r}")
        if check_mask:
            check_mask_codes(self.l2mask, source)
        return self

    def same_as(self, other):
        """Field-by-field equality (arrays compared exactly, NaN-aware)."""
        if not isinstance(other, LandmarkChip):
            return False
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if a is None or b is None or a.shape != b.shape:
                    return False
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif isinstance(a, float) and isinstance(b, float) and np.isnan(a) and np.isnan(b):
                continue
            elif tuple(a) != tuple(b) if isinstance(a, (tuple, list)) else a != b:
                return False
        return True


def check_mask_codes(mask, source=None):
    bad = ~np.isin(mask, MASK_CODES)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise BadMaskCode(mask[r, c].item(), (r, c), source)


# -- binary container ---------------------------------------------------------

def _pack_str(buf, text):
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _pack_array(buf, arr):
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))


class _Reader:
    def __init__(self, data, source):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n):
        if self.pos + n > len(self.data):
            raise MalformedContainer(f"{self.source}: truncated container")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedContainer(f"{self.source}: bad UTF-8 field") from exc

    def array(self, shape):
        count = int(np.prod(shape))
        raw = self.take(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def encode_chip(chip):
    chip.validate(check_mask=False)
    flags = (_F_CALIBRATED if chip.calibrated else 0) | (_F_SZA if chip.sza is not None else 0)
    flags |= _F_HRV if chip.hrv is not None else 0
    rows, cols, nchan = chip.cube.shape
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HBB", VERSION, KIND_CHIP, flags))
    buf.write(struct.pack("<qq", chip.id, chip.num))
    buf.write(struct.pack("<dddd", *map(float, chip.centre), *map(float, chip.latlon)))
    buf.write(struct.pack("<d", float(chip.sza) if chip.sza is not None else float("nan")))
    buf.write(struct.pack("<III", rows, cols, nchan))
    buf.write(bytes(chip.channels))
    _pack_str(buf, chip.name)
    _pack_str(buf, chip.time)
    _pack_array(buf, chip.cube)
    _pack_array(buf, chip.l2mask)
    if chip.hrv is not None:
        buf.write(struct.pack("<II", *chip.hrv.shape))
        _pack_array(buf, chip.hrv)
    return buf.getvalue()


def _open_container(data, source):
    rd = _Reader(data, source)
    if rd.take(4) != MAGIC:
        raise MalformedContainer(f"{source}: bad magic")
    version, kind, flags = rd.unpack("<HBB")
    if version != VERSION:
        raise MalformedContainer(f"{source}: unsupported container version {version}")
    return rd, kind, flags


def decode_chip(data, source="<bytes>", validate=True):
    rd, kind, flags = _open_container(data, source)
    if kind != KIND_CHIP:
        raise MalformedContainer(f"{source}: container holds a grid, not a chip")
    id_, num = rd.unpack("<qq")
    cr, cc, lat, lon = rd.unpack("<dddd")
    (sza,) = rd.unpack("<d")
    rows, cols, nchan = rd.unpack("<III")
    channels = tuple(rd.take(nchan))
    name = rd.string()
    time = rd.string()
    cube = rd.array((rows, cols, nchan))
    mask = rd.array((rows, cols))
    hrv = None
    if flags & _F_HRV:
        hrv = rd.array(rd.unpack("<II"))
    if rd.pos != len(data):
        raise MalformedContainer(f"{source}: trailing bytes")
    chip = LandmarkChip(id=id_, num=num, name=name, centre=(cr, cc), latlon=(lat, lon),
                        time=time, cube=cube, l2mask=mask, channels=channels,
                        sza=sza if flags & _F_SZA else None,
                        calibrated=bool(flags & _F_CALIBRATED), hrv=hrv)
    if validate:
        chip.validate(source=source)
    return chip


def write_chip(chip, path):
    data = encode_chip(chip)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_chip(path, validate=True):
    """Read a chip container.  ``validate=False`` skips the mask-code check."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_chip(data, str(path), validate=validate)


def write_grid(grid, path, name="", time=""):
    """Write a single-channel 2-D grid (masks, predictions, accuracy maps)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or min(grid.shape) < 1:
        raise InvariantViolation("grid must be a non-empty 2-D array")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HBB", VERSION, KIND_GRID, 0))
    buf.write(struct.pack("<II", *grid.shape))
    _pack_str(buf, name)
    _pack_str(buf, time)
    _pack_array(buf, grid)
    try:
        Path(path).write_bytes(buf.getvalue())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_grid(path):
    """Return ``(grid, name, time)``."""
    data = Path(path).read_bytes()
    rd, kind, _ = _open_container(data, str(path))
    if kind != KIND_GRID:
        raise MalformedContainer(f"{path}: container holds a chip, not a grid")
    shape = rd.unpack("<II")
    name = rd.string()
    time = rd.string()
    grid = rd.array(shape)
    if rd.pos != len(data):
        raise MalformedContainer(f"{path}: trailing bytes")
    return grid, name, time


# -- registry -----------------------------------------------------------------

@dataclasses.dataclass
class RegistryEntry:
    num: int
    id: int
    name: str
    latlon: tuple
    rows: int
    cols: int
    chip_count: int
    first_time: str = ""
    last_time: str = ""
    gaps: int = 0
    nodata_fraction: float = 0.0
    landcover_ref: str = ""
    sza_m: float = None
    excluded: bool = False
    reason: str = ""
    paths: tuple = ()


@dataclasses.dataclass
class LandmarkRegistry:
    entries: dict

    def included(self):
        return [e for e in self.entries.values() if not e.excluded]

    def __getitem__(self, num):
        return self.entries[num]

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, LandmarkRegistry) and self.entries == other.entries


REGISTRY_FIELDS = ("num", "id", "name", "lat", "lon", "rows", "cols", "chip_count",
                   "excluded", "reason")


def write_registry(registry, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGISTRY_FIELDS)
        for num in sorted(registry.entries):
            e = registry.entries[num]
            w.writerow([e.num, e.id, e.name, repr(float(e.latlon[0])), repr(float(e.latlon[1])),
                        e.rows, e.cols, e.chip_count, int(e.excluded), e.reason])


def read_registry(path):
    entries = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            num = int(row["num"])
            entries[num] = RegistryEntry(
                num=num, id=int(row["id"]), name=row["name"],
                latlon=(float(row["lat"]), float(row["lon"])), rows=int(row["rows"]),
                cols=int(row["cols"]), chip_count=int(row["chip_count"]),
                excluded=bool(int(row["excluded"])), reason=row["reason"])
    return LandmarkRegistry(entries)


def chip_paths(root):
    return sorted(p for p in Path(root).rglob("*" + CHIP_SUFFIX) if p.is_file())


def _summarise(path):
    """Light per-file summary used by scan_archive."""
    try:
        chip = read_chip(path, validate=False)
        chip.validate(check_mask=False, source=str(path))
    except (MalformedContainer, DimensionMismatch, InvariantViolation) as exc:
        return {"path": str(path), "error": str(exc)}
    bad = None
    try:
        check_mask_codes(chip.l2mask, str(path))
    except BadMaskCode as exc:
        bad = str(exc)
    return {"path": str(path), "num": chip.num, "id": chip.id, "name": chip.name,
            "latlon": tuple(chip.latlon), "shape": chip.shape, "time": chip.time,
            "nodata": int(np.count_nonzero(chip.l2mask == 0)), "pixels": chip.l2mask.size,
            "bad_mask": bad}


def scan_archive(root, exclude=None, nodata_threshold=DEFAULT_NODATA_THRESHOLD, workers=1):
    """Index every chip container below ``root`` into a LandmarkRegistry.

    ``exclude`` maps landmark num to an exclusion reason; by default
    landmarks 91 and 98 are pre-excluded.  Files are summarised in parallel
    when ``workers > 1`` but the registry is always assembled from a sorted
    listing, so discovery order never matters.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoFailure(f"archive root {root} does not exist")
    exclude = DEFAULT_EXCLUDED if exclude is None else exclude
    paths = chip_paths(root)
    if not paths:
        raise EmptyArchive(f"no {CHIP_SUFFIX} files under {root}")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            summaries = list(pool.map(_summarise, paths))
    else:
        summaries = [_summarise(p) for p in paths]
    return build_registry(summaries, exclude, nodata_threshold)


def build_registry(summaries, exclude=None, nodata_threshold=DEFAULT_NODATA_THRESHOLD):
    exclude = DEFAULT_EXCLUDED if exclude is None else exclude
    broken = [s for s in summaries if "error" in s]
    for s in broken:
        LOG.warning("skipping unreadable chip %s: %s", s["path"], s["error"])
    groups = {}
    for s in sorted((s for s in summaries if "error" not in s), key=lambda s: (s["num"], s["time"], s["path"])):
        groups.setdefault(s["num"], []).append(s)
    if not groups:
        raise EmptyArchive("no readable chips found")

    entries = {}
    for num, items in sorted(groups.items()):
        first = items[0]
        shapes = {s["shape"] for s in items}
        times = [s["time"] for s in items]
        nodata = sum(s["nodata"] for s in items)
        pixels = sum(s["pixels"] for s in items)
        span = (parse_time(times[-1]) - parse_time(times[0])).total_seconds()
        expected = int(span // (CADENCE_MINUTES * 60)) + 1
        rows, cols = first["shape"] if len(shapes) == 1 else (0, 0)
        entry = RegistryEntry(num=num, id=first["id"], name=first["name"], latlon=first["latlon"],
                              rows=rows, cols=cols, chip_count=len(items), first_time=times[0],
                              last_time=times[-1], gaps=max(expected - len(set(times)), 0),
                              nodata_fraction=nodata / pixels,
                              paths=tuple(s["path"] for s in items))
        bad = [s["bad_mask"] for s in items if s["bad_mask"]]
        if num in exclude:
            entry.excluded, entry.reason = True, exclude[num]
        elif len(shapes) > 1:
            entry.excluded, entry.reason = True, "inconsistent chip dimensions"
        elif bad:
            entry.excluded, entry.reason = True, "invalid mask codes"
        elif entry.nodata_fraction > nodata_threshold:
            entry.excluded, entry.reason = True, "mask dominated by no-data"
        if entry.excluded:
            LOG.info("landmark %d excluded: %s", num, entry.reason)
        entries[num] = entry
    return LandmarkRegistry(entries)


def load_landmark(entry, validate=True):
    """Read every chip of a registry entry, chronologically."""
    return [read_chip(p, validate=validate) for p in entry.paths]


def landmark_dir(root, num):
    return Path(root) / f"LM{num:03d}"


def chip_filename(chip):
    return f"LM{chip.num:03d}_{chip.time}{CHIP_SUFFIX}"


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc
    return Path(path)
