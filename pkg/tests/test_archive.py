import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lmcloud import archive
from lmcloud.errors import BadMaskCode, DimensionMismatch, EmptyArchive, InvariantViolation, MalformedContainer

from conftest import make_chip


def test_minimal_chip_round_trip(tmp_path):
    chip = make_chip(1, 1, mask=[[100]])
    archive.write_chip(chip, tmp_path / "c.lmch")
    back = archive.read_chip(tmp_path / "c.lmch")
    assert back.same_as(chip)
    assert back.time == "20100315120000"


def test_optional_fields_round_trip(tmp_path):
    chip = make_chip(3, 2, sza=47.25, calibrated=True, hrv=np.arange(54.0).reshape(9, 6))
    archive.write_chip(chip, tmp_path / "c.lmch")
    assert archive.read_chip(tmp_path / "c.lmch").same_as(chip)


def test_bad_mask_code_names_pixel(tmp_path):
    chip = make_chip(2, 2, mask=[[37, 50], [100, 200]])
    archive.write_chip(chip, tmp_path / "bad.lmch")
    with pytest.raises(BadMaskCode) as err:
        archive.read_chip(tmp_path / "bad.lmch")
    assert err.value.pixel == (0, 0)
    assert err.value.value == 37


def test_truncated_header_is_malformed(tmp_path):
    data = archive.encode_chip(make_chip())
    (tmp_path / "t.lmch").write_bytes(data[:8])
    with pytest.raises(MalformedContainer):
        archive.read_chip(tmp_path / "t.lmch")


def test_bad_magic_and_trailing_bytes():
    data = archive.encode_chip(make_chip())
    with pytest.raises(MalformedContainer):
        archive.decode_chip(b"XXXX" + data[4:])
    with pytest.raises(MalformedContainer):
        archive.decode_chip(data + b"\0")


def test_same_chip_gives_identical_bytes(tmp_path):
    chip = make_chip(4, 5)
    archive.write_chip(chip, tmp_path / "a.lmch")
    archive.write_chip(chip, tmp_path / "b.lmch")
    assert (tmp_path / "a.lmch").read_bytes() == (tmp_path / "b.lmch").read_bytes()


def test_zero_rows_rejected_before_write(tmp_path):
    chip = make_chip(1, 1).replace(cube=np.zeros((0, 1, 11)), l2mask=np.zeros((0, 1)))
    with pytest.raises(InvariantViolation):
        archive.write_chip(chip, tmp_path / "z.lmch")
    assert not (tmp_path / "z.lmch").exists()


def test_dimension_mismatch():
    chip = make_chip(2, 2).replace(l2mask=np.full((3, 2), 50.0))
    with pytest.raises(DimensionMismatch):
        chip.validate()


def test_timestamp_must_round_trip():
    with pytest.raises(InvariantViolation):
        make_chip(time="2010031512").validate()


@given(rows=st.integers(1, 32), cols=st.integers(1, 32), seed=st.integers(0, 2**32 - 1))
def test_round_trip_property(rows, cols, seed):
    rng = np.random.default_rng(seed)
    mask = rng.choice(archive.MASK_CODES, size=(rows, cols))
    chip = make_chip(mask=mask, seed=seed)
    chip = chip.replace(cube=rng.normal(size=chip.cube.shape))
    assert archive.decode_chip(archive.encode_chip(chip)).same_as(chip)


def _write_landmark(root, num, count, shape=(3, 3), mask_value=100, start_hour=0):
    paths = []
    for k in range(count):
        time = f"20100315{start_hour + k:02d}0000"
        chip = make_chip(*shape, mask=np.full(shape, mask_value), time=time, num=num)
        path = archive.landmark_dir(root, num)
        archive.ensure_dir(path)
        archive.write_chip(chip, path / archive.chip_filename(chip))
        paths.append(path / archive.chip_filename(chip))
    return paths


def test_scan_counts_chips(tmp_path):
    for num in (3, 4, 5):
        _write_landmark(tmp_path, num, 4)
    reg = archive.scan_archive(tmp_path)
    assert sorted(reg.entries) == [3, 4, 5]
    assert all(e.chip_count == 4 and not e.excluded for e in reg.entries.values())


def test_scan_flags_inconsistent_dimensions(tmp_path):
    _write_landmark(tmp_path, 1, 2)
    chip = make_chip(4, 4, mask=np.full((4, 4), 50), time="20100316000000", num=1)
    archive.write_chip(chip, archive.landmark_dir(tmp_path, 1) / archive.chip_filename(chip))
    entry = archive.scan_archive(tmp_path)[1]
    assert entry.excluded and entry.reason == "inconsistent chip dimensions"


def test_scan_flags_nodata_dominated(tmp_path):
    _write_landmark(tmp_path, 1, 3, mask_value=0)
    _write_landmark(tmp_path, 2, 3, mask_value=50)
    reg = archive.scan_archive(tmp_path)
    assert reg[1].excluded and reg[1].reason == "mask dominated by no-data"
    assert not reg[2].excluded


def test_scan_flags_bad_mask_codes(tmp_path):
    _write_landmark(tmp_path, 1, 2, mask_value=37)
    assert archive.scan_archive(tmp_path)[1].reason == "invalid mask codes"


def test_default_exclusions_and_override(tmp_path):
    _write_landmark(tmp_path, 91, 1)
    _write_landmark(tmp_path, 98, 1)
    _write_landmark(tmp_path, 7, 1)
    reg = archive.scan_archive(tmp_path)
    assert reg[91].excluded and reg[98].excluded and reg[91].reason
    assert [e.num for e in reg.included()] == [7]
    assert len(archive.scan_archive(tmp_path, exclude={}).included()) == 3


def test_empty_archive(tmp_path):
    with pytest.raises(EmptyArchive):
        archive.scan_archive(tmp_path)


def test_scan_is_order_independent(tmp_path):
    for num in (1, 2):
        _write_landmark(tmp_path, num, 5)
    summaries = [archive._summarise(p) for p in archive.chip_paths(tmp_path)]
    reference = archive.build_registry(summaries)
    for seed in range(5):
        random.Random(seed).shuffle(summaries)
        assert archive.build_registry(summaries) == reference
    assert archive.scan_archive(tmp_path, workers=3) == reference


def test_adding_valid_chip_keeps_landmark_included(tmp_path):
    _write_landmark(tmp_path, 1, 2)
    assert not archive.scan_archive(tmp_path)[1].excluded
    _write_landmark(tmp_path, 1, 1, start_hour=10)
    assert not archive.scan_archive(tmp_path)[1].excluded


def test_registry_file_round_trip(tmp_path):
    _write_landmark(tmp_path, 1, 2)
    _write_landmark(tmp_path, 91, 1)
    reg = archive.scan_archive(tmp_path)
    archive.write_registry(reg, tmp_path / "registry.csv")
    header = (tmp_path / "registry.csv").read_text().splitlines()[0]
    assert header == ",".join(archive.REGISTRY_FIELDS)
    back = archive.read_registry(tmp_path / "registry.csv")
    for num in (1, 91):
        a, b = reg[num], back[num]
        assert (a.num, a.id, a.name, a.rows, a.cols, a.chip_count, a.excluded, a.reason) == \
               (b.num, b.id, b.name, b.rows, b.cols, b.chip_count, b.excluded, b.reason)


def test_grid_container_round_trip(tmp_path):
    grid = np.arange(12.0).reshape(3, 4)
    archive.write_grid(grid, tmp_path / "g.lmch", name="acc", time="20100101000000")
    back, name, time = archive.read_grid(tmp_path / "g.lmch")
    assert np.array_equal(back, grid) and name == "acc" and time == "20100101000000"
    with pytest.raises(MalformedContainer):
        archive.read_chip(tmp_path / "g.lmch")
