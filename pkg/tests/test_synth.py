import datetime as dt
import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lmcloud import archive, synth
from lmcloud.errors import InvariantViolation
from lmcloud.masks import PixelLabel, decode_mask
from lmcloud.radiometry import calibrate_chip, load_calibration
from lmcloud.solar import annotate_sza

LM = synth.DEFAULT_LANDMARKS[0]
WHEN = dt.datetime(2010, 6, 1, 11)


@pytest.fixture(scope="module")
def cal():
    return load_calibration()


def digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@given(seed=st.integers(0, 10**6), rows=st.integers(1, 20), cols=st.integers(1, 20), cov=st.floats(0, 1))
def test_cloud_field_exact_count(seed, rows, cols, cov):
    field = synth.cloud_field(np.random.default_rng(seed), (rows, cols), cov, 2.0)
    assert field.sum() == round(cov * rows * cols)


@pytest.mark.parametrize("layout", synth.LAYOUTS)
def test_layouts_have_both_surfaces(layout):
    land = synth.land_layout(layout, 16, 16)
    assert land.any() and (~land).any()


@pytest.mark.parametrize("coverage", [0.0, 1.0])
def test_extreme_coverage(coverage, cal):
    spec = synth.SynthSpec(coverage=coverage, clear_fraction=0.0)
    chip, truth = synth.make_chip(spec, LM, 0, WHEN, cal)
    assert np.all(truth == coverage)
    labels = decode_mask(chip.l2mask)
    assert np.all((labels == PixelLabel.CLOUD) == bool(coverage))


def test_mask_matches_truth_and_land(cal):
    spec = synth.SynthSpec(nodata_rate=0.1, seed=4)
    chip, truth = synth.make_chip(spec, LM, 7, WHEN, cal)
    labels = decode_mask(chip.l2mask)
    valid = labels != PixelLabel.NODATA
    assert np.array_equal((labels == PixelLabel.CLOUD)[valid], truth.astype(bool)[valid])
    land = synth.land_layout(LM.layout, spec.rows, spec.cols)
    clear = valid & ~truth.astype(bool)
    assert np.array_equal(labels[clear] == PixelLabel.LAND, land[clear])
    assert 0 < (~valid).sum() < labels.size


def test_clouds_brighter_and_colder(cal):
    spec = synth.SynthSpec(coverage=0.5, clear_fraction=0.0, seed=1)
    chip, truth = synth.make_chip(spec, LM, 3, WHEN, cal)
    phys = calibrate_chip(annotate_sza([chip])[0], cal).cube
    cloud = truth.astype(bool)
    assert cloud.any() and (~cloud).any()
    assert phys[cloud, 0].mean() > phys[~cloud, 0].mean()
    assert phys[cloud, 8].mean() < phys[~cloud, 8].mean()


def test_zero_contrast_hides_clouds(cal):
    spec = synth.SynthSpec(contrast=0.0, noise=0.0, clear_fraction=0.0, seed=2)
    chip, truth = synth.make_chip(spec, LM, 5, WHEN, cal)
    cube = chip.cube
    land = synth.land_layout(LM.layout, spec.rows, spec.cols)
    for surface in (land, ~land):
        assert np.ptp(cube[surface], axis=0).max() == 0


def test_same_seed_same_bytes(tmp_path):
    spec = synth.SynthSpec(days=1, rows=6, cols=6, cadence_minutes=120, seed=11)
    synth.generate_archive(spec, tmp_path / "a")
    synth.generate_archive(spec, tmp_path / "b", workers=2)
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    synth.generate_archive(synth.SynthSpec(days=1, rows=6, cols=6, cadence_minutes=120, seed=12), tmp_path / "c")
    assert digest(tmp_path / "a") != digest(tmp_path / "c")


def test_archive_layout(small_archive):
    root, registry = small_archive
    entries = registry.included()
    assert [e.num for e in entries] == [1, 2]
    assert (root / "registry.csv").is_file()
    paths = archive.chip_paths(archive.landmark_dir(root, 1))
    assert len(paths) == 3 * 96
    chip = archive.read_chip(paths[0])
    truth = synth.read_truth(paths[0])
    assert truth.shape == chip.shape
    assert np.array_equal(truth, decode_mask(chip.l2mask) == PixelLabel.CLOUD)


def test_spec_guards():
    with pytest.raises(InvariantViolation):
        synth.SynthSpec(cadence_minutes=7)
    with pytest.raises(InvariantViolation):
        synth.SynthSpec(coverage=1.5)
    with pytest.raises(InvariantViolation):
        synth.SynthSpec(landmarks=(LM, LM))
    with pytest.raises(InvariantViolation):
        synth.SynthLandmark(3, "x", (0, 0), layout="desert")
    assert synth.SynthSpec(cadence_minutes=30).chips_per_day == 48
