import datetime as dt

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lmcloud import archive, synth
from lmcloud.radiometry import CalibrationConfig, PlanckCoefficients

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def synthetic_cal():
    """Round-number constants; tests never depend on the real MSG-2 values."""
    slope = {ch: 0.02 if ch <= 3 else 0.1 for ch in range(1, 12)}
    offset = {ch: -1.0 if ch <= 3 else -5.0 for ch in range(1, 12)}
    esun = {1: 60.0, 2: 70.0, 3: 50.0}
    planck = {ch: PlanckCoefficients(nu_c=700.0 + 150.0 * (ch - 4), alpha=0.999, beta=0.05)
              for ch in range(4, 12)}
    return CalibrationConfig(slope=slope, offset=offset, esun=esun, planck=planck,
                             c1=1.19104e-5, c2=1.43877)


def make_chip(rows=2, cols=3, mask=None, time="20100315120000", num=1, latlon=(39.47, -0.38),
              seed=0, **kw):
    rng = np.random.default_rng(seed)
    if mask is None:
        mask = rng.choice([50, 100, 200], size=(rows, cols)).astype(np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    cube = rng.integers(100, 900, size=mask.shape + (11,)).astype(np.float64)
    fields = dict(id=1000 + num, num=num, name=f"LM{num}", centre=(mask.shape[0] / 2, mask.shape[1] / 2),
                  latlon=latlon, time=time, cube=cube, l2mask=mask)
    fields.update(kw)
    return archive.LandmarkChip(**fields)


@pytest.fixture
def chip_factory():
    return make_chip


SMALL_SPEC = synth.SynthSpec(days=3, rows=12, cols=12, start=dt.datetime(2010, 6, 1), seed=3)


@pytest.fixture(scope="session")
def small_archive(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_archive")
    registry = synth.generate_archive(SMALL_SPEC, root)
    return root, registry


@pytest.fixture(scope="session")
def small_ensembles(small_archive):
    """One trained ensemble per landmark of the small archive."""
    from lmcloud import ensemble
    from lmcloud.radiometry import load_calibration
    from lmcloud.sampling import SampleSpec
    _, registry = small_archive
    cal = load_calibration()
    spec = SampleSpec(n_train=200, n_test=3000, seed=1)
    grid = [(10.0, 0.5), (10.0, 2.0)]
    return [ensemble.train_ensemble(archive.load_landmark(e), spec, grid, cal, folds=3)
            for e in registry.included()]


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion, then assert it."""
    def check(name, ok, detail=""):
        line = f"ACCEPTANCE {'PASS' if ok else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
