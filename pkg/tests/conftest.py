import numpy as np
import pytest

from mfgcrn.data import CPTConfig
from mfgcrn.experiment import Dataset, prepare
from mfgcrn.synthetic import FeatureSpec, Scenario, default_splits, generate_synthetic


def small_scenario(**kw):
    base = dict(n_areas=5, weeks=4, features=[FeatureSpec("landuse", "informative", 3),
                                              FeatureSpec("noise", "noise", 2)])
    base.update(kw)
    return Scenario(**base)


SMALL_CPT = CPTConfig(L_c=3, L_p=2, L_q=1, interval_minutes=15)


@pytest.fixture(scope="session")
def small_synth():
    return generate_synthetic(small_scenario(), seed=3)


@pytest.fixture(scope="session")
def small_prep(small_synth):
    ds = Dataset(small_synth.series, small_synth.features, small_synth.holidays, small_synth.coords)
    return prepare(ds, SMALL_CPT, default_splits(small_synth.scenario), (8, 21))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
