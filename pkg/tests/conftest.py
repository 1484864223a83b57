import numpy as np
import pytest

from hybridcm import features, sim


@pytest.fixture(scope="session")
def params():
    return sim.SimParams()


@pytest.fixture(scope="session")
def quiet_params():
    return sim.SimParams().with_noise(process=(0, 0, 0), sensor=(0,) * 7)


@pytest.fixture(scope="session")
def small_dataset(params):
    # 4 runs per class of 300 samples: one run per role
    return sim.generate_dataset(params, runs_per_class=4, seed=3, n_samples=300)


@pytest.fixture(scope="session")
def normal_run(params):
    run = sim.simulate_run(0, 11, params)
    run.run_id = "normal"
    return run


@pytest.fixture(scope="session")
def surrogates(normal_run):
    return features.fit_surrogates(normal_run)


@pytest.fixture
def blobs():
    """Two well separated 2-D clusters, 200 points."""
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 0.5, (100, 2)), rng.normal(3, 0.5, (100, 2))])
    y = np.repeat([0, 1], 100)
    return X, y


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
