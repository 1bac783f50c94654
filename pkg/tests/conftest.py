from pathlib import Path

import numpy as np
import pytest

from costadv.game import PayoffMatrix
from costadv.model import init_network

DATA = Path(__file__).parent / "data"

# three classes; predicting class 2 for a true 0/1 is cheap, the reverse is costly
STEEP3 = np.array([[0.0, 1.0, 10.0], [1.0, 0.0, 10.0], [3.0, 3.0, 0.0]])


@pytest.fixture
def steep3():
    return STEEP3.copy()


@pytest.fixture
def reference_payoff():
    return PayoffMatrix.load_csv(DATA / "reference_payoff.csv")


@pytest.fixture
def small_net():
    return init_network([6, 16, 12, 5], seed=11)



@pytest.fixture(scope="session")
def desk():
    """A quickly trained desk-scale classifier with held-out data and the default cost matrix."""
    from costadv.cost import SuperCategorySpec, build_supercategory_cost_matrix
    from costadv.data import DatasetParams, generate_dataset
    from costadv.model import TrainConfig, train

    ds = generate_dataset(DatasetParams(n_train=3000, n_val=500, n_test=1000, noise=0.17, seed=1))
    x, y = ds.part("train")
    net = train(init_network([8, 32, 32, 10], 2), x, y, TrainConfig(epochs=15, seed=3)).net
    cm = build_supercategory_cost_matrix(SuperCategorySpec(10, 8, 1, 2, 5, 200, 0))
    xt, yt = ds.part("test")
    return {"net": net, "x": xt, "y": yt, "cm": cm, "val": ds.part("val"), "train": (x, y)}


def tiny_config_doc(**overrides):
    """A minutes-to-seconds version of the default experiment, as a JSON document."""
    doc = {
        "seed": 5,
        "dataset": {"k": 10, "d": 8, "n_train": 600, "n_val": 150, "n_test": 250, "noise": 0.15},
        "models": {"A": {"hidden": [16]}, "B": {"hidden": [16, 16], "adversarial": False}},
        "defender": "B",
        "surrogate": "A",
        "train": {"epochs": 3, "batch_size": 64, "learning_rate": 0.05, "momentum": 0.9, "adv_epsilon_scale": 2.0},
        "n_attacks": 300,
        "sweep_steps": [1, 3, 5],
    }
    doc.update(overrides)
    return doc


@pytest.fixture
def tiny_config():
    from costadv.harness import ExperimentConfig

    return ExperimentConfig.from_json(tiny_config_doc())


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """The full default experiment (pinned seed), timed, with its report directory."""
    import time
    import warnings

    from costadv.harness import ExperimentConfig, run_pipeline

    out = tmp_path_factory.mktemp("default_run")
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_pipeline(ExperimentConfig(), out)
    return {"result": res, "out": out, "seconds": time.perf_counter() - start, "config": ExperimentConfig()}
