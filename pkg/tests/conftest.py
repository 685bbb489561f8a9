import time
from dataclasses import dataclass, replace
from pathlib import Path

import pytest

from attransducer.config import load_config
from attransducer.data import SyntheticTaskConfig, generate_synthetic_dataset
from attransducer.model import Model
from attransducer.train import train

ROOT = Path(__file__).resolve().parent.parent
SYNTHETIC_INI = ROOT / "configs" / "synthetic.ini"


@dataclass
class TrainedModel:
    model: Model
    cpu_seconds: float
    losses: list
    data_config: SyntheticTaskConfig


@pytest.fixture(scope="session")
def synthetic_configs():
    return load_config(SYNTHETIC_INI)


@pytest.fixture(scope="session")
def trained(synthetic_configs) -> TrainedModel:
    """The synthetic-task model, trained once per session with the shipped recipe."""
    model_cfg, train_cfg, data_cfg = synthetic_configs
    model = Model.init(model_cfg, train_cfg.seed)
    dataset = generate_synthetic_dataset(data_cfg)
    t0 = time.process_time()
    result = train(model, dataset, replace(train_cfg, log_every=0))
    return TrainedModel(result.model, time.process_time() - t0, result.losses, data_cfg)


@pytest.fixture(scope="session")
def testset(synthetic_configs):
    _, _, data_cfg = synthetic_configs
    return generate_synthetic_dataset(replace(data_cfg, n_utterances=100, seed=data_cfg.seed + 10_000))


# acceptance verdicts -------------------------------------------------------------

_VERDICTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown":
        return
    number, title = marker.args
    if report.when == "call" or report.failed:
        detail = "; ".join(f"{k} {v}" for k, v in item.user_properties)
        if report.failed and report.longrepr is not None:
            detail = (detail + "; " if detail else "") + str(report.longrepr.reprcrash.message
                                                              if hasattr(report.longrepr, "reprcrash")
                                                              else report.longrepr).splitlines()[0]
        _VERDICTS[number] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, ok, detail = _VERDICTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:2d}. {title}: {detail}")
