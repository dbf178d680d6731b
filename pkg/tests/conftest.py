import numpy as np
import pytest

from tputboost.data import TargetTransform, temporal_split
from tputboost.dist_booster import NormalBoostRegressor
from tputboost.point_booster import PointBoostRegressor
from tputboost.synth import GeneratorConfig, generate


@pytest.fixture(scope="session")
def small_synth():
    """NR_SA sample of 6000 rows split 1/2 weeks, plus its fitted transform."""
    ds, gt = generate(GeneratorConfig(tech="NR_SA", n_rows=6000, seed=3))
    train, val, test = temporal_split(ds)
    t = TargetTransform.fit(train.throughput)
    return {"ds": ds, "gt": gt, "train": train, "val": val, "test": test, "transform": t}


@pytest.fixture(scope="session")
def small_models(small_synth):
    s = small_synth
    t = s["transform"]
    y_tr, y_va = t.forward(s["train"].throughput), t.forward(s["val"].throughput)
    eval_set = (s["val"].features, y_va)
    point = PointBoostRegressor(max_iters=60, patience=20).fit(s["train"].features, y_tr, eval_set=eval_set)
    dist = NormalBoostRegressor(max_iters=60, patience=20).fit(s["train"].features, y_tr, eval_set=eval_set)
    return point, dist


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion -------------------------------

_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    entry = _CRITERIA.setdefault(number, [dict(report.user_properties)["title"], "PASS", ""])
    if report.failed:
        entry[1] = "FAIL"
    elif report.skipped and entry[1] == "PASS":
        entry[1] = "SKIP"
    if report.when == "call":
        entry[2] = dict(report.user_properties).get("measured", "")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, measured = _CRITERIA[number]
        line = f"{status} [{number:2d}] {title}"
        terminalreporter.write_line(line + (f" ({measured})" if measured else ""))


@pytest.fixture(autouse=True)
def _criterion_properties(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", marker.args[0])
        record_property("title", marker.args[1])
