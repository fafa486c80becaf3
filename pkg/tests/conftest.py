"""Shared case-study runs and the per-criterion acceptance summary."""

import pytest

from neural_filter.experiments import config, runner

CRITERIA = {
    1: "Jacobian matches central differences",
    2: "linear filter equals textbook Kalman filter",
    3: "integrator energy drift and RK4 agreement",
    4: "pendulum NN1 filter bounded, open loop diverges",
    5: "pendulum NN2 filter close to NN1",
    6: "chaotic systems within frozen error bounds",
    7: "preset runs are byte-identical",
    8: "invariant property suites",
}

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


def pytest_runtest_logreport(report):
    for key in report.keywords:
        if not key.startswith("criterion_"):
            continue
        n = int(key.split("_", 1)[1])
        # A skipped check did not demonstrate the criterion, so it counts against it.
        if report.failed or report.skipped:
            _outcomes[n] = False
        elif report.when == "call":
            _outcomes.setdefault(n, True)


def pytest_collection_modifyitems(items):
    # A keyword per criterion lets the log hook see which criterion a report belongs to.
    for item in items:
        for mark in item.iter_markers("criterion"):
            item.keywords[f"criterion_{mark.args[0]}"] = True


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, label in CRITERIA.items():
        status = {True: "PASS", False: "FAIL", None: "NOT RUN"}[_outcomes.get(n)]
        terminalreporter.write_line(f"criterion {n}: {status}  {label}")


@pytest.fixture(scope="session")
def case_run(tmp_path_factory):
    """Run a preset once per session and hand back the result and its directory."""
    cache = {}

    def get(name):
        if name not in cache:
            out = tmp_path_factory.mktemp(name)
            cache[name] = (runner.run_pipeline(config.resolve(name), out), out)
        return cache[name]

    return get
