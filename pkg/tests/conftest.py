from __future__ import annotations

import pytest

from gandalf.phantom import PhantomConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    return generate_dataset(PhantomConfig(scale="tiny", n_subjects=20, seed=3), out)


@pytest.fixture(scope="session")
def desk_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    return generate_dataset(PhantomConfig(scale="desk", n_subjects=10, seed=5), out)


_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    n, title = crit
    detail = dict(report.user_properties).get("detail", "")
    _CRITERIA[n] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
