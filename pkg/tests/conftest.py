"""Shared desk-scale experiment runs and the acceptance summary printed after the session."""

import pytest

import experiments

ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE.append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())


@pytest.fixture(scope="session")
def copy_runs(tmp_path_factory):
    return {seed: experiments.copy_experiment(seed, tmp_path_factory.mktemp(f"copy{seed}")) for seed in (1, 2, 3)}


@pytest.fixture(scope="session")
def cipher_run(tmp_path_factory):
    return experiments.cipher_experiment(1, tmp_path_factory.mktemp("cipher"))


@pytest.fixture(scope="session")
def backtranslation_run(tmp_path_factory):
    return experiments.backtranslation_experiment(1, tmp_path_factory.mktemp("bt"))


@pytest.fixture(scope="session")
def multilingual_run(tmp_path_factory):
    return experiments.multilingual_experiment(1, tmp_path_factory.mktemp("ml"))
