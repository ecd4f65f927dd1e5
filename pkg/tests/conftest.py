"""Shared fixtures and the acceptance-summary terminal hook."""

from __future__ import annotations

import dataclasses

import pytest

from ecmdot.kernelmodel import builtin_kernels
from ecmdot.machine import builtin_machines

# Populated by tests/test_acceptance.py; printed after the run so each
# criterion's verdict is visible even with captured stdout.
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} — {detail}"
    ACCEPTANCE_RESULTS.append((criterion, passed, line))
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, passed, line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line, green=passed, red=not passed)


@pytest.fixture(scope="session")
def machines():
    return {md.name: md for md in builtin_machines()}


@pytest.fixture(scope="session")
def kernels():
    return {kd.name: kd for kd in builtin_kernels()}


@pytest.fixture(scope="session")
def ivb(machines):
    return machines["IVB"]


@pytest.fixture(scope="session")
def snb(machines):
    return machines["SNB"]


@pytest.fixture(scope="session")
def hsw(machines):
    return machines["HSW"]


@pytest.fixture(scope="session")
def bdw(machines):
    return machines["BDW"]


@pytest.fixture(scope="session")
def toy_machine(ivb):
    """A small-cache descriptor that keeps timing tests fast."""
    return dataclasses.replace(
        ivb,
        name="TOY",
        cores=4,
        l1_bytes=16384,
        l2_bytes=65536,
        llc_bytes=262144,
    )
