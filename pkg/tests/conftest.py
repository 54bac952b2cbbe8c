import numpy as np
import pytest

from bepboot import PilotDataset, make_rng_stream

_acceptance_lines: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def report(criterion: int, passed: bool, detail: str) -> None:
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _acceptance_lines.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def normal_pilot(n: int, seed: int = 0, mean: float = 0.15, sd: float = 1.0) -> PilotDataset:
    return PilotDataset(mean + sd * make_rng_stream(seed, 0).standard_normal(n))


@pytest.fixture
def pilot100() -> PilotDataset:
    return normal_pilot(100)
