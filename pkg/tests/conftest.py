import numpy as np
import pytest

from idehmm.simulators import LinearGaussianOracleConfig, linear_gaussian


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def lg_cfg():
    return LinearGaussianOracleConfig(K=1, L=1, M=20, A=[[0.9]], sigma_x=0.5, sigma_y=0.5)


@pytest.fixture(scope="session")
def lg_model(lg_cfg):
    return linear_gaussian(lg_cfg)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def _report(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[n] = line
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
