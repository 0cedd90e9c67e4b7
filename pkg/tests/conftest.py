import numpy as np
import pytest

from mimofl.netgen import ChannelState, NetworkConfig, make_drop


@pytest.fixture(scope="session")
def paper_cfg():
    return NetworkConfig.paper_defaults()


@pytest.fixture(scope="session")
def drop1(paper_cfg):
    return make_drop(paper_cfg, 1)[1]


def identical_state(K, beta=1e-10, ratio=0.9):
    b = np.full(K, beta)
    return ChannelState(b, ratio * b, ratio * b)


# acceptance verdicts, printed once at the end of the run
_VERDICTS = {}


@pytest.fixture(scope="session")
def verdicts():
    return _VERDICTS


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        if n in _VERDICTS:
            ok, detail = _VERDICTS[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
