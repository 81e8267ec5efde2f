import numpy as np
import pytest

from rrnet import parallel
from rrnet.blocks import RRBlockConfig
from rrnet.config import GraphSpec
from rrnet.graph import build

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""

    def note(number, title, passed, detail):
        _ACCEPTANCE[number] = (title, bool(passed), detail)
        return passed

    return note


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")


@pytest.fixture(autouse=True)
def _single_thread():
    parallel.set_threads(1)
    yield
    parallel.set_threads(None)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_spec(r=1, mode="cdc", seed=0, rr=4, re=8, widths=(8, 8, 6, 6, 4), input_mode=6, **kw):
    stages = [RRBlockConfig(r=r, rr=rr, re=re) for _ in range(5)]
    return GraphSpec(name="tiny", input_channels=input_mode, stage_configs=stages,
                     decoder_widths=list(widths), rcn_per_stage=[rr] * 5,
                     connection_mode=mode, seed=seed, **kw)


@pytest.fixture
def tiny_graph():
    return build(tiny_spec())
