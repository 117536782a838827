import numpy as np
import pytest

from circuitvi.netlist import parse_netlist
from circuitvi.presets import load_preset_system
from circuitvi.reduced import MeshState, assemble

ACCEPTANCE_LINES = []

SINGLE_LOOP = "ground g\nnode a\nbranch a g L=1\nbranch g a C=1\n"


@pytest.fixture
def single_loop():
    sys = assemble(parse_netlist(SINGLE_LOOP))
    return sys, MeshState.initial(sys, [1.0], [0.0])


@pytest.fixture(params=["rlc-square", "lc-oscillator", "lc-transmission-line"])
def lc_preset(request):
    return load_preset_system(request.param)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
