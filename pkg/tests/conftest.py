import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import numpy as np
import pytest

from typeret import synth


@pytest.fixture(scope="session")
def text_crop():
    style = synth.make_type("t", "round", 7)
    return synth.render_page(style, np.random.default_rng(0), size=(96, 128))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
