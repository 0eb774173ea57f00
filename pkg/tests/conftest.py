import numpy as np
import pytest

from deskclip.encoders import TextConfig, TextEncoder

# Acceptance-criteria outcomes, appended by tests/test_acceptance.py and
# echoed after the run so the pass/fail line per criterion survives
# pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def tiny_text_encoder():
    cfg = TextConfig(vocab_size=32, context_length=8, width=12, depth=1, heads=2, embed_dim=8)
    return TextEncoder(cfg, np.random.default_rng(0))
