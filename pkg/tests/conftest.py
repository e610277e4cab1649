import numpy as np
import pytest
from hypothesis import settings

from ccfpse import tensor as T

settings.register_profile("ccfpse", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("ccfpse")


@pytest.fixture
def f64():
    """Run the test body with 64-bit tensors."""
    with T.precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = [
    "generator.z_ch=4",
    "generator.widths=[4,4,4,4]",
    "weightnet.widths=[4,4,4,4]",
    "weightnet.hidden=4",
    "discriminator.widths=[4,4,4,4,4]",
    "discriminator.channels=4",
    "train.batch_size=2",
    "train.steps=3",
    "train.checkpoint_every=2",
    "train.sample_every=2",
    "dataset.train_count=6",
    "dataset.eval_count=4",
]


@pytest.fixture
def tiny_overrides():
    """Overrides shrinking every network so a training step takes milliseconds."""
    return list(TINY)


@pytest.fixture
def tiny_config():
    from ccfpse.config import Config

    return Config().with_overrides(TINY)


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
