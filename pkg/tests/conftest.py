import numpy as np
import pytest

from hapsits.config import ScenarioConfig


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Slot:
    """One drawn slot: vehicles, tasks, channels and library sizes."""

    def __init__(self, cfg, seed=7):
        from hapsits.grouping import compute_channels, draw_fading
        from hapsits.scenario import content_sizes, initial_cavs, sample_tasks

        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.cavs = initial_cavs(rng, cfg)
        self.tasks = sample_tasks(rng, cfg)
        self.channels = compute_channels(self.cavs, draw_fading(rng, cfg), cfg)
        self.sizes = content_sizes(cfg)

    def groups(self, x, s=None, y=None):
        from hapsits.grouping import build_groups

        n = len(x)
        return build_groups(x, y or [0] * n, s or [0] * n, self.tasks, self.cavs, self.channels, self.sizes,
                            self.cfg)


@pytest.fixture
def slot():
    return Slot(ScenarioConfig(num_cavs=6))


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
