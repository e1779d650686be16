import numpy as np
import pytest
from hypothesis import settings

from dmanc.scene import SceneRecipe, synthesize_scene

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    return synthesize_scene(SceneRecipe(seed=3, K=3, L=32, tail=16, primary_delay=(10, 14),
                                        self_delay=(1, 3), cross_extra_delay=(1, 3)))


@pytest.fixture(scope="session")
def exact_scene():
    return synthesize_scene(SceneRecipe(seed=5, K=3, L=40, H=8, tail=20, self_delay=(1, 3),
                                        cross_extra_delay=(1, 4), primary_delay=(16, 20),
                                        exact_compensation=True))
