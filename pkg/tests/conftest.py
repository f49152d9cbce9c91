from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from pbpba.geometry import Intrinsics, Pose, se3_exp

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def K():
    return Intrinsics(160.0, 150.0, 79.5, 59.5, 160, 120)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pose(rng, rot=0.5, trans=1.0) -> Pose:
    return se3_exp(np.concatenate([rng.normal(scale=rot, size=3), rng.normal(scale=trans, size=3)]))


CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="session")
def tiny_dataset():
    from pbpba.scenegen import generate_dataset, read_scene, read_traj_spec

    return generate_dataset(read_scene(CONFIGS / "scene_specular.kv"),
                            read_traj_spec(CONFIGS / "tiny_traj.kv"), spp=16, env_spp=16)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
