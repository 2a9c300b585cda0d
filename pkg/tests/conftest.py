import numpy as np
import pytest

from pqclab.clone import SceneBundle
from pqclab.env import Cell, GridSpec, Obstacle, Scene, Task, sample_scene
from pqclab.planner import solve_scene
from pqclab.render import build_cache


def make_scene(grid=None, obstacles=(), goal=(0, 0, 0), task=Task.PEG_INSERTION, sid=0, **params):
    grid = grid or GridSpec.desk()
    tp = {"hole_diameter": 0.012, "peg_diameter": 0.008, "grasp_offset": [0.0, 0.0]}
    tp.update(params)
    return Scene(sid, task, grid, tuple(obstacles), Cell(*goal), tp, sid)


def box(center, half):
    return Obstacle(tuple(center), tuple(half))


def make_bundle(scene):
    return SceneBundle(scene, build_cache(scene), solve_scene(scene))


@pytest.fixture(scope="session")
def desk_bundles():
    scenes = [sample_scene(Task.PEG_INSERTION, GridSpec.desk(), 6, 500 + i) for i in range(3)]
    return [make_bundle(s) for s in scenes]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
