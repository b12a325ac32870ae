from __future__ import annotations

import pytest

from echonav.geometry import Rect, ScenePlan


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> str:
    """A small generated dataset shared by runner/service/cli tests."""
    from echonav.dataset import DatasetConfig, generate_dataset

    out = tmp_path_factory.mktemp("dataset")
    config = DatasetConfig(
        master_seed=11,
        scene_counts={"train": 2, "val": 1, "test": 1},
        episode_counts={"train": 4, "val": 1, "test": 3},
    )
    generate_dataset(config, out)
    return str(out)


@pytest.fixture(scope="session")
def tracker_fixtures():
    """Category templates plus a distance calibration for an open 10x10 room."""
    from echonav.descriptor import build_category_templates
    from echonav.runner import calibrate_scene

    scene = ScenePlan(id="cal-room", width=10.0, height=10.0, wall_absorption=0.5)
    templates = build_category_templates(list(range(8)), [0, 1, 2, 3], seed=0)
    return templates, calibrate_scene(scene)


@pytest.fixture
def empty_room() -> ScenePlan:
    return ScenePlan(id="empty-10", width=10.0, height=10.0, wall_absorption=0.5)


@pytest.fixture
def l_corridor() -> ScenePlan:
    # one wall splitting the room, passable only around its right end (the
    # 0.05 m gap at the left boundary is narrower than the agent diameter)
    return ScenePlan(
        id="l-corridor",
        width=10.0,
        height=10.0,
        obstacles=[Rect(0.05, 4.5, 6.5, 1.0)],
        wall_absorption=0.5,
    )


@pytest.fixture
def cluttered_room() -> ScenePlan:
    return ScenePlan(
        id="cluttered",
        width=12.0,
        height=9.0,
        obstacles=[
            Rect(2.0, 2.0, 1.5, 1.0),
            Rect(6.0, 1.0, 1.0, 3.0),
            Rect(3.5, 6.0, 3.0, 1.2),
            Rect(9.0, 5.0, 1.2, 2.5),
        ],
        wall_absorption=0.4,
    )
