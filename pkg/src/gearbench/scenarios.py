"""Built-in evaluation scenarios: sim, real1, real2.

The three environments share one report layout but differ in object counts
and placements: ``sim`` is a three-pair assembly with an ordering constraint,
``real1`` randomizes gear placement over two pairs, and ``real2`` adds two
distractor gears.
"""

from __future__ import annotations

from .errors import ConfigurationError
from .geometry import Camera, Pose, View
from .world import BasePlate, Gear, GoalSpec, ObjectSpec, ScenarioConfig, Shaft


def _camera(width_px: int = 200, height_px: int = 200, mpp: float = 0.0025) -> Camera:
    return Camera(
        view=View.TOP_CURRENT,
        origin_x=-0.25,
        origin_y=0.25,
        meters_per_pixel=mpp,
        width_px=width_px,
        height_px=height_px,
    )


def sim_scenario() -> ScenarioConfig:
    """Three gears onto three shafts; the red gear must go on before the blue one."""
    objects = (
        ObjectSpec(30, "base plate", BasePlate(0.36, 0.30), Pose(0.0, 0.02)),
        ObjectSpec(11, "left shaft", Shaft(0.0049, 0.030), Pose(-0.09, 0.06)),
        ObjectSpec(12, "middle shaft", Shaft(0.0059, 0.030), Pose(0.0, 0.06)),
        ObjectSpec(13, "right shaft", Shaft(0.0044, 0.030), Pose(0.09, 0.06)),
        ObjectSpec(1, "red gear", Gear(0.032, 0.0050, 10), Pose(-0.12, -0.10)),
        ObjectSpec(2, "blue gear", Gear(0.036, 0.0060, 12), Pose(0.0, -0.14)),
        ObjectSpec(3, "green gear", Gear(0.028, 0.0045, 8), Pose(0.12, -0.09)),
    )
    goal = GoalSpec(
        required_insertions=((1, 11), (2, 12), (3, 13)),
        ordering_constraints=((1, 2),),
    )
    return ScenarioConfig(
        name="sim", objects=objects, goal=goal, camera=_camera(), object_view_id=1
    )


def real1_scenario() -> ScenarioConfig:
    """Two gears with randomized placement onto two fixed shafts."""
    objects = (
        ObjectSpec(30, "base plate", BasePlate(0.34, 0.16), Pose(0.0, 0.10)),
        ObjectSpec(11, "front shaft", Shaft(0.0049, 0.030), Pose(-0.07, 0.10)),
        ObjectSpec(12, "rear shaft", Shaft(0.0054, 0.030), Pose(0.07, 0.10)),
        ObjectSpec(1, "red gear", Gear(0.030, 0.0050, 9), None),
        ObjectSpec(2, "blue gear", Gear(0.034, 0.0055, 11), None),
    )
    goal = GoalSpec(required_insertions=((1, 11), (2, 12)))
    return ScenarioConfig(
        name="real1",
        objects=objects,
        goal=goal,
        camera=_camera(),
        object_view_id=1,
        placement_region=(-0.20, -0.21, 0.20, -0.02),
    )


def real2_scenario() -> ScenarioConfig:
    """Two goal gears among two distractors, with an ordering constraint."""
    objects = (
        ObjectSpec(30, "base plate", BasePlate(0.30, 0.14), Pose(0.0, 0.12)),
        ObjectSpec(11, "left shaft", Shaft(0.0046, 0.030), Pose(-0.06, 0.12)),
        ObjectSpec(12, "right shaft", Shaft(0.0056, 0.030), Pose(0.06, 0.12)),
        ObjectSpec(1, "red gear", Gear(0.030, 0.0047, 9), Pose(-0.16, -0.12)),
        ObjectSpec(2, "blue gear", Gear(0.033, 0.0057, 11), Pose(-0.05, -0.16)),
        ObjectSpec(3, "yellow gear", Gear(0.026, 0.0050, 8), Pose(0.06, -0.10)),
        ObjectSpec(4, "purple gear", Gear(0.029, 0.0052, 10), Pose(0.16, -0.17)),
    )
    goal = GoalSpec(
        required_insertions=((1, 11), (2, 12)),
        ordering_constraints=((1, 2),),
    )
    return ScenarioConfig(
        name="real2", objects=objects, goal=goal, camera=_camera(), object_view_id=1
    )


SCENARIOS = {
    "sim": sim_scenario,
    "real1": real1_scenario,
    "real2": real2_scenario,
}


def get_scenario(name: str) -> ScenarioConfig:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown scenario '{name}' (available: {', '.join(sorted(SCENARIOS))})"
        ) from None
