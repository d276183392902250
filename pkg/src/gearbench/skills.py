"""Skill execution: marker deprojection, approach with z offset, chunked rollout.

A skill runs in three phases: the marker id is deprojected to a workspace
pose, the tool approaches it with a configurable z-axis offset, and then a
policy is rolled out in fixed-length command chunks (16 by default) until it
declares completion or the step budget runs out.

The scripted policies here stand in for learned ones. They are closed-loop:
every chunk is recomputed from the current state through the same interface a
learned policy would use, plus a simulator-state field that gives the
stand-ins the fine alignment a trained model would get from its sensors. An
optional per-chunk Gaussian offset on the internal target estimate emulates
imprecision.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from .errors import (
    CommandOutOfRange,
    PolicyFailure,
    PreconditionViolated,
    UnknownMarker,
    UnreachableTarget,
)
from .geometry import Camera, Pose
from .grammar import Skill, SkillDecision, SkillName
from .marking import PointAnnotation
from .raster import RasterImage
from .render import render
from .world import (
    Command,
    Gear,
    Grip,
    RobotState,
    Shaft,
    STEP_XY_MAX,
    STEP_Z_MAX,
    WORKSPACE_X,
    WORKSPACE_Y,
    WORKSPACE_Z,
    WorldState,
    ZERO_COMMAND,
    check_insertion,
    step_command,
)

CHUNK_LENGTH = 16
DEFAULT_STEP_BUDGET = 12 * CHUNK_LENGTH
DEFAULT_Z_OFFSET = 0.05

GRIP_Z = 0.004       # tool height when closing on a gear
RELEASE_Z = 0.004    # tool height when releasing an insert
PLACE_Z = 0.020      # tool height when releasing a place
ALIGN_EPS = 1e-9


@dataclass(frozen=True, slots=True)
class Trajectory:
    """Fixed-length command chunk."""

    commands: tuple[Command, ...]

    def __post_init__(self) -> None:
        if not self.commands:
            raise ValueError("trajectory must not be empty")

    def __len__(self) -> int:
        return len(self.commands)


@dataclass(frozen=True)
class PolicyInput:
    """What a policy sees per chunk: camera image, robot state, resolved target.

    ``sim_state`` is the simulator hook used by the scripted stand-ins;
    learned policies would ignore it.
    """

    camera_image: RasterImage
    robot_state: RobotState
    target_pose: Pose
    sim_state: WorldState | None = None


@dataclass(frozen=True)
class SkillResult:
    status: str  # succeeded | failed | aborted
    reason: str
    steps_used: int
    world_after: WorldState
    chunk_sizes: tuple[int, ...] = ()

    @property
    def succeeded(self) -> bool:
        return self.status == "succeeded"


@dataclass(frozen=True)
class SkillExecConfig:
    z_offset: float = DEFAULT_Z_OFFSET
    step_budget: int = DEFAULT_STEP_BUDGET
    chunk_length: int = CHUNK_LENGTH


# ---------------------------------------------------------------------------
# Marker deprojection and approach
# ---------------------------------------------------------------------------

def marker_to_workspace(marker_id: int, annotation_set: list[PointAnnotation],
                        camera: Camera) -> Pose:
    """Approximate workspace pose for a marker: inverse camera map of its pixel."""
    for ann in annotation_set:
        if ann.marker_id == marker_id:
            x, y = camera.deproject(*ann.pixel)
            return Pose(x, y, 0.0, 0.0)
    raise UnknownMarker(f"marker {marker_id} not in annotation set")


def _axis_steps(delta: float, limit: float) -> list[float]:
    steps: list[float] = []
    remaining = delta
    while abs(remaining) > 1e-12:
        step = max(-limit, min(limit, remaining))
        steps.append(step)
        remaining -= step
    return steps


def _xy_commands(dx: float, dy: float) -> list[Command]:
    xs = _axis_steps(dx, STEP_XY_MAX)
    ys = _axis_steps(dy, STEP_XY_MAX)
    commands = []
    for i in range(max(len(xs), len(ys))):
        commands.append(Command(dx=xs[i] if i < len(xs) else 0.0, dy=ys[i] if i < len(ys) else 0.0))
    return commands


def _z_commands(dz: float) -> list[Command]:
    return [Command(dz=step) for step in _axis_steps(dz, STEP_Z_MAX)]


def in_workspace(pose: Pose) -> bool:
    return (
        WORKSPACE_X[0] <= pose.x <= WORKSPACE_X[1]
        and WORKSPACE_Y[0] <= pose.y <= WORKSPACE_Y[1]
        and WORKSPACE_Z[0] <= pose.z <= WORKSPACE_Z[1]
    )


def approach_move(world: WorldState, target: Pose, z_offset: float) -> WorldState:
    """Position the tool at the target xy, hovering z_offset above the target z."""
    if not in_workspace(target):
        raise UnreachableTarget(f"target {target} outside workspace")
    hover_z = min(target.z + z_offset, WORKSPACE_Z[1])
    tool = world.robot.tool_pose
    travel_z = max(tool.z, hover_z)
    for command in _z_commands(travel_z - tool.z):
        world = step_command(world, command)
    tool = world.robot.tool_pose
    for command in _xy_commands(target.x - tool.x, target.y - tool.y):
        world = step_command(world, command)
    tool = world.robot.tool_pose
    for command in _z_commands(hover_z - tool.z):
        world = step_command(world, command)
    return world


# ---------------------------------------------------------------------------
# Scripted policies
# ---------------------------------------------------------------------------

class ScriptedPolicy:
    """Shared machinery for the scripted pick/place/insert stand-ins."""

    def __init__(self, noise_sigma: float = 0.0, seed: int = 0) -> None:
        self.noise_sigma = noise_sigma
        self._rng = random.Random(seed)

    def reseed(self, seed: int) -> None:
        self._rng = random.Random(seed)

    def _aim(self, x: float, y: float) -> tuple[float, float]:
        if self.noise_sigma <= 0.0:
            return x, y
        return x + self._rng.gauss(0.0, self.noise_sigma), y + self._rng.gauss(0.0, self.noise_sigma)

    @staticmethod
    def _pad(commands: list[Command], done: bool = False) -> tuple[Trajectory, bool]:
        chunk = commands[:CHUNK_LENGTH]
        chunk += [ZERO_COMMAND] * (CHUNK_LENGTH - len(chunk))
        return Trajectory(tuple(chunk)), done

    @staticmethod
    def _reach(tool: Pose, aim_x: float, aim_y: float, work_z: float,
               grip: Grip) -> list[Command]:
        """Ascend if low, go to the aim point, descend to work height, act."""
        commands: list[Command] = []
        z = tool.z
        if math.hypot(aim_x - tool.x, aim_y - tool.y) > ALIGN_EPS and z < DEFAULT_Z_OFFSET - 1e-12:
            commands += _z_commands(DEFAULT_Z_OFFSET - z)
            z = DEFAULT_Z_OFFSET
        commands += _xy_commands(aim_x - tool.x, aim_y - tool.y)
        commands += _z_commands(work_z - z)
        commands.append(Command(grip=grip))
        return commands

    def _retreat(self, tool: Pose) -> tuple[Trajectory, bool]:
        if tool.z < DEFAULT_Z_OFFSET - 1e-12:
            return self._pad(_z_commands(DEFAULT_Z_OFFSET - tool.z))
        return self._pad([], done=True)

    def plan(self, policy_input: PolicyInput) -> tuple[Trajectory, bool]:
        raise NotImplementedError


class ScriptedPickPolicy(ScriptedPolicy):
    """Move over the nearest free gear, descend, close, and retreat."""

    def plan(self, policy_input: PolicyInput) -> tuple[Trajectory, bool]:
        world = policy_input.sim_state
        if world is None:
            raise PolicyFailure("scripted policy requires sim_state")
        tool = policy_input.robot_state.tool_pose
        if policy_input.robot_state.holding is not None:
            return self._retreat(tool)
        gears = [o for o in world.objects_of_kind(Gear) if o.is_free]
        if not gears:
            return self._pad([], done=True)
        target = policy_input.target_pose
        gear = min(gears, key=lambda o: (o.pose.xy_distance(target), o.object_id))
        aim_x, aim_y = self._aim(gear.pose.x, gear.pose.y)
        return self._pad(self._reach(tool, aim_x, aim_y, GRIP_Z, Grip.CLOSE))


class _ScriptedReleasePolicy(ScriptedPolicy):
    """Align over the nearest shaft site, descend to release height, open, retreat."""

    release_z = RELEASE_Z

    def plan(self, policy_input: PolicyInput) -> tuple[Trajectory, bool]:
        world = policy_input.sim_state
        if world is None:
            raise PolicyFailure("scripted policy requires sim_state")
        tool = policy_input.robot_state.tool_pose
        if policy_input.robot_state.holding is None:
            return self._retreat(tool)
        shafts = world.objects_of_kind(Shaft)
        if not shafts:
            return self._pad([], done=True)
        target = policy_input.target_pose
        shaft = min(shafts, key=lambda o: (o.pose.xy_distance(target), o.object_id))
        aim_x, aim_y = self._aim(shaft.pose.x, shaft.pose.y)
        return self._pad(self._reach(tool, aim_x, aim_y, self.release_z, Grip.OPEN))


class ScriptedInsertPolicy(_ScriptedReleasePolicy):
    release_z = RELEASE_Z


class ScriptedPlacePolicy(_ScriptedReleasePolicy):
    release_z = PLACE_Z


class MonolithicAssemblyPolicy(ScriptedPolicy):
    """Open-loop whole-task policy for the no-VLM baseline.

    Aims once per goal pair using a single noise draw and never re-aims, so
    it degrades quickly with imprecision; kept for qualitative comparison.
    """

    def __init__(self, noise_sigma: float = 0.0, seed: int = 0) -> None:
        super().__init__(noise_sigma, seed)
        self._aims: dict[int, tuple[float, float]] = {}

    def _fixed_aim(self, key: int, x: float, y: float) -> tuple[float, float]:
        if key not in self._aims:
            self._aims[key] = self._aim(x, y)
        return self._aims[key]

    def plan(self, policy_input: PolicyInput) -> tuple[Trajectory, bool]:
        world = policy_input.sim_state
        if world is None:
            raise PolicyFailure("scripted policy requires sim_state")
        tool = policy_input.robot_state.tool_pose
        pending = [
            (g, s) for g, s in world.goal.required_insertions if not check_insertion(world, g, s)
        ]
        if not pending:
            return self._retreat(tool)
        gear_id, shaft_id = pending[0]
        if policy_input.robot_state.holding is None:
            gear = world.object_by_id(gear_id)
            if not gear.is_free:
                return self._pad([], done=True)  # unrecoverable open-loop
            aim_x, aim_y = self._fixed_aim(gear_id, gear.pose.x, gear.pose.y)
            return self._pad(self._reach(tool, aim_x, aim_y, GRIP_Z, Grip.CLOSE))
        shaft = world.object_by_id(shaft_id)
        aim_x, aim_y = self._fixed_aim(100 + shaft_id, shaft.pose.x, shaft.pose.y)
        return self._pad(self._reach(tool, aim_x, aim_y, RELEASE_Z, Grip.OPEN))


def default_policies(noise_sigma: float = 0.0, seed: int = 0) -> dict[str, ScriptedPolicy]:
    """Scripted policy registry keyed by skill name."""
    return {
        "pick": ScriptedPickPolicy(noise_sigma, seed),
        "place": ScriptedPlacePolicy(noise_sigma, seed + 1),
        "insert": ScriptedInsertPolicy(noise_sigma, seed + 2),
    }


# ---------------------------------------------------------------------------
# Rollout
# ---------------------------------------------------------------------------

def rollout_policy(world: WorldState, policy, policy_input: PolicyInput, step_budget: int,
                   camera: Camera, success_predicate=None,
                   chunk_length: int = CHUNK_LENGTH) -> SkillResult:
    """Run a policy in fixed-length chunks until it declares completion.

    The camera image is re-rendered between chunks. Collision-rejected
    commands advance only the step count. Budget exhaustion maps to a failed
    result; a policy raising maps to an aborted one.
    """
    if step_budget < chunk_length:
        raise ValueError("step budget must cover at least one chunk")
    steps_used = 0
    chunk_sizes: list[int] = []
    current = policy_input
    while steps_used + chunk_length <= step_budget:
        try:
            trajectory, done = policy.plan(current)
        except Exception as exc:  # noqa: BLE001 - plug-in boundary
            return SkillResult("aborted", f"policy failure: {exc}", steps_used, world, tuple(chunk_sizes))
        if len(trajectory) != chunk_length:
            return SkillResult(
                "aborted",
                f"policy returned a {len(trajectory)}-command chunk, expected {chunk_length}",
                steps_used,
                world,
                tuple(chunk_sizes),
            )
        applied = 0
        try:
            for command in trajectory.commands:
                world = step_command(world, command)
                applied += 1
        except CommandOutOfRange as exc:
            steps_used += applied
            return SkillResult("aborted", f"policy failure: {exc}", steps_used, world, tuple(chunk_sizes))
        steps_used += applied
        chunk_sizes.append(applied)
        if done:
            if success_predicate is None or success_predicate(world):
                return SkillResult("succeeded", "", steps_used, world, tuple(chunk_sizes))
            return SkillResult("failed", "skill did not reach its goal state", steps_used, world,
                               tuple(chunk_sizes))
        current = PolicyInput(
            camera_image=render(world, camera),
            robot_state=world.robot,
            target_pose=current.target_pose,
            sim_state=world,
        )
    return SkillResult("failed", "step budget exhausted", steps_used, world, tuple(chunk_sizes))


# ---------------------------------------------------------------------------
# Skill dispatch
# ---------------------------------------------------------------------------

def _go_home(world: WorldState, config: SkillExecConfig) -> WorldState:
    home = Pose(0.0, -0.20, 0.12)
    world = approach_move(world, Pose(home.x, home.y, home.z - config.z_offset), config.z_offset)
    return step_command(world, Command(grip=Grip.OPEN))


def execute_skill(world: WorldState, decision: SkillDecision,
                  annotation_set: list[PointAnnotation], camera: Camera,
                  policies: dict[str, ScriptedPolicy],
                  config: SkillExecConfig = SkillExecConfig()) -> SkillResult:
    """Execute a parsed decision: precondition check, approach, policy rollout."""
    skill = decision.skill
    if skill.name is SkillName.DONE:
        return SkillResult("succeeded", "", 0, world)
    if skill.name is SkillName.INIT:
        before = world.step_count
        world = _go_home(world, config)
        return SkillResult("succeeded", "", world.step_count - before, world)

    if skill.name is SkillName.PICK and world.robot.holding is not None:
        return SkillResult(
            "aborted", "precondition violated: pick while holding", 0, world
        )
    if skill.name in (SkillName.PLACE, SkillName.INSERT) and world.robot.holding is None:
        return SkillResult(
            "aborted", "precondition violated: release with an empty gripper", 0, world
        )

    try:
        target = marker_to_workspace(skill.marker_id, annotation_set, camera)
    except UnknownMarker as exc:
        return SkillResult("aborted", str(exc), 0, world)
    held_before = world.robot.holding

    before = world.step_count
    try:
        world = approach_move(world, target, config.z_offset)
    except UnreachableTarget as exc:
        return SkillResult("aborted", str(exc), 0, world)
    approach_steps = world.step_count - before

    if skill.name is SkillName.PICK:
        expected = skill.marker_id
        predicate = lambda w: w.robot.holding == expected  # noqa: E731
    elif skill.name is SkillName.INSERT:
        gear_id, shaft_id = held_before, skill.marker_id - 100
        predicate = lambda w: check_insertion(w, gear_id, shaft_id)  # noqa: E731
    else:
        predicate = lambda w: w.robot.holding is None  # noqa: E731

    policy = policies[skill.name.value]
    policy_input = PolicyInput(
        camera_image=render(world, camera),
        robot_state=world.robot,
        target_pose=target,
        sim_state=world,
    )
    result = rollout_policy(
        world, policy, policy_input, config.step_budget, camera, predicate, config.chunk_length
    )
    return replace(result, steps_used=result.steps_used + approach_steps)
