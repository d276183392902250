"""Deterministic kinematic tabletop world: gears, shafts, a base plate.

The world is a value: every operation returns a new ``WorldState`` and never
mutates its input, so episodes can be advanced and branched freely. Motion is
purely kinematic; the only contact semantics are the grasp rule, the
peg-in-hole insertion clearance rule, and disc-overlap collision rejection.

All distances are meters, angles radians. The table surface is the z = 0
plane.
"""

from __future__ import annotations

import enum
import graphlib
import hashlib
import json
import math
import random
from dataclasses import dataclass, field, replace

from .errors import CollisionRejected, CommandOutOfRange, InvalidScenario, WrongKind
from .geometry import Camera, Pose, View, normalize_angle

# Per-step command limits. 5 mm translation steps keep 16-command chunks
# meaningful at the ~0.5 m workspace scale.
STEP_XY_MAX = 0.005
STEP_Z_MAX = 0.005
STEP_YAW_MAX = 0.1

GRASP_RADIUS = 0.010          # tool-to-grasp-point distance that allows a grasp
MAX_APERTURE = 0.080          # gripper fully open
GEAR_THICKNESS = 0.012        # collision height of a gear lying on the table

WORKSPACE_X = (-0.25, 0.25)
WORKSPACE_Y = (-0.25, 0.25)
WORKSPACE_Z = (0.0, 0.20)


# ---------------------------------------------------------------------------
# Object kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Gear:
    outer_radius_m: float
    bore_radius_m: float
    tooth_count: int

    def __post_init__(self) -> None:
        if not 0.0 < self.bore_radius_m < self.outer_radius_m:
            raise ValueError("gear requires 0 < bore_radius < outer_radius")
        if self.tooth_count < 3:
            raise ValueError("gear requires tooth_count >= 3")


@dataclass(frozen=True, slots=True)
class Shaft:
    radius_m: float
    height_m: float

    def __post_init__(self) -> None:
        if self.radius_m <= 0.0 or self.height_m <= 0.0:
            raise ValueError("shaft requires positive radius and height")


@dataclass(frozen=True, slots=True)
class BasePlate:
    width_m: float
    depth_m: float

    def __post_init__(self) -> None:
        if self.width_m <= 0.0 or self.depth_m <= 0.0:
            raise ValueError("plate requires positive width and depth")


ObjectKind = Gear | Shaft | BasePlate


def footprint_radius(kind: ObjectKind) -> float:
    """Planar collision radius. The base plate is a backdrop and never collides."""
    if isinstance(kind, Gear):
        return kind.outer_radius_m
    if isinstance(kind, Shaft):
        return kind.radius_m
    return 0.0


# ---------------------------------------------------------------------------
# Scene objects and statuses
# ---------------------------------------------------------------------------

class StatusKind(enum.Enum):
    FREE = "free"
    GRASPED = "grasped"
    INSERTED = "inserted"


@dataclass(frozen=True, slots=True)
class Status:
    kind: StatusKind
    shaft_id: int | None = None

    def __post_init__(self) -> None:
        if (self.kind is StatusKind.INSERTED) != (self.shaft_id is not None):
            raise ValueError("shaft_id is set iff status is INSERTED")


FREE = Status(StatusKind.FREE)
GRASPED = Status(StatusKind.GRASPED)


def inserted_on(shaft_id: int) -> Status:
    return Status(StatusKind.INSERTED, shaft_id)


@dataclass(frozen=True, slots=True)
class SceneObject:
    object_id: int
    label: str
    kind: ObjectKind
    pose: Pose
    status: Status = FREE

    def __post_init__(self) -> None:
        if not 1 <= self.object_id <= 99:
            raise ValueError("object_id must be in 1..99")
        if not self.label:
            raise ValueError("label must be non-empty")

    @property
    def is_free(self) -> bool:
        return self.status.kind is StatusKind.FREE

    @property
    def is_grasped(self) -> bool:
        return self.status.kind is StatusKind.GRASPED

    @property
    def is_inserted(self) -> bool:
        return self.status.kind is StatusKind.INSERTED


@dataclass(frozen=True, slots=True)
class RobotState:
    tool_pose: Pose
    gripper_aperture: float = MAX_APERTURE
    holding: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.gripper_aperture <= MAX_APERTURE:
            raise ValueError("gripper aperture out of range")


@dataclass(frozen=True, slots=True)
class GoalSpec:
    """Required (gear, shaft) insertions plus gear-before-gear ordering constraints."""

    required_insertions: tuple[tuple[int, int], ...] = ()
    ordering_constraints: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True, slots=True)
class InsertionEvent:
    gear_id: int
    shaft_id: int
    step: int


@dataclass(frozen=True, slots=True)
class WorldState:
    objects: tuple[SceneObject, ...]
    robot: RobotState
    goal: GoalSpec
    rng_seed: int
    step_count: int = 0
    insertion_log: tuple[InsertionEvent, ...] = ()

    def object_by_id(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"no object with id {object_id}")

    def objects_of_kind(self, kind_cls) -> list[SceneObject]:
        return [o for o in self.objects if isinstance(o.kind, kind_cls)]

    def held_object(self) -> SceneObject | None:
        if self.robot.holding is None:
            return None
        return self.object_by_id(self.robot.holding)


# ---------------------------------------------------------------------------
# Robot commands
# ---------------------------------------------------------------------------

class Grip(enum.Enum):
    HOLD = "hold"
    OPEN = "open"
    CLOSE = "close"


@dataclass(frozen=True, slots=True)
class Command:
    """One kinematic step: translation deltas, yaw delta, gripper action."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dyaw: float = 0.0
    grip: Grip = Grip.HOLD


ZERO_COMMAND = Command()


# ---------------------------------------------------------------------------
# Scenario configuration and spawning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectSpec:
    object_id: int
    label: str
    kind: ObjectKind
    pose: Pose | None = None  # None -> randomly placed


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    objects: tuple[ObjectSpec, ...]
    goal: GoalSpec
    camera: Camera
    object_view_id: int | None = None
    object_view_size_px: int = 96
    object_view_mpp: float = 0.00125
    robot_home: Pose = Pose(0.0, -0.20, 0.12)
    placement_region: tuple[float, float, float, float] = (-0.20, -0.20, 0.20, 0.20)
    placement_clearance: float = 0.01
    recognition_labels: tuple[str, ...] = ()

    def labels(self) -> tuple[str, ...]:
        if self.recognition_labels:
            return self.recognition_labels
        return tuple(s.label for s in self.objects if not isinstance(s.kind, BasePlate))


def _check_goal_references(specs: tuple[ObjectSpec, ...], goal: GoalSpec) -> None:
    kinds = {s.object_id: s.kind for s in specs}
    gears_in_pairs: set[int] = set()
    for gear_id, shaft_id in goal.required_insertions:
        if gear_id not in kinds or not isinstance(kinds[gear_id], Gear):
            raise InvalidScenario(f"goal references gear_id {gear_id} that is not a gear in the scenario")
        if shaft_id not in kinds or not isinstance(kinds[shaft_id], Shaft):
            raise InvalidScenario(f"goal references shaft_id {shaft_id} that is not a shaft in the scenario")
        if gear_id in gears_in_pairs:
            raise InvalidScenario(f"gear_id {gear_id} appears in more than one goal pair")
        gears_in_pairs.add(gear_id)
    goal_gears = {g for g, _ in goal.required_insertions}
    predecessors: dict[int, set[int]] = {}
    for before, after in goal.ordering_constraints:
        if before not in goal_gears or after not in goal_gears:
            raise InvalidScenario("ordering constraint references a gear outside the goal pairs")
        predecessors.setdefault(after, set()).add(before)
    try:
        graphlib.TopologicalSorter(predecessors).prepare()
    except graphlib.CycleError as exc:
        raise InvalidScenario("ordering constraints contain a cycle") from exc


def _free_overlap(a_pose: Pose, a_kind: ObjectKind, b_pose: Pose, b_kind: ObjectKind,
                  clearance: float = 0.0) -> bool:
    ra = footprint_radius(a_kind)
    rb = footprint_radius(b_kind)
    if ra == 0.0 or rb == 0.0:
        return False
    return a_pose.xy_distance(b_pose) <= ra + rb + clearance


def spawn_world(config: ScenarioConfig, seed: int) -> WorldState:
    """Build a world from a scenario config; identical inputs give identical worlds."""
    seen_ids: set[int] = set()
    for spec in config.objects:
        if spec.object_id in seen_ids:
            raise InvalidScenario(f"duplicate object_id {spec.object_id}")
        seen_ids.add(spec.object_id)
    _check_goal_references(config.objects, config.goal)
    if config.object_view_id is not None and config.object_view_id not in seen_ids:
        raise InvalidScenario(f"object view references missing object_id {config.object_view_id}")

    placed: list[SceneObject] = []
    fixed = [s for s in config.objects if s.pose is not None]
    sampled = [s for s in config.objects if s.pose is None]
    for spec in fixed:
        for other in placed:
            if _free_overlap(spec.pose, spec.kind, other.pose, other.kind):
                raise InvalidScenario(
                    f"fixed placements of objects {spec.object_id} and {other.object_id} overlap"
                )
        placed.append(SceneObject(spec.object_id, spec.label, spec.kind, spec.pose))

    rng = random.Random(seed)
    x0, y0, x1, y1 = config.placement_region
    for spec in sorted(sampled, key=lambda s: s.object_id):
        radius = footprint_radius(spec.kind)
        for _ in range(1000):
            x = rng.uniform(x0 + radius, x1 - radius)
            y = rng.uniform(y0 + radius, y1 - radius)
            pose = Pose(x, y, 0.0, 0.0)
            if not any(
                _free_overlap(pose, spec.kind, o.pose, o.kind, config.placement_clearance)
                for o in placed
            ):
                placed.append(SceneObject(spec.object_id, spec.label, spec.kind, pose))
                break
        else:
            raise InvalidScenario(f"could not place object {spec.object_id} without overlap")

    placed.sort(key=lambda o: o.object_id)
    robot = RobotState(tool_pose=config.robot_home)
    return WorldState(objects=tuple(placed), robot=robot, goal=config.goal, rng_seed=seed)


# ---------------------------------------------------------------------------
# Command application
# ---------------------------------------------------------------------------

def _insertable_shaft(world: WorldState, gear: SceneObject, pose: Pose) -> SceneObject | None:
    """Shaft the gear would slide onto if released at ``pose``, or None."""
    assert isinstance(gear.kind, Gear)
    best: SceneObject | None = None
    best_offset = math.inf
    for shaft in world.objects_of_kind(Shaft):
        offset = pose.xy_distance(shaft.pose)
        clearance = gear.kind.bore_radius_m - shaft.kind.radius_m
        shaft_top = shaft.pose.z + shaft.kind.height_m
        if clearance >= 0.0 and offset <= clearance and pose.z < shaft_top and offset < best_offset:
            best = shaft
            best_offset = offset
    return best


def _held_gear_collision(world: WorldState, gear: SceneObject, pose: Pose) -> str | None:
    """Reason string if a held gear at ``pose`` interpenetrates something, else None."""
    kind = gear.kind
    assert isinstance(kind, Gear)
    for other in world.objects:
        if other.object_id == gear.object_id:
            continue
        if isinstance(other.kind, BasePlate):
            continue
        if isinstance(other.kind, Shaft):
            shaft_top = other.pose.z + other.kind.height_m
            if pose.z >= shaft_top:
                continue
            offset = pose.xy_distance(other.pose)
            # The shaft passes through the bore when offset + shaft radius fits
            # inside it; otherwise any disc overlap is an interpenetration.
            if offset + other.kind.radius_m <= kind.bore_radius_m:
                continue
            if offset <= kind.outer_radius_m + other.kind.radius_m:
                return f"gear {gear.object_id} would hit shaft {other.object_id}"
        elif isinstance(other.kind, Gear) and other.is_free:
            other_top = other.pose.z + GEAR_THICKNESS
            if pose.z >= other_top:
                continue
            if pose.xy_distance(other.pose) <= kind.outer_radius_m + other.kind.outer_radius_m:
                return f"gear {gear.object_id} would hit gear {other.object_id}"
    return None


def _release_collision(world: WorldState, gear: SceneObject, pose: Pose) -> str | None:
    """Reason string if dropping the gear to the table at ``pose`` overlaps a free object."""
    kind = gear.kind
    assert isinstance(kind, Gear)
    for other in world.objects:
        if other.object_id == gear.object_id or not other.is_free:
            continue
        radius = footprint_radius(other.kind)
        if radius == 0.0:
            continue
        if pose.xy_distance(other.pose) <= kind.outer_radius_m + radius:
            return f"releasing gear {gear.object_id} would drop it onto object {other.object_id}"
    return None


def _replace_object(objects: tuple[SceneObject, ...], updated: SceneObject) -> tuple[SceneObject, ...]:
    return tuple(updated if o.object_id == updated.object_id else o for o in objects)


def _check_world_invariants(world: WorldState) -> None:
    grasped = [o for o in world.objects if o.is_grasped]
    if len(grasped) > 1:
        raise AssertionError("more than one grasped object")
    holding = world.robot.holding
    if holding is None and grasped:
        raise AssertionError("grasped object without robot.holding")
    if holding is not None and (not grasped or grasped[0].object_id != holding):
        raise AssertionError("robot.holding disagrees with object statuses")


def apply_command(world: WorldState, command: Command) -> WorldState:
    """Advance the world by one command.

    Raises CommandOutOfRange for over-limit commands (world untouched) and
    CollisionRejected when the motion would interpenetrate; the rejected
    world (only step_count advanced) rides on the exception.
    """
    if (
        abs(command.dx) > STEP_XY_MAX
        or abs(command.dy) > STEP_XY_MAX
        or abs(command.dz) > STEP_Z_MAX
        or abs(command.dyaw) > STEP_YAW_MAX
    ):
        raise CommandOutOfRange(f"command exceeds per-step limits: {command}")

    tool = world.robot.tool_pose
    new_tool = Pose(
        tool.x + command.dx,
        tool.y + command.dy,
        max(0.0, tool.z + command.dz),
        normalize_angle(tool.yaw + command.dyaw),
    )
    rejected = replace(world, step_count=world.step_count + 1)

    held = world.held_object()
    objects = world.objects
    robot = world.robot

    if held is not None:
        carried = Pose(new_tool.x, new_tool.y, new_tool.z, new_tool.yaw)
        reason = _held_gear_collision(world, held, carried)
        if reason is not None:
            raise CollisionRejected(reason, world=rejected)
        held = replace(held, pose=carried)
        objects = _replace_object(objects, held)

    aperture = robot.gripper_aperture
    holding = robot.holding
    log = world.insertion_log

    if command.grip is Grip.CLOSE:
        aperture = 0.0
        if holding is None:
            candidates = [
                o
                for o in objects
                if isinstance(o.kind, Gear) and o.is_free
                and new_tool.distance(o.pose) <= GRASP_RADIUS
            ]
            if candidates:
                candidates.sort(key=lambda o: (new_tool.distance(o.pose), o.object_id))
                grabbed = replace(candidates[0], status=GRASPED)
                objects = _replace_object(objects, grabbed)
                holding = grabbed.object_id
    elif command.grip is Grip.OPEN:
        if holding is not None:
            gear = next(o for o in objects if o.object_id == holding)
            shaft = _insertable_shaft(world, gear, gear.pose)
            if shaft is not None:
                seated = replace(
                    gear,
                    pose=Pose(shaft.pose.x, shaft.pose.y, 0.0, gear.pose.yaw),
                    status=inserted_on(shaft.object_id),
                )
                objects = _replace_object(objects, seated)
                holding = None
                log = log + (InsertionEvent(gear.object_id, shaft.object_id, world.step_count + 1),)
            else:
                dropped_pose = Pose(gear.pose.x, gear.pose.y, 0.0, gear.pose.yaw)
                reason = _release_collision(world, gear, dropped_pose)
                if reason is not None:
                    raise CollisionRejected(reason, world=rejected)
                objects = _replace_object(objects, replace(gear, pose=dropped_pose, status=FREE))
                holding = None
        aperture = MAX_APERTURE

    new_world = WorldState(
        objects=objects,
        robot=RobotState(tool_pose=new_tool, gripper_aperture=aperture, holding=holding),
        goal=world.goal,
        rng_seed=world.rng_seed,
        step_count=world.step_count + 1,
        insertion_log=log,
    )
    _check_world_invariants(new_world)
    return new_world


def step_command(world: WorldState, command: Command) -> WorldState:
    """apply_command that absorbs collision rejections into the returned world."""
    try:
        return apply_command(world, command)
    except CollisionRejected as exc:
        return exc.world


# ---------------------------------------------------------------------------
# Goal predicates
# ---------------------------------------------------------------------------

def check_insertion(world: WorldState, gear_id: int, shaft_id: int) -> bool:
    """True iff the gear currently sits on exactly that shaft."""
    gear = world.object_by_id(gear_id)
    shaft = world.object_by_id(shaft_id)
    if not isinstance(gear.kind, Gear):
        raise WrongKind(f"object {gear_id} is not a gear")
    if not isinstance(shaft.kind, Shaft):
        raise WrongKind(f"object {shaft_id} is not a shaft")
    return gear.is_inserted and gear.status.shaft_id == shaft_id


def insertion_step(world: WorldState, gear_id: int, shaft_id: int) -> int | None:
    for event in world.insertion_log:
        if event.gear_id == gear_id and event.shaft_id == shaft_id:
            return event.step
    return None


def unsatisfied_pairs(world: WorldState) -> list[tuple[int, int]]:
    return [
        (g, s) for g, s in world.goal.required_insertions if not check_insertion(world, g, s)
    ]


def available_pairs(world: WorldState) -> list[tuple[int, int]]:
    """Unsatisfied goal pairs whose ordering prerequisites are all satisfied."""
    shaft_of = dict(world.goal.required_insertions)
    done = {g for g, s in world.goal.required_insertions if check_insertion(world, g, s)}
    out = []
    for gear_id, shaft_id in unsatisfied_pairs(world):
        prereqs = [b for b, a in world.goal.ordering_constraints if a == gear_id]
        if all(b in done or b not in shaft_of for b in prereqs):
            out.append((gear_id, shaft_id))
    return out


def assembly_complete(world: WorldState) -> bool:
    """All goal pairs inserted and the recorded insertion order respects the DAG."""
    for gear_id, shaft_id in world.goal.required_insertions:
        if not check_insertion(world, gear_id, shaft_id):
            return False
    shaft_of = dict(world.goal.required_insertions)
    for before, after in world.goal.ordering_constraints:
        t_before = insertion_step(world, before, shaft_of[before])
        t_after = insertion_step(world, after, shaft_of[after])
        if t_before is None or t_after is None or t_before >= t_after:
            return False
    return True


# ---------------------------------------------------------------------------
# Canonical serialization (sorted keys, floats with 6 decimal places)
# ---------------------------------------------------------------------------

def _fmt_float(value: float) -> str:
    text = f"{value:.6f}"
    return "0.000000" if text == "-0.000000" else text


def canonical_json(value) -> str:
    """Canonical UTF-8 JSON: sorted keys, fixed 6-decimal float formatting."""
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        return _fmt_float(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        items = ",".join(
            f"{json.dumps(k, ensure_ascii=False)}:{canonical_json(v)}"
            for k, v in sorted(value.items())
        )
        return "{" + items + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in value) + "]"
    raise TypeError(f"cannot canonicalize {type(value)!r}")


def _pose_dict(pose: Pose) -> dict:
    return {"x": pose.x, "y": pose.y, "z": pose.z, "yaw": pose.yaw}


def _kind_dict(kind: ObjectKind) -> dict:
    if isinstance(kind, Gear):
        return {
            "type": "gear",
            "outer_radius_m": kind.outer_radius_m,
            "bore_radius_m": kind.bore_radius_m,
            "tooth_count": kind.tooth_count,
        }
    if isinstance(kind, Shaft):
        return {"type": "shaft", "radius_m": kind.radius_m, "height_m": kind.height_m}
    return {"type": "plate", "width_m": kind.width_m, "depth_m": kind.depth_m}


def world_to_dict(world: WorldState) -> dict:
    return {
        "objects": [
            {
                "object_id": o.object_id,
                "label": o.label,
                "kind": _kind_dict(o.kind),
                "pose": _pose_dict(o.pose),
                "status": {
                    "kind": o.status.kind.value,
                    "shaft_id": o.status.shaft_id,
                },
            }
            for o in world.objects
        ],
        "robot": {
            "tool_pose": _pose_dict(world.robot.tool_pose),
            "gripper_aperture": world.robot.gripper_aperture,
            "holding": world.robot.holding,
        },
        "goal": {
            "required_insertions": [list(p) for p in world.goal.required_insertions],
            "ordering_constraints": [list(p) for p in world.goal.ordering_constraints],
        },
        "rng_seed": world.rng_seed,
        "step_count": world.step_count,
        "insertion_log": [
            {"gear_id": e.gear_id, "shaft_id": e.shaft_id, "step": e.step}
            for e in world.insertion_log
        ],
    }


def serialize_world(world: WorldState) -> str:
    return canonical_json(world_to_dict(world))


def world_hash(world: WorldState) -> str:
    return hashlib.sha256(serialize_world(world).encode("utf-8")).hexdigest()


def top_camera(width_px: int = 200, height_px: int = 200,
               meters_per_pixel: float = 0.0025, view: View = View.TOP_CURRENT) -> Camera:
    """Default top-down camera covering the whole workspace."""
    return Camera(
        view=view,
        origin_x=WORKSPACE_X[0],
        origin_y=WORKSPACE_Y[1],
        meters_per_pixel=meters_per_pixel,
        width_px=width_px,
        height_px=height_px,
    )
