"""Orthographic top-down renderer for the image triplet.

Flat-shaded discs with radial tooth ticks, per-object colors keyed by
object_id, no anti-aliasing: the same world and camera always produce
byte-identical pixels.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .errors import ObjectOutOfFrame, UnknownLabel
from .geometry import Camera, Pose, View
from .marking import PointAnnotation
from .raster import RasterImage
from .world import BasePlate, Gear, SceneObject, Shaft, WorldState, inserted_on

BACKGROUND = (240, 240, 240)
PLATE_COLOR = (214, 212, 205)

PALETTE = (
    (196, 64, 54),    # red
    (58, 119, 191),   # blue
    (84, 158, 68),    # green
    (222, 170, 42),   # amber
    (142, 84, 176),   # purple
    (46, 166, 166),   # teal
    (221, 114, 158),  # pink
    (128, 128, 60),   # olive
    (230, 120, 50),   # orange
    (90, 90, 200),    # indigo
    (120, 180, 90),   # light green
    (170, 110, 70),   # brown
)

# Pickable objects take their own id as marker id; fixtures (shafts, plates)
# become target-location markers offset into the 101..199 range.
LOCATION_MARKER_BASE = 100


def object_color(object_id: int) -> tuple[int, int, int]:
    return PALETTE[(object_id - 1) % len(PALETTE)]


def _darken(color: tuple[int, int, int]) -> tuple[int, int, int]:
    return tuple(int(c * 0.55) for c in color)


def marker_id_for(obj: SceneObject) -> int:
    if isinstance(obj.kind, Gear):
        return obj.object_id
    return LOCATION_MARKER_BASE + obj.object_id


def goal_configured_world(world: WorldState) -> WorldState:
    """World with every required insertion satisfied, for rendering the goal view."""
    objects = list(world.objects)
    by_id = {o.object_id: i for i, o in enumerate(objects)}
    for gear_id, shaft_id in world.goal.required_insertions:
        shaft = objects[by_id[shaft_id]]
        gear = objects[by_id[gear_id]]
        objects[by_id[gear_id]] = replace(
            gear,
            pose=Pose(shaft.pose.x, shaft.pose.y, 0.0, gear.pose.yaw),
            status=inserted_on(shaft_id),
        )
    return replace(world, objects=tuple(objects))


def _fill_disc(buf: np.ndarray, camera: Camera, cx: float, cy: float,
               radius_m: float, color: tuple[int, int, int]) -> None:
    mpp = camera.meters_per_pixel
    u = (cx - camera.origin_x) / mpp
    v = (camera.origin_y - cy) / mpp
    r = radius_m / mpp
    x0 = max(0, int(math.floor(u - r)) - 1)
    x1 = min(camera.width_px - 1, int(math.ceil(u + r)) + 1)
    y0 = max(0, int(math.floor(v - r)) - 1)
    y1 = min(camera.height_px - 1, int(math.ceil(v + r)) + 1)
    if x0 > x1 or y0 > y1:
        return
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    mask = (xs + 0.5 - u) ** 2 + (ys + 0.5 - v) ** 2 <= r * r
    buf[y0 : y1 + 1, x0 : x1 + 1][mask] = color


def _fill_rect(buf: np.ndarray, camera: Camera, cx: float, cy: float,
               width_m: float, depth_m: float, color: tuple[int, int, int]) -> None:
    mpp = camera.meters_per_pixel
    u0 = (cx - width_m / 2 - camera.origin_x) / mpp
    u1 = (cx + width_m / 2 - camera.origin_x) / mpp
    v0 = (camera.origin_y - (cy + depth_m / 2)) / mpp
    v1 = (camera.origin_y - (cy - depth_m / 2)) / mpp
    x0 = max(0, int(math.floor(u0)))
    x1 = min(camera.width_px - 1, int(math.ceil(u1)) - 1)
    y0 = max(0, int(math.floor(v0)))
    y1 = min(camera.height_px - 1, int(math.ceil(v1)) - 1)
    if x0 > x1 or y0 > y1:
        return
    buf[y0 : y1 + 1, x0 : x1 + 1] = color


def _draw_tick(buf: np.ndarray, camera: Camera, cx: float, cy: float, angle: float,
               r_inner: float, r_outer: float, color: tuple[int, int, int]) -> None:
    mpp = camera.meters_per_pixel
    steps = max(2, int(math.ceil((r_outer - r_inner) / (0.5 * mpp))))
    ca, sa = math.cos(angle), math.sin(angle)
    for i in range(steps + 1):
        r = r_inner + (r_outer - r_inner) * i / steps
        px, py = camera.project(cx + r * ca, cy + r * sa)
        if camera.contains_pixel(px, py):
            buf[py, px] = color


def _draw_gear(buf: np.ndarray, camera: Camera, obj: SceneObject) -> None:
    kind = obj.kind
    assert isinstance(kind, Gear)
    color = object_color(obj.object_id)
    _fill_disc(buf, camera, obj.pose.x, obj.pose.y, kind.outer_radius_m, color)
    tick_color = _darken(color)
    for t in range(kind.tooth_count):
        angle = obj.pose.yaw + 2.0 * math.pi * t / kind.tooth_count
        _draw_tick(
            buf, camera, obj.pose.x, obj.pose.y, angle,
            kind.outer_radius_m * 0.72, kind.outer_radius_m * 0.98, tick_color,
        )
    _fill_disc(buf, camera, obj.pose.x, obj.pose.y, kind.bore_radius_m, BACKGROUND)


def _draw_object(buf: np.ndarray, camera: Camera, obj: SceneObject) -> None:
    if isinstance(obj.kind, BasePlate):
        _fill_rect(buf, camera, obj.pose.x, obj.pose.y, obj.kind.width_m, obj.kind.depth_m, PLATE_COLOR)
    elif isinstance(obj.kind, Shaft):
        color = object_color(obj.object_id)
        _fill_disc(buf, camera, obj.pose.x, obj.pose.y, obj.kind.radius_m, color)
        _fill_disc(buf, camera, obj.pose.x, obj.pose.y, obj.kind.radius_m * 0.35, _darken(color))
    else:
        _draw_gear(buf, camera, obj)


def _visible_objects(world: WorldState, camera: Camera) -> list[SceneObject]:
    if camera.view is View.OBJECT_CLOSEUP:
        return [world.object_by_id(camera.target_object_id)]
    plates = [o for o in world.objects if isinstance(o.kind, BasePlate)]
    rest = [o for o in world.objects if not isinstance(o.kind, BasePlate)]
    rest.sort(key=lambda o: (o.pose.z, o.object_id))
    return plates + rest


def render(world: WorldState, camera: Camera) -> RasterImage:
    """Render one view; raises ObjectOutOfFrame if a resting object's center leaves frame."""
    scene = goal_configured_world(world) if camera.view is View.TOP_GOAL else world
    drawables = _visible_objects(scene, camera)
    for obj in drawables:
        if isinstance(obj.kind, BasePlate) or obj.is_grasped:
            continue
        if not camera.contains_world(obj.pose.x, obj.pose.y):
            raise ObjectOutOfFrame(
                f"object {obj.object_id} ({obj.label}) projects outside the {camera.view.value} image"
            )
    buf = np.empty((camera.height_px, camera.width_px, 3), dtype=np.uint8)
    buf[:, :] = BACKGROUND
    for obj in drawables:
        _draw_object(buf, camera, obj)
    return RasterImage(camera.width_px, camera.height_px, buf)


def closeup_camera(world: WorldState, object_id: int, width_px: int = 96,
                   height_px: int = 96, meters_per_pixel: float = 0.00125) -> Camera:
    """Closeup camera centered on an object's current position."""
    obj = world.object_by_id(object_id)
    half_w = width_px * meters_per_pixel / 2.0
    half_h = height_px * meters_per_pixel / 2.0
    return Camera(
        view=View.OBJECT_CLOSEUP,
        origin_x=obj.pose.x - half_w,
        origin_y=obj.pose.y + half_h,
        meters_per_pixel=meters_per_pixel,
        width_px=width_px,
        height_px=height_px,
        target_object_id=object_id,
    )


def ground_truth_points(world: WorldState, camera: Camera, labels: list[str]) -> list[PointAnnotation]:
    """Perfect recognition: one annotation per label-matching object at its projected center.

    Marker ids are assigned deterministically: gears use their object id,
    fixtures use 100 + object id, emitted in ascending object_id order.
    """
    scene = goal_configured_world(world) if camera.view is View.TOP_GOAL else world
    label_set = list(dict.fromkeys(labels))
    known = {o.label for o in world.objects}
    missing = [l for l in label_set if l not in known]
    if missing:
        raise UnknownLabel(f"labels match no object: {missing}")
    annotations: list[PointAnnotation] = []
    for obj in sorted(_visible_objects(scene, camera), key=lambda o: o.object_id):
        if obj.label not in label_set:
            continue
        px, py = camera.project(obj.pose.x, obj.pose.y)
        if not camera.contains_pixel(px, py):
            continue
        annotations.append(PointAnnotation(marker_id=marker_id_for(obj), pixel=(px, py), label=obj.label))
    return annotations
