"""Numeric ID marker overlays: discs with embedded bitmap digits.

Marker ids live in one shared namespace split into disjoint ranges so a bare
integer in a model reply is unambiguous: 1..99 are pickable objects, 101..199
are target locations. Digits come from an embedded 5x7 bitmap font, so marked
images are byte-deterministic with no font dependency.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AnnotationOutOfBounds, DuplicateMarkerIdAcrossTriplet
from .raster import RasterImage

OBJECT_MARKER_RANGE = range(1, 100)
LOCATION_MARKER_RANGE = range(101, 200)

# 5x7 digit bitmaps, row-major strings; '#' = lit pixel.
_DIGITS = {
    "0": ("#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": ("#####", "....#", "....#", "#####", "#....", "#....", "#####"),
    "3": ("#####", "....#", "....#", ".####", "....#", "....#", "#####"),
    "4": ("#...#", "#...#", "#...#", "#####", "....#", "....#", "....#"),
    "5": ("#####", "#....", "#....", "#####", "....#", "....#", "#####"),
    "6": ("#####", "#....", "#....", "#####", "#...#", "#...#", "#####"),
    "7": ("#####", "....#", "...#.", "..#..", "..#..", "..#..", "..#.."),
    "8": ("#####", "#...#", "#...#", "#####", "#...#", "#...#", "#####"),
    "9": ("#####", "#...#", "#...#", "#####", "....#", "....#", "#####"),
}
GLYPH_W = 5
GLYPH_H = 7
GLYPH_GAP = 1

OBJECT_MARKER_COLOR = (255, 255, 255)
LOCATION_MARKER_COLOR = (255, 214, 64)


def is_object_marker(marker_id: int) -> bool:
    return marker_id in OBJECT_MARKER_RANGE


def is_location_marker(marker_id: int) -> bool:
    return marker_id in LOCATION_MARKER_RANGE


@dataclass(frozen=True, slots=True)
class PointAnnotation:
    """One identified point: marker id, pixel position, human-readable label."""

    marker_id: int
    pixel: tuple[int, int]
    label: str

    def __post_init__(self) -> None:
        if self.marker_id <= 0:
            raise ValueError("marker_id must be positive")


@dataclass(frozen=True, slots=True)
class MarkStyle:
    disc_radius_px: int = 10
    font_scale: int = 1
    disc_color_rule: str = "namespace"  # "namespace" or "#rrggbb"
    text_color: tuple[int, int, int] = (0, 0, 0)

    def disc_color(self, marker_id: int) -> tuple[int, int, int]:
        if self.disc_color_rule == "namespace":
            return OBJECT_MARKER_COLOR if marker_id < 100 else LOCATION_MARKER_COLOR
        rule = self.disc_color_rule.lstrip("#")
        return tuple(int(rule[i : i + 2], 16) for i in (0, 2, 4))


DEFAULT_STYLE = MarkStyle()


def _text_extent(text: str, scale: int) -> tuple[int, int]:
    width = (len(text) * (GLYPH_W + GLYPH_GAP) - GLYPH_GAP) * scale
    return width, GLYPH_H * scale


def _draw_text(buf: np.ndarray, cx: int, cy: int, text: str, scale: int,
               color: tuple[int, int, int]) -> None:
    width, height = _text_extent(text, scale)
    left = cx - width // 2
    top = cy - height // 2
    x = left
    for ch in text:
        glyph = _DIGITS[ch]
        for row in range(GLYPH_H):
            for col in range(GLYPH_W):
                if glyph[row][col] != "#":
                    continue
                y0 = top + row * scale
                x0 = x + col * scale
                buf[y0 : y0 + scale, x0 : x0 + scale] = color
        x += (GLYPH_W + GLYPH_GAP) * scale


def mark_image(image: RasterImage, annotations: list[PointAnnotation],
               style: MarkStyle = DEFAULT_STYLE) -> RasterImage:
    """Overlay ID markers; returns a new image, drawing in ascending marker_id order."""
    ids = [a.marker_id for a in annotations]
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate marker_id within one annotation set")
    for ann in annotations:
        px, py = ann.pixel
        if not (0 <= px < image.width_px and 0 <= py < image.height_px):
            raise AnnotationOutOfBounds(f"marker {ann.marker_id} pixel {ann.pixel} outside image")
        text_w, text_h = _text_extent(str(ann.marker_id), style.font_scale)
        half_diag = ((text_w / 2) ** 2 + (text_h / 2) ** 2) ** 0.5
        if half_diag > style.disc_radius_px:
            raise ValueError(
                f"marker {ann.marker_id} text does not fit inside a disc of radius "
                f"{style.disc_radius_px}px"
            )
    if not annotations:
        return image
    buf = image.mutable_copy()
    r = style.disc_radius_px
    for ann in sorted(annotations, key=lambda a: a.marker_id):
        px, py = ann.pixel
        x0 = max(0, px - r)
        x1 = min(image.width_px - 1, px + r)
        y0 = max(0, py - r)
        y1 = min(image.height_px - 1, py + r)
        ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        mask = (xs - px) ** 2 + (ys - py) ** 2 <= r * r
        buf[y0 : y1 + 1, x0 : x1 + 1][mask] = style.disc_color(ann.marker_id)
        _draw_text(buf, px, py, str(ann.marker_id), style.font_scale, style.text_color)
    return RasterImage(image.width_px, image.height_px, buf)


@dataclass(frozen=True)
class ImageTriplet:
    """Task-object, current-state, and goal-state images, optionally marked."""

    object_img: RasterImage
    current_img: RasterImage
    goal_img: RasterImage
    annotations: dict[str, tuple[PointAnnotation, ...]] = field(default_factory=dict)

    ROLES = ("object", "current", "goal")

    def image_for(self, role: str) -> RasterImage:
        return {"object": self.object_img, "current": self.current_img, "goal": self.goal_img}[role]

    def annotations_for(self, role: str) -> tuple[PointAnnotation, ...]:
        return self.annotations.get(role, ())

    def all_marker_ids(self) -> set[int]:
        ids: set[int] = set()
        for anns in self.annotations.values():
            ids.update(a.marker_id for a in anns)
        return ids

    def content_hashes(self) -> dict[str, str]:
        return {role: self.image_for(role).content_hash() for role in self.ROLES}


def mark_triplet(triplet: ImageTriplet,
                 per_image_annotations: dict[str, list[PointAnnotation]],
                 style: MarkStyle = DEFAULT_STYLE) -> ImageTriplet:
    """Mark each triplet member with its own set under one shared id namespace."""
    id_to_label: dict[int, str] = {}
    for role in ImageTriplet.ROLES:
        for ann in per_image_annotations.get(role, []):
            seen = id_to_label.get(ann.marker_id)
            if seen is not None and seen != ann.label:
                raise DuplicateMarkerIdAcrossTriplet(
                    f"marker {ann.marker_id} is '{seen}' in one image and '{ann.label}' in another"
                )
            id_to_label[ann.marker_id] = ann.label
    marked = {
        role: mark_image(triplet.image_for(role), list(per_image_annotations.get(role, [])), style)
        for role in ImageTriplet.ROLES
    }
    return ImageTriplet(
        object_img=marked["object"],
        current_img=marked["current"],
        goal_img=marked["goal"],
        annotations={
            role: tuple(per_image_annotations.get(role, [])) for role in ImageTriplet.ROLES
        },
    )


def annotations_to_json(annotations: list[PointAnnotation]) -> list[dict]:
    return [
        {"id": a.marker_id, "x": a.pixel[0], "y": a.pixel[1], "label": a.label}
        for a in annotations
    ]


def annotations_from_json(items: list[dict]) -> list[PointAnnotation]:
    return [
        PointAnnotation(marker_id=int(i["id"]), pixel=(int(i["x"]), int(i["y"])), label=str(i["label"]))
        for i in items
    ]
