"""Prompt assembly for both pipeline stages.

The reasoning prompt follows a five-part structure: task context, state
description (with the marker table), skill catalog, decision logic, and the
output format. The output-format section is generated from the same grammar
table the parser validates against, so the two can never drift apart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import EmptyLabelSet, MissingAnnotations
from .grammar import SkillDecision, output_format_text, skill_signatures
from .marking import ImageTriplet, PointAnnotation, is_location_marker
from .raster import RasterImage

HISTORY_DEPTH = 20


@dataclass(frozen=True)
class PromptTemplate:
    """Five-part reasoning prompt template; all parts must be non-empty."""

    task_context: str
    state_description_template: str
    skill_catalog_text: str
    decision_logic_text: str
    output_format_text: str

    def __post_init__(self) -> None:
        for name in (
            "task_context",
            "state_description_template",
            "skill_catalog_text",
            "decision_logic_text",
            "output_format_text",
        ):
            if not getattr(self, name).strip():
                raise ValueError(f"prompt template part '{name}' is empty")

    @classmethod
    def load(cls, path) -> PromptTemplate:
        """Load a template from a UTF-8 JSON file with the five part names as keys."""
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(
            task_context=data["task_context"],
            state_description_template=data["state_description_template"],
            skill_catalog_text=data["skill_catalog_text"],
            decision_logic_text=data["decision_logic_text"],
            output_format_text=data["output_format_text"],
        )


def default_template() -> PromptTemplate:
    catalog = "\n".join(f"  - {sig}" for sig in skill_signatures())
    return PromptTemplate(
        task_context=(
            "You are the planner for a single-arm tabletop robot assembling gears "
            "onto shafts. You see three images: the task object, the current "
            "workbench state, and the goal state."
        ),
        state_description_template=(
            "Numeric markers identify scene entities. Markers 1-99 are pickable "
            "objects, markers 101-199 are target locations (shaft sites).\n"
            "Visible markers:\n{marker_table}"
        ),
        skill_catalog_text=(
            "Available primitive skills:\n" + catalog
        ),
        decision_logic_text=(
            "Compare the current image with the goal image. Choose the single "
            "next primitive that makes progress: pick a gear that still needs "
            "to be mounted (respecting any required order), insert a held gear "
            "at its target location, and reply done when the current state "
            "matches the goal."
        ),
        output_format_text=output_format_text(),
    )


@dataclass(frozen=True, slots=True)
class TextPart:
    text: str


@dataclass(frozen=True, slots=True)
class ImagePart:
    role: str  # object | current | goal
    image: RasterImage


@dataclass(frozen=True)
class MultiModalPrompt:
    """Ordered text and image parts; exactly three images in object/current/goal order."""

    parts: tuple[TextPart | ImagePart, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        roles = [p.role for p in self.parts if isinstance(p, ImagePart)]
        if roles != ["object", "current", "goal"]:
            raise ValueError(f"prompt must carry object/current/goal images in order, got {roles}")

    def flat_text(self) -> str:
        """All parts joined; images appear as stable placeholder lines."""
        chunks = []
        for part in self.parts:
            if isinstance(part, TextPart):
                chunks.append(part.text)
            else:
                chunks.append(f"[image: {part.role}]")
        return "\n\n".join(chunks)

    def canonical_text(self) -> str:
        """Like flat_text but with image content hashes, for golden comparisons."""
        chunks = []
        for part in self.parts:
            if isinstance(part, TextPart):
                chunks.append(part.text)
            else:
                chunks.append(f"[image: {part.role} sha256={part.image.content_hash()}]")
        return "\n\n".join(chunks)

    def images(self) -> list[ImagePart]:
        return [p for p in self.parts if isinstance(p, ImagePart)]


def build_recognition_prompt(object_labels: list[str]) -> str:
    """Stage-1 prompt asking for one point per visible instance of each label."""
    deduped = list(dict.fromkeys(object_labels))
    if not deduped:
        raise EmptyLabelSet("recognition prompt needs at least one object label")
    lines = [
        "Locate the task-relevant objects in each of the three images "
        "(task object, current state, goal state).",
        "",
        "Objects to find:",
    ]
    lines += [f"  - {label}" for label in deduped]
    lines += [
        "",
        "For every visible instance, reply with one line per point:",
        "    Point: (x, y) <object name>",
        "where x and y are pixel coordinates in the current-state image.",
    ]
    return "\n".join(lines)


def _marker_table(triplet: ImageTriplet) -> str:
    rows: dict[int, PointAnnotation] = {}
    for role in ImageTriplet.ROLES:
        for ann in triplet.annotations_for(role):
            rows.setdefault(ann.marker_id, ann)
    if not rows:
        return "  (none)"
    lines = []
    for marker_id in sorted(rows):
        ann = rows[marker_id]
        kind = "location" if is_location_marker(marker_id) else "object"
        lines.append(f"  marker {marker_id}: {ann.label} ({kind})")
    return "\n".join(lines)


def render_history(history: list[SkillDecision]) -> str:
    """History section body: 'none' or one 'step N: ...' line per decision."""
    recent = history[-HISTORY_DEPTH:]
    if not recent:
        return "none"
    start = len(history) - len(recent)
    return "\n".join(
        f"step {start + i + 1}: {d.skill.describe()}" for i, d in enumerate(recent)
    )


def build_reasoning_prompt(template: PromptTemplate, marked_triplet: ImageTriplet,
                           history: list[SkillDecision]) -> MultiModalPrompt:
    """Assemble the Stage-2 multi-modal prompt from a marked triplet."""
    if not marked_triplet.annotations_for("current") or not marked_triplet.annotations_for("goal"):
        raise MissingAnnotations("current and goal images must carry markers")
    state_text = template.state_description_template.format(
        marker_table=_marker_table(marked_triplet)
    )
    history_text = "Previous decisions:\n" + render_history(history)
    parts: tuple[TextPart | ImagePart, ...] = (
        TextPart(template.task_context),
        ImagePart("object", marked_triplet.object_img),
        ImagePart("current", marked_triplet.current_img),
        ImagePart("goal", marked_triplet.goal_img),
        TextPart(state_text),
        TextPart(template.skill_catalog_text),
        TextPart(template.decision_logic_text),
        TextPart(history_text),
        TextPart(template.output_format_text),
    )
    return MultiModalPrompt(parts)
