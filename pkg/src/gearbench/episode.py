"""The iterative recognize -> mark -> reason -> parse -> execute loop.

Each iteration re-renders the image triplet from the current world, runs the
two backend stages, parses the reply (retrying the reasoning call on parse
errors), and executes the resulting skill. A failed skill execution does not
abort the loop: the next iteration observes the new state and may recover.
The iteration cap is the only livelock guard.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .backends import RecognitionRequest, ReasoningRequest
from .errors import (
    BackendUnavailable,
    EmptyReply,
    GearbenchError,
    MalformedPoints,
    MissingAnnotations,
    ReplayMismatch,
    UnknownLabel,
)
from .geometry import Camera, View
from .grammar import (
    ExtractionMode,
    INIT,
    ParseError,
    ParseErrorKind,
    SkillDecision,
    SkillName,
    format_decision,
    parse_decision,
    skill_signatures,
)
from .marking import ImageTriplet, MarkStyle, PointAnnotation, annotations_to_json, is_location_marker, mark_triplet
from .prompts import PromptTemplate, build_recognition_prompt, build_reasoning_prompt, default_template
from .render import closeup_camera, render
from .skills import SkillExecConfig, SkillResult, execute_skill
from .world import GoalSpec, WorldState, assembly_complete, world_hash


@dataclass(frozen=True)
class EpisodeConfig:
    max_iterations: int
    object_view_id: int
    recognition_labels: tuple[str, ...]
    camera: Camera
    parse_retries: int = 2
    step_budget_per_skill: int = 192
    z_offset: float = 0.05
    chunk_length: int = 16
    seed: int = 0
    object_view_size_px: int = 96
    object_view_mpp: float = 0.00125
    mark_style: MarkStyle = MarkStyle()

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.parse_retries < 0:
            raise ValueError("parse_retries must be >= 0")

    @classmethod
    def for_scenario(cls, scenario, seed: int, max_iterations: int | None = None,
                     **overrides) -> EpisodeConfig:
        from .world import Gear  # local to avoid cycle at import time

        view_id = scenario.object_view_id
        if view_id is None:
            if scenario.goal.required_insertions:
                view_id = scenario.goal.required_insertions[0][0]
            else:
                gears = [s.object_id for s in scenario.objects if isinstance(s.kind, Gear)]
                view_id = gears[0] if gears else scenario.objects[0].object_id
        return cls(
            max_iterations=max_iterations or default_max_iterations(scenario.goal),
            object_view_id=view_id,
            recognition_labels=scenario.labels(),
            camera=scenario.camera,
            seed=seed,
            object_view_size_px=scenario.object_view_size_px,
            object_view_mpp=scenario.object_view_mpp,
            **overrides,
        )


def default_max_iterations(goal: GoalSpec) -> int:
    """Iteration cap leaving room for one retry per stage plus the done step."""
    return 4 * len(goal.required_insertions) + 2


@dataclass(frozen=True)
class EpisodeStep:
    iteration: int
    annotations: dict[str, tuple[PointAnnotation, ...]]
    decision: SkillDecision | ParseError
    skill_result: SkillResult | None
    world_snapshot_hash: str
    holding_before: int | None = None
    triplet_hashes: dict[str, str] = field(default_factory=dict)


COMPLETED = "completed"
MAX_ITERATIONS = "max_iterations"
FATAL_ERROR = "fatal_error"


@dataclass(frozen=True)
class EpisodeRecord:
    config: EpisodeConfig
    steps: tuple[EpisodeStep, ...]
    outcome: str
    final_world: WorldState
    assembly_complete: bool
    fatal_kind: str | None = None

    def decision_count(self) -> int:
        """Executed reasoning decisions (the up-front init step is not one)."""
        return sum(
            1 for s in self.steps if s.iteration > 0 and isinstance(s.decision, SkillDecision)
        )

    def step_hashes(self) -> list[str]:
        return [s.world_snapshot_hash for s in self.steps]


_FATAL_KINDS = {
    BackendUnavailable: "backend_unavailable",
    EmptyReply: "empty_reply",
    MalformedPoints: "malformed_points",
    UnknownLabel: "unknown_label",
    MissingAnnotations: "missing_annotations",
    ReplayMismatch: "replay_mismatch",
}


def _fatal_kind(exc: GearbenchError) -> str:
    for cls, kind in _FATAL_KINDS.items():
        if isinstance(exc, cls):
            return kind
    return "backend_error"


def _observe(backend, world: WorldState, camera: Camera) -> None:
    if hasattr(backend, "observe_world"):
        backend.observe_world(world, camera)


def _goal_camera(camera: Camera) -> Camera:
    return Camera(
        view=View.TOP_GOAL,
        origin_x=camera.origin_x,
        origin_y=camera.origin_y,
        meters_per_pixel=camera.meters_per_pixel,
        width_px=camera.width_px,
        height_px=camera.height_px,
    )


def split_annotations(annotations: list[PointAnnotation], top_camera: Camera,
                      object_camera: Camera) -> dict[str, list[PointAnnotation]]:
    """Distribute flat current-view annotations across the triplet.

    The full set marks the current image; location markers (which do not move
    between current and goal) mark the goal image; markers whose world point
    falls inside the closeup frame are remapped into it for the object image.
    """
    object_set: list[PointAnnotation] = []
    for ann in annotations:
        wx, wy = top_camera.deproject(*ann.pixel)
        px, py = object_camera.project(wx, wy)
        if object_camera.contains_pixel(px, py):
            object_set.append(PointAnnotation(ann.marker_id, (px, py), ann.label))
    return {
        "object": object_set,
        "current": list(annotations),
        "goal": [a for a in annotations if is_location_marker(a.marker_id)],
    }


def run_episode(world: WorldState, recognition_backend, reasoning_backend,
                policies, template: PromptTemplate | None, config: EpisodeConfig,
                on_step=None) -> EpisodeRecord:
    """Run one full episode; errors surface in the record, never as exceptions."""
    template = template or default_template()
    top_cam = config.camera
    goal_cam = _goal_camera(top_cam)
    exec_config = SkillExecConfig(
        z_offset=config.z_offset,
        step_budget=config.step_budget_per_skill,
        chunk_length=config.chunk_length,
    )
    steps: list[EpisodeStep] = []
    history: list[SkillDecision] = []

    def record_step(step: EpisodeStep, triplet: ImageTriplet | None = None) -> None:
        steps.append(step)
        if on_step is not None:
            on_step(step, world, triplet)

    def finish(outcome: str, fatal: str | None = None) -> EpisodeRecord:
        return EpisodeRecord(
            config=config,
            steps=tuple(steps),
            outcome=outcome,
            final_world=world,
            assembly_complete=assembly_complete(world),
            fatal_kind=fatal,
        )

    # Algorithm start: initialize the robot before the loop.
    init_decision = SkillDecision(INIT, format_decision(INIT), ExtractionMode.STRICT)
    holding_before = world.robot.holding
    init_result = execute_skill(world, init_decision, [], top_cam, policies, exec_config)
    world = init_result.world_after
    history.append(init_decision)
    record_step(
        EpisodeStep(
            iteration=0,
            annotations={},
            decision=init_decision,
            skill_result=init_result,
            world_snapshot_hash=world_hash(world),
            holding_before=holding_before,
        )
    )

    recognition_prompt = build_recognition_prompt(list(config.recognition_labels))

    for iteration in range(1, config.max_iterations + 1):
        object_cam = closeup_camera(
            world, config.object_view_id, config.object_view_size_px,
            config.object_view_size_px, config.object_view_mpp,
        )
        triplet = ImageTriplet(
            object_img=render(world, object_cam),
            current_img=render(world, top_cam),
            goal_img=render(world, goal_cam),
        )

        try:
            _observe(recognition_backend, world, top_cam)
            request = RecognitionRequest(triplet, config.recognition_labels, recognition_prompt)
            annotations = recognition_backend.recognize(request)
            per_image = split_annotations(annotations, top_cam, object_cam)
            marked = mark_triplet(triplet, per_image, config.mark_style)
            prompt = build_reasoning_prompt(template, marked, history)
            reasoning_request = ReasoningRequest(
                marked, prompt.flat_text(), tuple(skill_signatures())
            )
        except GearbenchError as exc:
            record_step(
                EpisodeStep(
                    iteration=iteration,
                    annotations={},
                    decision=ParseError(ParseErrorKind.NO_DECISION_FOUND, str(exc)),
                    skill_result=None,
                    world_snapshot_hash=world_hash(world),
                    holding_before=world.robot.holding,
                ),
                triplet,
            )
            return finish(FATAL_ERROR, _fatal_kind(exc))

        known_markers = marked.all_marker_ids()
        decision: SkillDecision | ParseError | None = None
        try:
            _observe(reasoning_backend, world, top_cam)
            for _ in range(config.parse_retries + 1):
                raw = reasoning_backend.decide(request=reasoning_request)
                decision = parse_decision(raw, known_markers)
                if isinstance(decision, SkillDecision):
                    break
        except GearbenchError as exc:
            record_step(
                EpisodeStep(
                    iteration=iteration,
                    annotations=marked.annotations,
                    decision=ParseError(ParseErrorKind.NO_DECISION_FOUND, str(exc)),
                    skill_result=None,
                    world_snapshot_hash=world_hash(world),
                    holding_before=world.robot.holding,
                    triplet_hashes=marked.content_hashes(),
                ),
                marked,
            )
            return finish(FATAL_ERROR, _fatal_kind(exc))

        if isinstance(decision, ParseError):
            record_step(
                EpisodeStep(
                    iteration=iteration,
                    annotations=marked.annotations,
                    decision=decision,
                    skill_result=None,
                    world_snapshot_hash=world_hash(world),
                    holding_before=world.robot.holding,
                    triplet_hashes=marked.content_hashes(),
                ),
                marked,
            )
            return finish(FATAL_ERROR, "unparseable_reply")

        holding_before = world.robot.holding
        result = execute_skill(
            world, decision, list(per_image["current"]), top_cam, policies, exec_config
        )
        world = result.world_after
        history.append(decision)
        record_step(
            EpisodeStep(
                iteration=iteration,
                annotations=marked.annotations,
                decision=decision,
                skill_result=result,
                world_snapshot_hash=world_hash(world),
                holding_before=holding_before,
                triplet_hashes=marked.content_hashes(),
            ),
            marked,
        )
        if decision.skill.name is SkillName.DONE:
            return finish(COMPLETED)

    return finish(MAX_ITERATIONS)


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------

def _decision_dict(decision: SkillDecision | ParseError) -> dict:
    if isinstance(decision, SkillDecision):
        return {
            "kind": "decision",
            "skill": decision.skill.name.value,
            "marker_id": decision.skill.marker_id,
            "extraction_mode": decision.extraction_mode.value,
            "raw_text": decision.raw_text,
        }
    return {
        "kind": "parse_error",
        "error_kind": decision.kind.value,
        "message": decision.message,
        "span": list(decision.span) if decision.span else None,
    }


def _result_dict(result: SkillResult | None) -> dict | None:
    if result is None:
        return None
    return {
        "status": result.status,
        "reason": result.reason,
        "steps_used": result.steps_used,
        "chunk_sizes": list(result.chunk_sizes),
    }


def record_to_jsonl(record: EpisodeRecord) -> str:
    """Serialize a record: one header line plus one line per step."""
    header = {
        "type": "header",
        "outcome": record.outcome,
        "fatal_kind": record.fatal_kind,
        "assembly_complete": record.assembly_complete,
        "final_world_hash": world_hash(record.final_world),
        "max_iterations": record.config.max_iterations,
        "seed": record.config.seed,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for step in record.steps:
        lines.append(
            json.dumps(
                {
                    "type": "step",
                    "iteration": step.iteration,
                    "decision": _decision_dict(step.decision),
                    "skill_result": _result_dict(step.skill_result),
                    "world_hash": step.world_snapshot_hash,
                    "holding_before": step.holding_before,
                    "annotations": {
                        role: annotations_to_json(list(anns))
                        for role, anns in step.annotations.items()
                    },
                    "images": step.triplet_hashes,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"
