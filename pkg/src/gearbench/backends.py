"""Pluggable recognition and reasoning backends.

Four realizations of the two VLM roles:

* ``OracleBackend`` reads simulator ground truth and is the deterministic
  test stand-in for a live model.
* ``FaultyBackend`` wraps another reasoning backend and corrupts marker ids
  at configured rates, for statistical failure-mode studies.
* ``ReplayBackend`` plays back a recorded request/response log, verifying
  request hashes.
* ``HttpBackend`` talks to an OpenAI-compatible multimodal chat endpoint.

Backends that need world access implement ``observe_world``; the
orchestrator calls it before each backend call. Build one backend instance
per episode (see ``build_backends``) so parallel trials stay reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import re
import time
from dataclasses import dataclass, field

from .errors import (
    BackendUnavailable,
    ConfigurationError,
    EmptyReply,
    MalformedPoints,
    ReplayMismatch,
)
from .geometry import Camera
from .grammar import (
    SKILL_ID_KIND,
    ParseError,
    Skill,
    SkillName,
    format_decision,
    parse_decision,
)
from .marking import (
    ImageTriplet,
    PointAnnotation,
    annotations_from_json,
    annotations_to_json,
    is_location_marker,
    is_object_marker,
)
from .raster import to_png
from .render import ground_truth_points
from .world import WorldState, assembly_complete, available_pairs, unsatisfied_pairs


@dataclass(frozen=True)
class RecognitionRequest:
    triplet: ImageTriplet
    object_labels: tuple[str, ...]
    recognition_prompt: str

    def __post_init__(self) -> None:
        if not self.object_labels or any(not l for l in self.object_labels):
            raise ValueError("object_labels must be non-empty strings")


@dataclass(frozen=True)
class ReasoningRequest:
    marked_triplet: ImageTriplet
    task_prompt: str
    skill_catalog: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.marked_triplet.annotations_for("current") or not self.marked_triplet.annotations_for("goal"):
            raise ValueError("marked triplet must carry current and goal annotations")


def recognition_request_hash(request: RecognitionRequest) -> str:
    digest = hashlib.sha256()
    digest.update(b"recognize\n")
    for role in ImageTriplet.ROLES:
        digest.update(request.triplet.image_for(role).content_hash().encode("ascii"))
    digest.update("\n".join(request.object_labels).encode("utf-8"))
    digest.update(request.recognition_prompt.encode("utf-8"))
    return digest.hexdigest()


def reasoning_request_hash(request: ReasoningRequest) -> str:
    digest = hashlib.sha256()
    digest.update(b"decide\n")
    for role in ImageTriplet.ROLES:
        digest.update(request.marked_triplet.image_for(role).content_hash().encode("ascii"))
        anns = annotations_to_json(list(request.marked_triplet.annotations_for(role)))
        digest.update(json.dumps(anns, sort_keys=True).encode("utf-8"))
    digest.update(request.task_prompt.encode("utf-8"))
    digest.update("\n".join(request.skill_catalog).encode("utf-8"))
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Backend configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleConfig:
    kind: str = "oracle"


@dataclass(frozen=True)
class FaultyConfig:
    pick_error_rate: float = 0.0
    insert_error_rate: float = 0.0
    seed: int = 0
    kind: str = "faulty"

    def __post_init__(self) -> None:
        if not (0.0 <= self.pick_error_rate <= 1.0 and 0.0 <= self.insert_error_rate <= 1.0):
            raise ConfigurationError("error rates must be in [0, 1]")


@dataclass(frozen=True)
class ReplayConfig:
    path: str
    kind: str = "replay"


@dataclass(frozen=True)
class HttpConfig:
    base_url: str
    model_name: str
    api_key_env_var: str = "OPENAI_API_KEY"
    timeout_s: float = 30.0
    max_retries: int = 2
    backoff_base_s: float = 0.5
    kind: str = "http"

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")


BackendConfig = OracleConfig | FaultyConfig | ReplayConfig | HttpConfig


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------

class OracleBackend:
    """Perfect recognition and next-step reasoning from simulator ground truth."""

    def __init__(self) -> None:
        self._world: WorldState | None = None
        self._camera: Camera | None = None

    def observe_world(self, world: WorldState, camera: Camera) -> None:
        self._world = world
        self._camera = camera

    def _require_world(self) -> tuple[WorldState, Camera]:
        if self._world is None or self._camera is None:
            raise BackendUnavailable("oracle backend has not observed a world yet")
        return self._world, self._camera

    def recognize(self, request: RecognitionRequest) -> list[PointAnnotation]:
        world, camera = self._require_world()
        return ground_truth_points(world, camera, list(request.object_labels))

    def decide(self, request: ReasoningRequest) -> str:
        world, _ = self._require_world()
        return format_decision(self._next_skill(world))

    @staticmethod
    def _next_skill(world: WorldState) -> Skill:
        if not unsatisfied_pairs(world):
            return Skill(SkillName.DONE)
        held = world.held_object()
        if held is not None:
            for gear_id, shaft_id in available_pairs(world):
                if gear_id == held.object_id:
                    return Skill(SkillName.INSERT, 100 + shaft_id)
            # Holding a gear with no available pair: put it down at its own
            # paired shaft if it has one, else the first goal shaft.
            shaft_of = dict(world.goal.required_insertions)
            shaft_id = shaft_of.get(held.object_id, world.goal.required_insertions[0][1])
            return Skill(SkillName.PLACE, 100 + shaft_id)
        pairs = available_pairs(world) or unsatisfied_pairs(world)
        return Skill(SkillName.PICK, pairs[0][0])


# ---------------------------------------------------------------------------
# Fault injection
# ---------------------------------------------------------------------------

def inject_faults(config: FaultyConfig, skill: Skill, known_markers: set[int],
                  rng: random.Random) -> Skill:
    """Corrupt a decision's marker id at the configured rate.

    Replacement ids are drawn uniformly from the *other* valid markers of the
    same namespace present in ``known_markers``; with no alternative the
    decision passes through.
    """
    kind = SKILL_ID_KIND[skill.name]
    if kind is None:
        return skill
    rate = config.pick_error_rate if kind == "object" else config.insert_error_rate
    roll = rng.random()
    if roll >= rate:
        return skill
    pool_check = is_object_marker if kind == "object" else is_location_marker
    alternatives = sorted(m for m in known_markers if pool_check(m) and m != skill.marker_id)
    if not alternatives:
        return skill
    return Skill(skill.name, rng.choice(alternatives))


class FaultyBackend:
    """Wraps a reasoning backend and statistically corrupts its marker ids."""

    def __init__(self, wrapped, config: FaultyConfig) -> None:
        self.wrapped = wrapped
        self.config = config
        self._rng = random.Random(config.seed)

    def observe_world(self, world: WorldState, camera: Camera) -> None:
        if hasattr(self.wrapped, "observe_world"):
            self.wrapped.observe_world(world, camera)

    def recognize(self, request: RecognitionRequest) -> list[PointAnnotation]:
        return self.wrapped.recognize(request)

    def decide(self, request: ReasoningRequest) -> str:
        raw = self.wrapped.decide(request)
        known = request.marked_triplet.all_marker_ids()
        parsed = parse_decision(raw, known)
        if isinstance(parsed, ParseError):
            raise BackendUnavailable(f"faulty wrapper needs a well-formed decision, got: {parsed.message}")
        corrupted = inject_faults(self.config, parsed.skill, known, self._rng)
        return format_decision(corrupted)


# ---------------------------------------------------------------------------
# Record / replay
# ---------------------------------------------------------------------------

class RecordingBackend:
    """Pass-through wrapper that appends request/response records to a JSONL sink."""

    def __init__(self, wrapped, sink: list[dict] | None = None) -> None:
        self.wrapped = wrapped
        self.records: list[dict] = sink if sink is not None else []

    def observe_world(self, world: WorldState, camera: Camera) -> None:
        if hasattr(self.wrapped, "observe_world"):
            self.wrapped.observe_world(world, camera)

    def recognize(self, request: RecognitionRequest) -> list[PointAnnotation]:
        annotations = self.wrapped.recognize(request)
        self.records.append(
            {
                "stage": "recognize",
                "request_hash": recognition_request_hash(request),
                "response": json.dumps(annotations_to_json(annotations), sort_keys=True),
            }
        )
        return annotations

    def decide(self, request: ReasoningRequest) -> str:
        response = self.wrapped.decide(request)
        self.records.append(
            {
                "stage": "decide",
                "request_hash": reasoning_request_hash(request),
                "response": response,
            }
        )
        return response

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


class ReplayBackend:
    """Replays a recorded call log, verifying each request hash in order."""

    def __init__(self, records: list[dict]) -> None:
        self._records = list(records)
        self._cursor = 0

    @classmethod
    def from_file(cls, path) -> ReplayBackend:
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if record.get("stage") in ("recognize", "decide"):
                    records.append(record)
        return cls(records)

    def _next(self, stage: str, request_hash: str) -> str:
        if self._cursor >= len(self._records):
            raise ReplayMismatch(f"replay log exhausted before {stage} call {self._cursor + 1}")
        record = self._records[self._cursor]
        self._cursor += 1
        if record["stage"] != stage:
            raise ReplayMismatch(
                f"call {self._cursor}: expected stage {record['stage']!r}, got {stage!r}"
            )
        if record["request_hash"] != request_hash:
            raise ReplayMismatch(f"call {self._cursor}: request diverged from recording")
        return record["response"]

    def recognize(self, request: RecognitionRequest) -> list[PointAnnotation]:
        response = self._next("recognize", recognition_request_hash(request))
        return annotations_from_json(json.loads(response))

    def decide(self, request: ReasoningRequest) -> str:
        return self._next("decide", reasoning_request_hash(request))


# ---------------------------------------------------------------------------
# Live HTTP backend (OpenAI-compatible chat completions)
# ---------------------------------------------------------------------------

_POINT_TAG = re.compile(
    r"<point[^>]*?\bx=\"(\d+(?:\.\d+)?)\"[^>]*?\by=\"(\d+(?:\.\d+)?)\"[^>]*?"
    r"(?:\balt=\"([^\"]*)\")?[^>]*>(?:([^<]*)</point>)?",
    re.IGNORECASE,
)
_POINT_PAREN = re.compile(r"\(\s*(\d+(?:\.\d+)?)\s*,\s*(\d+(?:\.\d+)?)\s*\)")


def parse_point_reply(text: str) -> list[tuple[int, int, str]]:
    """Extract (x, y, label) triples from a pointing-model reply.

    Accepts XML-ish ``<point x=".." y="..">`` tags and plain ``(x, y)`` forms;
    the first matching syntax wins.
    """
    points: list[tuple[int, int, str]] = []
    for match in _POINT_TAG.finditer(text):
        label = (match.group(3) or match.group(4) or "").strip()
        points.append((round(float(match.group(1))), round(float(match.group(2))), label))
    if points:
        return points
    for line in text.splitlines():
        match = _POINT_PAREN.search(line)
        if not match:
            continue
        after = line[match.end():].strip(" .:;-\t")
        before = line[: match.start()].strip(" .:;-\t")
        if re.fullmatch(r"(?i)point\s*\d*", before or "point"):
            before = ""
        label = after or before
        points.append((round(float(match.group(1))), round(float(match.group(2))), label))
    return points


class HttpBackend:
    """Client for an OpenAI-compatible multimodal /chat/completions endpoint.

    Retries only transport failures (connection errors, timeouts, 5xx/429),
    with exponential backoff, at most ``max_retries`` times. A well-formed
    reply is never retried. The API key comes from the environment variable
    named in the config and is never persisted.
    """

    def __init__(self, config: HttpConfig, location_labels: set[str] | None = None) -> None:
        self.config = config
        self.location_labels = location_labels or set()

    # -- request plumbing ---------------------------------------------------

    def _post(self, payload: dict) -> str:
        import requests

        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env_var, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_base_s * (2 ** (attempt - 1)))
            try:
                response = requests.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout_s
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500 or response.status_code == 429:
                last_error = BackendUnavailable(
                    f"server returned {response.status_code}: {response.text[:200]}"
                )
                continue
            if response.status_code != 200:
                raise BackendUnavailable(
                    f"request rejected with {response.status_code}: {response.text[:200]}"
                )
            try:
                content = response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise BackendUnavailable(f"malformed completion payload: {exc}") from exc
            return content if isinstance(content, str) else json.dumps(content)
        raise BackendUnavailable(
            f"request failed after {self.config.max_retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _image_part(role: str, image) -> dict:
        encoded = base64.b64encode(to_png(image)).decode("ascii")
        return {
            "type": "image_url",
            "image_url": {"url": f"data:image/png;base64,{encoded}"},
        }

    def _messages(self, text_segments: list[str], triplet: ImageTriplet) -> list[dict]:
        content: list[dict] = []
        roles = iter(ImageTriplet.ROLES)
        for segment in text_segments:
            if segment == "\x00image\x00":
                role = next(roles)
                content.append(self._image_part(role, triplet.image_for(role)))
            elif segment:
                content.append({"type": "text", "text": segment})
        return [{"role": "user", "content": content}]

    @staticmethod
    def _split_on_image_placeholders(prompt: str) -> list[str]:
        segments: list[str] = []
        rest = prompt
        for role in ImageTriplet.ROLES:
            placeholder = f"[image: {role}]"
            if placeholder in rest:
                before, rest = rest.split(placeholder, 1)
                segments.append(before.strip("\n"))
                segments.append("\x00image\x00")
            else:
                segments.append("\x00image\x00")
        segments.append(rest.strip("\n"))
        return segments

    # -- backend interface --------------------------------------------------

    def recognize(self, request: RecognitionRequest) -> list[PointAnnotation]:
        segments = ["\x00image\x00"] * 3 + [request.recognition_prompt]
        payload = {
            "model": self.config.model_name,
            "messages": self._messages(segments, request.triplet),
        }
        reply = self._post(payload)
        points = parse_point_reply(reply)
        if not points:
            raise MalformedPoints(f"no points found in reply: {reply[:200]!r}")
        image = request.triplet.current_img
        annotations: list[PointAnnotation] = []
        next_object, next_location = 1, 101
        for x, y, label in points:
            if not (0 <= x < image.width_px and 0 <= y < image.height_px):
                continue
            if label in self.location_labels:
                marker, next_location = next_location, next_location + 1
            else:
                marker, next_object = next_object, next_object + 1
            annotations.append(PointAnnotation(marker_id=marker, pixel=(x, y), label=label))
        if not annotations:
            raise MalformedPoints("all parsed points fell outside the image")
        return annotations

    def decide(self, request: ReasoningRequest) -> str:
        segments = self._split_on_image_placeholders(request.task_prompt)
        payload = {
            "model": self.config.model_name,
            "messages": self._messages(segments, request.marked_triplet),
        }
        reply = self._post(payload)
        if not reply.strip():
            raise EmptyReply("reasoning backend returned an empty reply")
        return reply


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def build_backends(config: BackendConfig, episode_index: int = 0,
                   location_labels: set[str] | None = None):
    """Build per-episode (recognition, reasoning) backend instances.

    The faulty wrapper's RNG is seeded with ``config.seed + episode_index``
    so concurrent trials are independently reproducible.
    """
    if isinstance(config, OracleConfig):
        oracle = OracleBackend()
        return oracle, oracle
    if isinstance(config, FaultyConfig):
        oracle = OracleBackend()
        per_episode = FaultyConfig(
            pick_error_rate=config.pick_error_rate,
            insert_error_rate=config.insert_error_rate,
            seed=config.seed + episode_index,
        )
        return oracle, FaultyBackend(oracle, per_episode)
    if isinstance(config, ReplayConfig):
        replay = ReplayBackend.from_file(config.path)
        return replay, replay
    if isinstance(config, HttpConfig):
        http = HttpBackend(config, location_labels)
        return http, http
    raise ConfigurationError(f"unknown backend config {config!r}")
