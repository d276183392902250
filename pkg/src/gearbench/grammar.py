"""Skill decision grammar: strict single-line form plus a tolerant JSON fallback.

The canonical reply format is one line::

    DECISION: pick(3)
    DECISION: insert(101)
    DECISION: done

Object-taking skills carry marker ids from the object range (1..99),
location-taking skills from the location range (101..199). The same table
that drives parsing also generates the output-format prompt section, so the
grammar has a single source of truth.

``parse_decision`` is total: any byte string in, a ``SkillDecision`` or a
``ParseError`` value out — it never raises on input content.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass

from .marking import (
    LOCATION_MARKER_RANGE,
    OBJECT_MARKER_RANGE,
    is_location_marker,
    is_object_marker,
)


class SkillName(enum.Enum):
    PICK = "pick"
    PLACE = "place"
    INSERT = "insert"
    DONE = "done"
    INIT = "init"


# skill -> which marker namespace its argument lives in (None = no argument)
SKILL_ID_KIND: dict[SkillName, str | None] = {
    SkillName.PICK: "object",
    SkillName.PLACE: "location",
    SkillName.INSERT: "location",
    SkillName.DONE: None,
    SkillName.INIT: None,
}

_JSON_ID_FIELD = {"object": "object_id", "location": "target_id"}


def skill_signatures() -> list[str]:
    """Human-readable signatures, e.g. 'pick(object_id)'."""
    out = []
    for name, kind in SKILL_ID_KIND.items():
        if kind is None:
            out.append(f"{name.value}()")
        else:
            out.append(f"{name.value}({_JSON_ID_FIELD[kind]})")
    return out


@dataclass(frozen=True, slots=True)
class Skill:
    name: SkillName
    marker_id: int | None = None

    def __post_init__(self) -> None:
        kind = SKILL_ID_KIND[self.name]
        if kind is None:
            if self.marker_id is not None:
                raise ValueError(f"{self.name.value} takes no marker id")
        elif kind == "object":
            if self.marker_id is None or not is_object_marker(self.marker_id):
                raise ValueError(f"{self.name.value} requires a marker in {OBJECT_MARKER_RANGE}")
        else:
            if self.marker_id is None or not is_location_marker(self.marker_id):
                raise ValueError(f"{self.name.value} requires a marker in {LOCATION_MARKER_RANGE}")

    def describe(self) -> str:
        if self.name is SkillName.PICK:
            return f"pick object {self.marker_id}"
        if self.name is SkillName.PLACE:
            return f"place at location {self.marker_id}"
        if self.name is SkillName.INSERT:
            return f"insert at location {self.marker_id}"
        return self.name.value


def pick(marker_id: int) -> Skill:
    return Skill(SkillName.PICK, marker_id)


def place(marker_id: int) -> Skill:
    return Skill(SkillName.PLACE, marker_id)


def insert(marker_id: int) -> Skill:
    return Skill(SkillName.INSERT, marker_id)


DONE = Skill(SkillName.DONE)
INIT = Skill(SkillName.INIT)


class ExtractionMode(enum.Enum):
    STRICT = "strict"
    TOLERANT = "tolerant"


@dataclass(frozen=True, slots=True)
class SkillDecision:
    skill: Skill
    raw_text: str
    extraction_mode: ExtractionMode


class ParseErrorKind(enum.Enum):
    NO_DECISION_FOUND = "no_decision_found"
    UNKNOWN_SKILL_NAME = "unknown_skill_name"
    MISSING_ID = "missing_id"
    ID_OUT_OF_NAMESPACE = "id_out_of_namespace"
    AMBIGUOUS_DECISION = "ambiguous_decision"


@dataclass(frozen=True, slots=True)
class ParseError:
    """A failed extraction; returned (never raised) by parse_decision."""

    kind: ParseErrorKind
    message: str
    span: tuple[int, int] | None = None


_STRICT_LINE = re.compile(r"^\s*DECISION:\s*([A-Za-z_]\w*)\s*(?:\(\s*([^()]*?)\s*\))?\s*$")
_NAMES = {s.value: s for s in SkillName}


def _validate_marker(name: SkillName, marker: int, known_markers: set[int],
                     span: tuple[int, int] | None) -> ParseError | None:
    kind = SKILL_ID_KIND[name]
    in_range = is_object_marker(marker) if kind == "object" else is_location_marker(marker)
    if not in_range:
        return ParseError(
            ParseErrorKind.ID_OUT_OF_NAMESPACE,
            f"{name.value} cannot take marker {marker}: wrong namespace range",
            span,
        )
    if marker not in known_markers:
        return ParseError(
            ParseErrorKind.ID_OUT_OF_NAMESPACE,
            f"marker {marker} is not among the markers shown to the model",
            span,
        )
    return None


def _strict_candidates(raw_text: str) -> list[tuple[Skill | ParseError, tuple[int, int]]]:
    results = []
    offset = 0
    for line in raw_text.splitlines(keepends=True):
        stripped = line.rstrip("\r\n")
        match = _STRICT_LINE.match(stripped)
        if match:
            span = (offset + match.start(1), offset + len(stripped))
            name_text = match.group(1).lower()
            arg_text = match.group(2)
            name = _NAMES.get(name_text)
            if name is None:
                results.append(
                    (ParseError(ParseErrorKind.UNKNOWN_SKILL_NAME,
                                f"unknown skill name '{match.group(1)}'", span), span)
                )
            elif SKILL_ID_KIND[name] is None:
                # surplus ids on done/init are tolerated and dropped
                results.append((Skill(name), span))
            elif arg_text is None or not arg_text.isdigit():
                results.append(
                    (ParseError(ParseErrorKind.MISSING_ID,
                                f"{name.value} requires a numeric marker id", span), span)
                )
            else:
                results.append(((name, int(arg_text)), span))  # validated later
        offset += len(line)
    return results


def _last_json_candidate(raw_text: str) -> tuple[dict, tuple[int, int]] | None:
    spans: list[tuple[int, int]] = []
    stack: list[int] = []
    for i, ch in enumerate(raw_text):
        if ch == "{":
            stack.append(i)
        elif ch == "}" and stack:
            spans.append((stack.pop(), i + 1))
    best: tuple[dict, tuple[int, int]] | None = None
    for start, end in spans:
        try:
            obj = json.loads(raw_text[start:end])
        except (json.JSONDecodeError, RecursionError):
            continue
        if isinstance(obj, dict) and "skill" in obj:
            if best is None or (end, start) > (best[1][1], best[1][0]):
                best = (obj, (start, end))
    return best


def _coerce_id(value) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().isdigit():
        return int(value.strip())
    return None


def parse_decision(raw_text: str, known_markers: set[int]) -> SkillDecision | ParseError:
    """Extract a skill decision from arbitrary reply text.

    Strict mode looks for ``DECISION: <skill>[(<id>)]`` lines; when none is
    present, tolerant mode takes the last JSON object carrying a ``skill``
    field. Marker ids must be in the correct namespace range and among
    ``known_markers``.
    """
    strict = _strict_candidates(raw_text)
    if strict:
        decisions: list[tuple[Skill, tuple[int, int]]] = []
        first_error: ParseError | None = None
        for item, span in strict:
            if isinstance(item, ParseError):
                first_error = first_error or item
                continue
            if isinstance(item, Skill):
                decisions.append((item, span))
                continue
            name, marker = item
            error = _validate_marker(name, marker, known_markers, span)
            if error is not None:
                first_error = first_error or error
            else:
                decisions.append((Skill(name, marker), span))
        if decisions:
            unique = {d for d, _ in decisions}
            if len(unique) > 1:
                return ParseError(
                    ParseErrorKind.AMBIGUOUS_DECISION,
                    f"{len(unique)} conflicting DECISION lines",
                    decisions[-1][1],
                )
            return SkillDecision(decisions[0][0], raw_text, ExtractionMode.STRICT)
        return first_error

    candidate = _last_json_candidate(raw_text)
    if candidate is None:
        return ParseError(ParseErrorKind.NO_DECISION_FOUND, "no DECISION line or skill JSON found")
    obj, span = candidate
    name_raw = obj.get("skill")
    name = _NAMES.get(name_raw.strip().lower()) if isinstance(name_raw, str) else None
    if name is None:
        return ParseError(
            ParseErrorKind.UNKNOWN_SKILL_NAME, f"unknown skill name {name_raw!r}", span
        )
    kind = SKILL_ID_KIND[name]
    if kind is None:
        return SkillDecision(Skill(name), raw_text, ExtractionMode.TOLERANT)
    marker = _coerce_id(obj.get(_JSON_ID_FIELD[kind]))
    if marker is None:
        marker = _coerce_id(obj.get("id"))
    if marker is None:
        return ParseError(
            ParseErrorKind.MISSING_ID,
            f"{name.value} requires field '{_JSON_ID_FIELD[kind]}'",
            span,
        )
    error = _validate_marker(name, marker, known_markers, span)
    if error is not None:
        return error
    return SkillDecision(Skill(name, marker), raw_text, ExtractionMode.TOLERANT)


def format_decision(skill: Skill) -> str:
    """Emit the strict-grammar line; parse_decision inverts this exactly."""
    if skill.marker_id is None:
        return f"DECISION: {skill.name.value}"
    return f"DECISION: {skill.name.value}({skill.marker_id})"


def output_format_text() -> str:
    """The reply-format prompt section, generated from the grammar table."""
    lines = [
        "Reply with exactly one decision line in this form:",
        "",
    ]
    for name, kind in SKILL_ID_KIND.items():
        if kind is None:
            lines.append(f"    DECISION: {name.value}")
        else:
            range_text = "an object marker id (1-99)" if kind == "object" \
                else "a location marker id (101-199)"
            lines.append(f"    DECISION: {name.value}(<id>)   where <id> is {range_text}")
    lines += [
        "",
        "Use only marker ids that appear in the images. Do not add any other",
        "DECISION lines.",
    ]
    return "\n".join(lines)
