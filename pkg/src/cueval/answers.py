"""Model-response extraction, task schemas, and answer-list parsing.

Responses are expected to wrap a JSON answer list in <answer> tags, with
reasoning in <think> tags. Parsing is total: anything that cannot be
repaired by the small set of allowed fixups (code-fence stripping,
single-object promotion, mm:ss timestamps, boolean-string coercion)
degrades to an empty answer list so the scores reflect the failure.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field

VALUE_TAG_TEMPORAL = "temporal"
VALUE_TAG_EVENT = "event"
VALUE_TAG_PLAIN = "plain"

BRANCH_RULE_ANOMALY_ONLY = "anomaly_only"
BRANCH_RULE_GT_STATE = "gt_state"
BRANCH_RULE_SCORE_THRESHOLD = "score_threshold"

ANOMALY_SCORE_THRESHOLD = 0.5


@dataclass(frozen=True)
class TaskSpec:
    """Key schema, value-type tag, and metric routing for one task."""

    task_id: str
    key_schema: tuple[str, ...]
    value_tag: str
    compared_level: int
    branch_rule: str
    boolean_keys: frozenset[str] = frozenset()

    def __post_init__(self):
        temporal = "start" in self.key_schema and "end" in self.key_schema
        if (self.value_tag == VALUE_TAG_TEMPORAL) != temporal:
            raise ValueError(f"{self.task_id}: temporal tag must match start/end keys")
        if (self.value_tag == VALUE_TAG_EVENT) != (
            "event" in self.key_schema and self.value_tag != VALUE_TAG_TEMPORAL
        ):
            raise ValueError(f"{self.task_id}: event tag must match presence of 'event' key")

    @property
    def is_triplet_shaped(self) -> bool:
        return {"event", "scene", "attribute"}.issubset(self.key_schema)


TASKS: dict[str, TaskSpec] = {
    spec.task_id: spec
    for spec in (
        TaskSpec("event-rec", ("event",), VALUE_TAG_EVENT, 4, BRANCH_RULE_GT_STATE),
        TaskSpec("scene-rec", ("scene",), VALUE_TAG_PLAIN, 5, BRANCH_RULE_GT_STATE),
        TaskSpec("attribute-rec", ("attribute",), VALUE_TAG_PLAIN, 5, BRANCH_RULE_GT_STATE),
        TaskSpec(
            "anomaly-td",
            ("event", "scene", "attribute"),
            VALUE_TAG_EVENT,
            5,
            BRANCH_RULE_ANOMALY_ONLY,
        ),
        TaskSpec(
            "anomaly-bu",
            ("event", "scene", "attribute", "anomaly"),
            VALUE_TAG_EVENT,
            5,
            BRANCH_RULE_SCORE_THRESHOLD,
            boolean_keys=frozenset({"anomaly"}),
        ),
        TaskSpec("grounding", ("start", "end"), VALUE_TAG_TEMPORAL, 5, BRANCH_RULE_GT_STATE),
        TaskSpec("detection", ("start", "end"), VALUE_TAG_TEMPORAL, 5, BRANCH_RULE_GT_STATE),
        TaskSpec(
            "anticipation",
            ("event", "scene", "attribute"),
            VALUE_TAG_EVENT,
            5,
            BRANCH_RULE_GT_STATE,
        ),
    )
}

TASK_ORDER = tuple(TASKS)


def task_spec(task_id: str) -> TaskSpec:
    try:
        return TASKS[task_id]
    except KeyError:
        raise KeyError(f"unknown task id {task_id!r}; expected one of {sorted(TASKS)}") from None


@dataclass
class AnswerList:
    """Parsed answer records plus the tag-presence flags of the response."""

    records: list[dict] = field(default_factory=list)
    think_present: bool = False
    answer_present: bool = False

    def __len__(self) -> int:
        return len(self.records)


_ANSWER_REGION_RE = re.compile(r"<answer>(.*?)</answer>", re.IGNORECASE | re.DOTALL)
_THINK_OPEN_RE = re.compile(r"<think>", re.IGNORECASE)
_THINK_CLOSE_RE = re.compile(r"</think>", re.IGNORECASE)
_ANSWER_OPEN_RE = re.compile(r"<answer>", re.IGNORECASE)
_ANSWER_CLOSE_RE = re.compile(r"</answer>", re.IGNORECASE)
_CODE_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n?(.*?)\n?```\s*$", re.DOTALL)
_MMSS_RE = re.compile(r"^(\d+):([0-5]?\d(?:\.\d+)?)$")


def extract_answer(raw: str) -> tuple[str, bool, bool]:
    """Content of the first <answer> region plus tag-presence flags.

    Presence requires both the opening and closing tag; detection is
    case-insensitive. Absent tags yield an empty content string.
    """
    think_present = bool(_THINK_OPEN_RE.search(raw)) and bool(_THINK_CLOSE_RE.search(raw))
    answer_present = bool(_ANSWER_OPEN_RE.search(raw)) and bool(_ANSWER_CLOSE_RE.search(raw))
    match = _ANSWER_REGION_RE.search(raw)
    inner = match.group(1) if match else ""
    return inner, think_present, answer_present


def format_reward(raw: str) -> int:
    """1 if both tag pairs are present, else 0. Ignores the payload."""
    _, think_present, answer_present = extract_answer(raw)
    return 1 if think_present and answer_present else 0


def parse_timestamp(value) -> float | None:
    """Seconds from a number or an mm:ss string; None if unparseable."""
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, str):
        text = value.strip()
        match = _MMSS_RE.match(text)
        if match:
            return float(match.group(1)) * 60.0 + float(match.group(2))
        try:
            seconds = float(text)
        except ValueError:
            return None
        return seconds if math.isfinite(seconds) else None
    return None


def _coerce_value(key: str, value, spec: TaskSpec):
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        if key in spec.boolean_keys and value.strip().lower() in ("true", "false"):
            return value.strip().lower() == "true"
        if spec.value_tag == VALUE_TAG_TEMPORAL and key in ("start", "end"):
            seconds = parse_timestamp(value)
            if seconds is not None:
                return seconds
        return value
    return None  # signals an unsupported value type


def parse_answer_list(
    inner: str,
    spec: TaskSpec,
    think_present: bool = False,
    answer_present: bool = False,
) -> AnswerList:
    """Parse answer content into records; never raises.

    Accepts a JSON array of flat objects, or a single object (promoted to
    a one-element list). Values must be scalars. Any other shape, or a
    JSON error, degrades to an empty list.
    """
    empty = AnswerList([], think_present, answer_present)
    text = inner.strip()
    fence = _CODE_FENCE_RE.match(text)
    if fence:
        text = fence.group(1).strip()
    if not text:
        return empty
    try:
        payload = json.loads(text)
    except json.JSONDecodeError:
        return empty
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list) or not all(isinstance(item, dict) for item in payload):
        return empty
    records: list[dict] = []
    for item in payload:
        record: dict = {}
        for key, value in item.items():
            coerced = _coerce_value(str(key), value, spec)
            if coerced is None:
                return empty
            record[str(key)] = coerced
        records.append(record)
    return AnswerList(records, think_present, answer_present)


def parse_response(raw: str, spec: TaskSpec) -> AnswerList:
    """Extract the answer region of a raw response and parse it.

    When the answer tags are absent the whole response is treated as the
    payload, so an untagged but well-formed answer still scores on
    content (it only forfeits the format reward).
    """
    inner, think_present, answer_present = extract_answer(raw)
    content = inner if answer_present else raw
    return parse_answer_list(content, spec, think_present, answer_present)


def key_bag(answers: AnswerList) -> Counter:
    """Multiset of key names across all records."""
    bag: Counter = Counter()
    for record in answers.records:
        bag.update(record.keys())
    return bag


def record_key_bag(records) -> Counter:
    """Key multiset for plain record lists (ground truth side)."""
    bag: Counter = Counter()
    for record in records:
        bag.update(record.keys())
    return bag
