"""Ground-truth annotations, per-task sample construction, aggregation.

Annotations store frame indices (the labeling unit); everything exposed
to models and metrics is in seconds. One annotated video expands into
one evaluation sample per requested task, except temporal grounding,
which yields one sample per distinct context triplet (the query names
the triplet, the ground truth lists all of its occurrences).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .answers import TASK_ORDER, task_spec
from .metrics import Interval, merge_intervals
from .taxonomy import (
    BRANCH_ANOMALY,
    BRANCH_NORMALITY,
    ContextTriplet,
    Hierarchy,
    normalize_text,
    render_triplet_text,
)


class AnnotationError(ValueError):
    """Validation failure with the JSON path of the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class TripletInstance:
    event: str
    scene: str
    attribute: str
    anomaly: bool
    start_frame: int
    end_frame: int
    leaf_id: str = ""

    def key(self) -> tuple[str, str, str, bool]:
        return (
            normalize_text(self.event),
            normalize_text(self.scene),
            normalize_text(self.attribute),
            self.anomaly,
        )


@dataclass(frozen=True)
class VideoAnnotation:
    video_id: str
    fps: float
    duration_s: float
    genre: str
    camera_view: str
    instances: tuple[TripletInstance, ...]


@dataclass(frozen=True)
class EvalSample:
    sample_id: str
    video_id: str
    task: str
    ground_truth: tuple[dict, ...]
    query: str | None = None


def _require(obj: dict, key: str, kind, path: str):
    if key not in obj:
        raise AnnotationError(f"{path}.{key}", "missing required field")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise AnnotationError(f"{path}.{key}", f"expected a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise AnnotationError(f"{path}.{key}", f"expected an integer, got {type(value).__name__}")
        return value
    if kind is bool:
        if isinstance(value, bool):
            return value
        if value in (0, 1):
            return bool(value)
        raise AnnotationError(f"{path}.{key}", f"expected a boolean, got {value!r}")
    if not isinstance(value, kind):
        raise AnnotationError(f"{path}.{key}", f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def parse_annotation(doc: dict, h: Hierarchy | None = None, path: str = "$") -> VideoAnnotation:
    """Validate a single annotation object; resolves triplets against the
    taxonomy when one is supplied."""
    video_id = _require(doc, "video_id", str, path)
    fps = _require(doc, "fps", float, path)
    if fps <= 0:
        raise AnnotationError(f"{path}.fps", f"must be positive, got {fps}")
    duration_s = _require(doc, "duration_s", float, path)
    if duration_s < 0:
        raise AnnotationError(f"{path}.duration_s", f"must be non-negative, got {duration_s}")
    genre = str(doc.get("genre", ""))
    camera_view = str(doc.get("camera_view", ""))
    raw_instances = _require(doc, "triplet_instances", list, path)
    max_frame = round(duration_s * fps)
    instances = []
    for idx, item in enumerate(raw_instances):
        ipath = f"{path}.triplet_instances[{idx}]"
        if not isinstance(item, dict):
            raise AnnotationError(ipath, "expected an object")
        triplet_doc = _require(item, "triplet", dict, ipath)
        event = _require(triplet_doc, "event", str, f"{ipath}.triplet")
        scene = _require(triplet_doc, "scene", str, f"{ipath}.triplet")
        attribute = _require(triplet_doc, "attribute", str, f"{ipath}.triplet")
        anomaly = _require(triplet_doc, "anomaly", bool, f"{ipath}.triplet")
        start_frame = _require(item, "start_frame", int, ipath)
        end_frame = _require(item, "end_frame", int, ipath)
        if not 0 <= start_frame <= end_frame <= max_frame:
            raise AnnotationError(
                ipath,
                f"frames [{start_frame}, {end_frame}] outside 0..{max_frame}",
            )
        leaf_id = ""
        if h is not None:
            branch = BRANCH_ANOMALY if anomaly else BRANCH_NORMALITY
            hits = h.find_leaf(event, scene, attribute, branch)
            if not hits:
                raise AnnotationError(
                    f"{ipath}.triplet",
                    f"({event!r}, {scene!r}, {attribute!r}) not in the {branch} branch",
                )
            leaf_id = hits[0]
        instances.append(
            TripletInstance(event, scene, attribute, anomaly, start_frame, end_frame, leaf_id)
        )
    return VideoAnnotation(video_id, fps, duration_s, genre, camera_view, tuple(instances))


def load_annotations(source, h: Hierarchy | None = None) -> list[VideoAnnotation]:
    """Read a JSON array of annotations; paths in errors are 0-indexed."""
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        doc = source
    if not isinstance(doc, list):
        raise AnnotationError("$", "expected a JSON array of annotations")
    annotations = []
    seen_ids = set()
    for idx, item in enumerate(doc):
        ann = parse_annotation(item, h, path=f"$[{idx}]")
        if ann.video_id in seen_ids:
            raise AnnotationError(f"$[{idx}].video_id", f"duplicate video id {ann.video_id!r}")
        seen_ids.add(ann.video_id)
        annotations.append(ann)
    return annotations


def _distinct(instances, key_fn):
    seen = set()
    out = []
    for inst in instances:
        key = key_fn(inst)
        if key not in seen:
            seen.add(key)
            out.append(inst)
    return out


def _triplet_record(inst: TripletInstance) -> dict:
    return {"event": inst.event, "scene": inst.scene, "attribute": inst.attribute}


def build_samples(
    ann: VideoAnnotation,
    tasks=TASK_ORDER,
    anticipation_boundary_frame: int | None = None,
    td_include_normal: bool = False,
) -> list[EvalSample]:
    """Expand one annotated video into evaluation samples.

    Sample ids are deterministic: "<video_id>/<task>", with an extra
    "/<index>" for grounding samples. The anticipation ground truth keeps
    the triplets starting strictly after the observed prefix, which
    defaults to the end of the earliest instance.
    """
    samples: list[EvalSample] = []
    task_set = list(tasks)
    for task in task_set:
        task_spec(task)

    def add(task: str, records: list[dict], suffix: str = "", query: str | None = None):
        sample_id = f"{ann.video_id}/{task}{suffix}"
        samples.append(EvalSample(sample_id, ann.video_id, task, tuple(records), query))

    for task in (t for t in TASK_ORDER if t in task_set):
        if task in ("event-rec", "scene-rec", "attribute-rec"):
            fld = task.split("-")[0]
            values = _distinct(
                (getattr(i, fld) for i in ann.instances if getattr(i, fld).strip()),
                normalize_text,
            )
            add(task, [{fld: v} for v in values])
        elif task == "anomaly-td":
            chosen = [i for i in ann.instances if i.anomaly or td_include_normal]
            records = []
            for inst in _distinct(chosen, TripletInstance.key):
                record = _triplet_record(inst)
                if td_include_normal:
                    record["anomaly"] = 1.0 if inst.anomaly else 0.0
                records.append(record)
            add(task, records)
        elif task == "anomaly-bu":
            records = [
                {**_triplet_record(inst), "anomaly": 1.0 if inst.anomaly else 0.0}
                for inst in _distinct(ann.instances, TripletInstance.key)
            ]
            add(task, records)
        elif task == "grounding":
            for idx, inst in enumerate(_distinct(ann.instances, TripletInstance.key)):
                occurrences = [i for i in ann.instances if i.key() == inst.key()]
                records = [
                    {"start": o.start_frame / ann.fps, "end": o.end_frame / ann.fps}
                    for o in occurrences
                ]
                query = render_triplet_text(
                    ContextTriplet(inst.event, inst.scene, inst.attribute, inst.anomaly)
                )
                add("grounding", records, suffix=f"/{idx}", query=query)
        elif task == "detection":
            intervals = [
                Interval(i.start_frame / ann.fps, i.end_frame / ann.fps)
                for i in ann.instances
                if i.anomaly
            ]
            records = [{"start": iv.start, "end": iv.end} for iv in merge_intervals(intervals)]
            add(task, records)
        elif task == "anticipation":
            boundary = anticipation_boundary_frame
            if boundary is None and ann.instances:
                earliest = min(ann.instances, key=lambda i: (i.start_frame, i.end_frame))
                boundary = earliest.end_frame
            future = [
                i for i in ann.instances if boundary is not None and i.start_frame > boundary
            ]
            records = [_triplet_record(i) for i in _distinct(future, TripletInstance.key)]
            add(task, records)
    return samples


def build_all_samples(annotations, tasks=TASK_ORDER, **kwargs) -> list[EvalSample]:
    samples = []
    for ann in annotations:
        samples.extend(build_samples(ann, tasks, **kwargs))
    return samples


METRIC_COLUMNS = ("struct", "semantic", "hierarchy", "tiou")


def aggregate(bundles) -> dict:
    """Per-task means of each present metric, scaled to [0, 100].

    Returns an ordered mapping task -> {"count": n, "<metric>": mean or
    None}; metrics a task never produced stay None. Input order does not
    matter.
    """
    sums: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    for task, bundle in bundles:
        counts[task] = counts.get(task, 0) + 1
        per_task = sums.setdefault(task, {})
        for column in METRIC_COLUMNS:
            value = getattr(bundle, column)
            if value is not None:
                per_task[column] = per_task.get(column, 0.0) + value
    table: dict[str, dict] = {}
    ordered = [t for t in TASK_ORDER if t in counts] + sorted(
        t for t in counts if t not in TASK_ORDER
    )
    for task in ordered:
        row: dict = {"count": counts[task]}
        for column in METRIC_COLUMNS:
            if column in sums[task]:
                row[column] = sums[task][column] / counts[task] * 100.0
            else:
                row[column] = None
        table[task] = row
    return table
