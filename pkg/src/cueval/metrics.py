"""Unified evaluation metrics: structure, semantic, hierarchy, temporal.

Score conventions shared by all metrics:
  * every score lies in [0, 1];
  * empty-vs-empty comparisons count as perfect agreement (1.0), while
    empty-vs-nonempty ones score 0.0;
  * matched cosines are clamped at zero before summation so the signed
    hash embedder cannot push a score below zero.

The default "paper" normalization divides matched similarity by r*t;
the "balanced" option divides by max(r, t) instead, which lets perfect
multi-record answers reach 1.0. Both are exposed because aggregate
numbers are meaningless without knowing which one was used.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .answers import (
    ANOMALY_SCORE_THRESHOLD,
    BRANCH_RULE_ANOMALY_ONLY,
    BRANCH_RULE_GT_STATE,
    BRANCH_RULE_SCORE_THRESHOLD,
    VALUE_TAG_EVENT,
    VALUE_TAG_TEMPORAL,
    AnswerList,
    TaskSpec,
    key_bag,
    parse_timestamp,
    record_key_bag,
)
from .assign import hungarian_max
from .embed import EmbeddingProvider, cosine, normalize_text
from .taxonomy import (
    BRANCH_ANOMALY,
    BRANCH_BOTH,
    BRANCH_NORMALITY,
    ContextTriplet,
    Hierarchy,
    hierarchy_distance,
    nearest_node,
    render_triplet_text,
)

NORMALIZATION_PAPER = "paper"
NORMALIZATION_BALANCED = "balanced"
_NORMALIZATIONS = (NORMALIZATION_PAPER, NORMALIZATION_BALANCED)


class GroundTruthResolutionError(ValueError):
    """A ground-truth record could not be mapped to a taxonomy node."""


@dataclass(frozen=True)
class Interval:
    """Closed time interval in seconds."""

    start: float
    end: float

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"interval end {self.end} before start {self.start}")
        if self.start < 0:
            raise ValueError(f"interval start {self.start} is negative")

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ScoreBundle:
    """Per-sample metric outputs; only the fields routed for the task
    are populated, the rest stay None."""

    struct: float
    semantic: float | None = None
    hierarchy: float | None = None
    tiou: float | None = None


def struct_score(out_bag, gt_bag) -> float:
    """F1 over the output and ground-truth key multisets."""
    out_bag = Counter(out_bag)
    gt_bag = Counter(gt_bag)
    out_size = sum(out_bag.values())
    gt_size = sum(gt_bag.values())
    if out_size == 0 and gt_size == 0:
        return 1.0
    if out_size == 0 or gt_size == 0:
        return 0.0
    overlap = sum((out_bag & gt_bag).values())
    out_extra = sum((out_bag - gt_bag).values())
    gt_extra = sum((gt_bag - out_bag).values())
    return 2 * overlap / (2 * overlap + out_extra + gt_extra)


def _records_of(answers) -> list[dict]:
    if isinstance(answers, AnswerList):
        return answers.records
    return list(answers)


def _field_text(record: dict, key: str) -> str:
    value = record.get(key, "")
    if isinstance(value, bool):
        value = "true" if value else "false"
    return normalize_text(str(value))


def record_value_text(record: dict, spec: TaskSpec) -> str:
    """Canonical text of a record's schema values for embedding."""
    if spec.is_triplet_shaped:
        triplet = ContextTriplet(
            event=_field_text(record, "event"),
            scene=_field_text(record, "scene"),
            attribute=_field_text(record, "attribute"),
            anomaly=False,
        )
        return render_triplet_text(triplet)
    key = spec.key_schema[0]
    return _field_text(record, key)


def _similarity_matrix(
    out_records: list[dict],
    gt_records: list[dict],
    spec: TaskSpec,
    provider: EmbeddingProvider,
    per_field: bool = False,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Cosine matrix between rendered records plus the output vectors."""
    out_vecs = [provider.embed(record_value_text(rec, spec)) for rec in out_records]
    gt_vecs = [provider.embed(record_value_text(rec, spec)) for rec in gt_records]
    sims = np.zeros((len(out_records), len(gt_records)), dtype=np.float64)
    if per_field and spec.is_triplet_shaped:
        fields = ("event", "scene", "attribute")
        out_field_vecs = [
            [provider.embed(_field_text(rec, f)) for f in fields] for rec in out_records
        ]
        gt_field_vecs = [
            [provider.embed(_field_text(rec, f)) for f in fields] for rec in gt_records
        ]
        for i, ovs in enumerate(out_field_vecs):
            for j, gvs in enumerate(gt_field_vecs):
                sims[i, j] = sum(cosine(o, g) for o, g in zip(ovs, gvs)) / len(fields)
    else:
        for i, ov in enumerate(out_vecs):
            for j, gv in enumerate(gt_vecs):
                sims[i, j] = cosine(ov, gv)
    return sims, out_vecs


def _denominator(r: int, t: int, normalization: str) -> int:
    if normalization not in _NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    return r * t if normalization == NORMALIZATION_PAPER else max(r, t)


def semantic_score(
    out,
    gt_records,
    spec: TaskSpec,
    provider: EmbeddingProvider,
    normalization: str = NORMALIZATION_PAPER,
    per_field: bool = False,
) -> float:
    """Assignment-matched cosine similarity over rendered value texts."""
    out_records = _records_of(out)
    gt = list(gt_records)
    r, t = len(out_records), len(gt)
    if r == 0 or t == 0:
        return 0.0
    sims, _ = _similarity_matrix(out_records, gt, spec, provider, per_field)
    pairs = hungarian_max(sims)
    total = sum(max(0.0, float(sims[i, j])) for i, j in pairs)
    return min(1.0, max(0.0, total / _denominator(r, t, normalization)))


def _coerce_anomaly_score(value) -> float:
    if isinstance(value, bool):
        return 1.0 if value else 0.0
    if isinstance(value, (int, float)) and math.isfinite(value):
        return float(value)
    return 0.0


def resolve_gt_node(h: Hierarchy, record: dict, spec: TaskSpec) -> str:
    """Taxonomy node for a ground-truth record at the task's compared level.

    Triplet records resolve to leaves by exact (normalized) content;
    event-level records resolve by event label. When content alone is
    ambiguous (a label present in both branches), the smallest node id
    wins, which keeps resolution deterministic.
    """
    level = spec.compared_level
    if level == h.max_leaf_depth:
        branch = BRANCH_BOTH
        if spec.branch_rule == BRANCH_RULE_ANOMALY_ONLY:
            branch = BRANCH_ANOMALY
        elif "anomaly" in record:
            score = _coerce_anomaly_score(record["anomaly"])
            branch = BRANCH_ANOMALY if score > ANOMALY_SCORE_THRESHOLD else BRANCH_NORMALITY
        hits = h.find_leaf(
            _field_text(record, "event"),
            _field_text(record, "scene"),
            _field_text(record, "attribute"),
            branch,
        )
    else:
        hits = h.find_by_label(level, _field_text(record, "event"))
    if not hits:
        raise GroundTruthResolutionError(
            f"ground-truth record {record!r} does not resolve to a level-{level} node"
        )
    return hits[0]


def _proxy_branch(out_record: dict, gt_state: str | None, branch_rule: str) -> str:
    if branch_rule == BRANCH_RULE_ANOMALY_ONLY:
        return BRANCH_ANOMALY
    if branch_rule == BRANCH_RULE_SCORE_THRESHOLD:
        score = _coerce_anomaly_score(out_record.get("anomaly", 0.0))
        return BRANCH_ANOMALY if score > ANOMALY_SCORE_THRESHOLD else BRANCH_NORMALITY
    if branch_rule == BRANCH_RULE_GT_STATE:
        return gt_state if gt_state is not None else BRANCH_BOTH
    raise ValueError(f"unknown branch rule {branch_rule!r}")


def matched_hierarchy_distances(
    out,
    gt_records,
    spec: TaskSpec,
    h: Hierarchy,
    provider: EmbeddingProvider,
    per_field: bool = False,
) -> tuple[list[int], int, int, int]:
    """Tree distances for each assignment-matched (output, gt) pair.

    Returns (distances, r, t, d_max). The assignment is the same one the
    semantic score uses; each matched output record is replaced by its
    nearest taxonomy proxy (per the task's branch rule) before measuring
    the distance to the resolved ground-truth node.
    """
    out_records = _records_of(out)
    gt = list(gt_records)
    r, t = len(out_records), len(gt)
    d_max = spec.compared_level
    if r == 0 or t == 0:
        return [], r, t, d_max
    sims, out_vecs = _similarity_matrix(out_records, gt, spec, provider, per_field)
    pairs = hungarian_max(sims)
    gt_nodes = {j: resolve_gt_node(h, gt[j], spec) for _, j in pairs}
    distances: list[int] = []
    for i, j in pairs:
        gt_node = gt_nodes[j]
        branch = _proxy_branch(out_records[i], h.state_of(gt_node), spec.branch_rule)
        proxy, _ = nearest_node(h, out_vecs[i], spec.compared_level, branch, provider)
        distances.append(hierarchy_distance(h, proxy, gt_node))
    return distances, r, t, d_max


def hierarchy_score(
    out,
    gt_records,
    spec: TaskSpec,
    h: Hierarchy,
    provider: EmbeddingProvider,
    tau: float = 0.5,
    normalization: str = NORMALIZATION_PAPER,
    per_field: bool = False,
) -> float:
    """Taxonomy-distance score over matched pairs with validity threshold.

    Pairs whose proxy sits further than tau * d_max levels from the
    ground-truth node contribute nothing; the rest contribute
    1 - d / d_max.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    distances, r, t, d_max = matched_hierarchy_distances(
        out, gt_records, spec, h, provider, per_field
    )
    if r == 0 or t == 0:
        return 0.0
    total = sum(1.0 - d / d_max for d in distances if d <= tau * d_max)
    return min(1.0, max(0.0, total / _denominator(r, t, normalization)))


def merge_intervals(intervals) -> list[Interval]:
    """Merge overlapping or touching intervals into disjoint ones."""
    items = sorted(_as_intervals(intervals), key=lambda iv: (iv.start, iv.end))
    merged: list[Interval] = []
    for iv in items:
        if merged and iv.start <= merged[-1].end:
            if iv.end > merged[-1].end:
                merged[-1] = Interval(merged[-1].start, iv.end)
        else:
            merged.append(iv)
    return merged


def _as_intervals(intervals) -> list[Interval]:
    out = []
    for iv in intervals:
        if isinstance(iv, Interval):
            out.append(iv)
        else:
            start, end = iv
            out.append(Interval(float(start), float(end)))
    return out


def _overlap_length(a: list[Interval], b: list[Interval]) -> float:
    total = 0.0
    for p in a:
        for g in b:
            total += max(0.0, min(p.end, g.end) - max(p.start, g.start))
    return total


def temporal_iou(pred, gt, method: str = "merge") -> float:
    """IoU between two interval sets.

    The default merges each side into disjoint intervals and takes the
    measure ratio. ``method="pairwise"`` instead matches intervals
    one-to-one by per-pair IoU and averages over max(len(pred), len(gt)).
    """
    pred_iv = _as_intervals(pred)
    gt_iv = _as_intervals(gt)
    if not pred_iv and not gt_iv:
        return 1.0
    if not pred_iv or not gt_iv:
        return 0.0
    if method == "merge":
        merged_pred = merge_intervals(pred_iv)
        merged_gt = merge_intervals(gt_iv)
        intersection = _overlap_length(merged_pred, merged_gt)
        union = sum(iv.length for iv in merge_intervals(merged_pred + merged_gt))
        if union == 0.0:
            return 1.0
        return intersection / union
    if method == "pairwise":
        sims = np.zeros((len(pred_iv), len(gt_iv)))
        for i, p in enumerate(pred_iv):
            for j, g in enumerate(gt_iv):
                inter = max(0.0, min(p.end, g.end) - max(p.start, g.start))
                union = max(p.end, g.end) - min(p.start, g.start)
                sims[i, j] = inter / union if union > 0 else 1.0
        pairs = hungarian_max(sims)
        total = sum(float(sims[i, j]) for i, j in pairs)
        return total / max(len(pred_iv), len(gt_iv))
    raise ValueError(f"unknown temporal IoU method {method!r}")


def records_to_intervals(records) -> list[Interval]:
    """Intervals from start/end record values; invalid records are skipped."""
    intervals = []
    for record in _records_of(records):
        start = parse_timestamp(record.get("start"))
        end = parse_timestamp(record.get("end"))
        if start is None or end is None or start < 0 or end < start:
            continue
        intervals.append(Interval(start, end))
    return intervals


def _prediction_text(entry) -> str:
    if isinstance(entry, str):
        return normalize_text(entry)
    if isinstance(entry, dict):
        if {"event", "scene", "attribute"}.issubset(entry):
            triplet = ContextTriplet(
                event=_field_text(entry, "event"),
                scene=_field_text(entry, "scene"),
                attribute=_field_text(entry, "attribute"),
                anomaly=False,
            )
            return render_triplet_text(triplet)
        if "event" in entry:
            return _field_text(entry, "event")
        return normalize_text(" ".join(str(v) for v in entry.values()))
    return normalize_text(str(entry))


def topk_hierarchy_score(
    ranked,
    gt_record: dict,
    k: int,
    h: Hierarchy,
    provider: EmbeddingProvider,
) -> float:
    """Best hierarchy alignment among the first k ranked predictions.

    The ground-truth record fixes the compared level (leaf for triplet
    records, event level otherwise); predictions from either state branch
    are admitted. An empty ranking scores 0.0.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    all_entries = list(ranked)
    entries = all_entries[: min(k, len(all_entries))]
    if not entries:
        return 0.0
    if {"event", "scene", "attribute"}.issubset(gt_record):
        level = h.max_leaf_depth
        hits = h.find_leaf(
            _field_text(gt_record, "event"),
            _field_text(gt_record, "scene"),
            _field_text(gt_record, "attribute"),
        )
    else:
        level = 4
        hits = h.find_by_label(level, _field_text(gt_record, "event"))
    if not hits:
        raise GroundTruthResolutionError(
            f"ground-truth record {gt_record!r} does not resolve to a taxonomy node"
        )
    gt_node = hits[0]
    d_max = level
    best = 0.0
    for entry in entries:
        query = provider.embed(_prediction_text(entry))
        proxy, _ = nearest_node(h, query, level, BRANCH_BOTH, provider)
        d = hierarchy_distance(h, proxy, gt_node)
        best = max(best, 1.0 - d / d_max)
    return best


def frames_to_intervals(labels, fps: float) -> list[Interval]:
    """Intervals covered by maximal runs of true per-frame labels."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    flags = list(labels)
    intervals = []
    run_start = None
    for idx, flag in enumerate(flags):
        if flag and run_start is None:
            run_start = idx
        elif not flag and run_start is not None:
            intervals.append(Interval(run_start / fps, idx / fps))
            run_start = None
    if run_start is not None:
        intervals.append(Interval(run_start / fps, len(flags) / fps))
    return intervals


def evaluate_sample(
    pred: AnswerList,
    gt_records,
    spec: TaskSpec,
    h: Hierarchy | None = None,
    provider: EmbeddingProvider | None = None,
    tau: float = 0.5,
    normalization: str = NORMALIZATION_PAPER,
) -> ScoreBundle:
    """Route a sample to its metrics per the task's value tag.

    Structure is always scored. Temporal tasks add the interval IoU;
    everything else adds the semantic score, and event-bearing tasks
    additionally add the hierarchy score.
    """
    gt = list(gt_records)
    struct = struct_score(key_bag(pred), record_key_bag(gt))
    if spec.value_tag == VALUE_TAG_TEMPORAL:
        tiou = temporal_iou(records_to_intervals(pred), records_to_intervals(gt))
        return ScoreBundle(struct=struct, tiou=tiou)
    if provider is None:
        raise ValueError("non-temporal tasks require an embedding provider")
    semantic = semantic_score(pred, gt, spec, provider, normalization)
    if spec.value_tag != VALUE_TAG_EVENT:
        return ScoreBundle(struct=struct, semantic=semantic)
    if h is None:
        raise ValueError("event-bearing tasks require a taxonomy")
    hierarchy = hierarchy_score(pred, gt, spec, h, provider, tau, normalization)
    return ScoreBundle(struct=struct, semantic=semantic, hierarchy=hierarchy)
