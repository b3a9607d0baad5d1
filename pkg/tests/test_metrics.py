from __future__ import annotations

import random
from collections import Counter

import pytest

from cueval.answers import TASKS, AnswerList
from cueval.metrics import (
    GroundTruthResolutionError,
    Interval,
    ScoreBundle,
    evaluate_sample,
    frames_to_intervals,
    hierarchy_score,
    merge_intervals,
    records_to_intervals,
    resolve_gt_node,
    semantic_score,
    struct_score,
    temporal_iou,
    topk_hierarchy_score,
)

TRIPLETS = {
    "cliff": {"event": "climbing", "scene": "cliff", "attribute": "no protection"},
    "scaffold": {"event": "climbing", "scene": "scaffolding", "attribute": "no harness"},
    "fall": {"event": "falling down", "scene": "stairs", "attribute": "elderly person"},
    "explosion": {"event": "explosion", "scene": "street", "attribute": "gas leak"},
    "vandalism": {"event": "vandalism", "scene": "road", "attribute": "fence"},
    "theft": {"event": "theft", "scene": "shop", "attribute": "masked man"},
    "gear": {"event": "climbing", "scene": "cliff", "attribute": "safety gear"},
    "zebra": {"event": "crossing road", "scene": "zebra crossing", "attribute": "green light"},
    "waiting": {"event": "crossing road", "scene": "road", "attribute": "pedestrian waiting"},
}


def test_struct_score_perfect():
    bag = Counter({"event": 1, "scene": 1, "attribute": 1, "anomaly": 1})
    assert struct_score(bag, bag) == 1.0


def test_struct_score_missing_key_is_six_sevenths():
    out = Counter({"event": 1, "scene": 1, "attribute": 1})
    gt = Counter({"event": 1, "scene": 1, "attribute": 1, "anomaly": 1})
    assert abs(struct_score(out, gt) - 6.0 / 7.0) < 1e-12


def test_struct_score_disjoint_and_empty_conventions():
    assert struct_score(Counter({"foo": 1}), Counter({"start": 1, "end": 1})) == 0.0
    assert struct_score(Counter(), Counter()) == 1.0
    assert struct_score(Counter(), Counter({"event": 1})) == 0.0
    assert struct_score(Counter({"event": 1}), Counter()) == 0.0


def test_struct_score_respects_multiplicity():
    out = Counter({"event": 2})
    gt = Counter({"event": 1})
    # overlap 1, out extra 1, gt extra 0
    assert struct_score(out, gt) == pytest.approx(2 / 3)


def test_semantic_score_exact_single_match(provider):
    spec = TASKS["anomaly-td"]
    out = AnswerList([dict(TRIPLETS["vandalism"])])
    gt = [dict(TRIPLETS["vandalism"])]
    assert semantic_score(out, gt, spec, provider) == pytest.approx(1.0, abs=1e-12)


def test_semantic_score_two_to_one_is_half(provider):
    spec = TASKS["anomaly-td"]
    out = AnswerList([dict(TRIPLETS["vandalism"]), dict(TRIPLETS["theft"])])
    gt = [dict(TRIPLETS["vandalism"])]
    # only one pair can match; the exact one wins: 1.0 / (2 * 1)
    assert semantic_score(out, gt, spec, provider) == pytest.approx(0.5, abs=1e-12)


def test_semantic_score_degenerate_sides(provider):
    spec = TASKS["anomaly-td"]
    assert semantic_score(AnswerList([]), [dict(TRIPLETS["theft"])] * 3, spec, provider) == 0.0
    assert semantic_score(AnswerList([dict(TRIPLETS["theft"])]), [], spec, provider) == 0.0


def test_semantic_score_balanced_normalization(provider):
    spec = TASKS["anomaly-td"]
    out = AnswerList([dict(TRIPLETS["vandalism"]), dict(TRIPLETS["theft"])])
    gt = [dict(TRIPLETS["vandalism"]), dict(TRIPLETS["theft"])]
    paper = semantic_score(out, gt, spec, provider, normalization="paper")
    balanced = semantic_score(out, gt, spec, provider, normalization="balanced")
    assert paper == pytest.approx(0.5, abs=1e-12)  # 2 matched / (2*2)
    assert balanced == pytest.approx(1.0, abs=1e-12)


def test_semantic_score_order_invariance(provider):
    spec = TASKS["anomaly-td"]
    records = [dict(TRIPLETS[k]) for k in ("vandalism", "theft", "explosion")]
    gt = [dict(TRIPLETS[k]) for k in ("theft", "explosion", "cliff")]
    base = semantic_score(AnswerList(list(records)), list(gt), spec, provider)
    rng = random.Random(0)
    for _ in range(5):
        shuffled_out = list(records)
        shuffled_gt = list(gt)
        rng.shuffle(shuffled_out)
        rng.shuffle(shuffled_gt)
        score = semantic_score(AnswerList(shuffled_out), shuffled_gt, spec, provider)
        assert score == pytest.approx(base, abs=1e-12)


def test_semantic_score_single_field_task(provider):
    spec = TASKS["scene-rec"]
    out = AnswerList([{"scene": "Zebra  Crossing"}])
    gt = [{"scene": "zebra crossing"}]
    assert semantic_score(out, gt, spec, provider) == pytest.approx(1.0, abs=1e-12)


def test_semantic_score_per_field_option(provider):
    spec = TASKS["anomaly-td"]
    out = AnswerList([{"event": "climbing", "scene": "cliff", "attribute": "safety gear"}])
    gt = [dict(TRIPLETS["cliff"])]  # same event and scene, different attribute
    whole = semantic_score(out, gt, spec, provider)
    per_field = semantic_score(out, gt, spec, provider, per_field=True)
    assert 0.0 <= per_field <= 1.0
    assert per_field != whole
    # identical records still score 1.0 field-by-field
    exact = semantic_score(
        AnswerList([dict(TRIPLETS["cliff"])]), gt, spec, provider, per_field=True
    )
    assert exact == pytest.approx(1.0, abs=1e-12)


def test_hierarchy_score_identity_leaf(tree, provider):
    spec = TASKS["anomaly-td"]
    out = AnswerList([dict(TRIPLETS["vandalism"])])
    gt = [dict(TRIPLETS["vandalism"])]
    assert hierarchy_score(out, gt, spec, tree, provider, tau=1.0) == pytest.approx(1.0, abs=1e-12)


def test_hierarchy_score_wrong_state_is_zero(tree, provider):
    spec = TASKS["anomaly-bu"]
    out = AnswerList([{**TRIPLETS["cliff"], "anomaly": 0.9}])
    gt = [{**TRIPLETS["gear"], "anomaly": 0.0}]
    assert hierarchy_score(out, gt, spec, tree, provider, tau=1.0) == 0.0


def test_hierarchy_score_threshold_cuts_distance_three(tree, provider):
    spec = TASKS["anomaly-td"]
    out = AnswerList([dict(TRIPLETS["explosion"])])
    gt = [dict(TRIPLETS["cliff"])]  # distance 3 in the mini tree
    assert hierarchy_score(out, gt, spec, tree, provider, tau=0.5) == 0.0
    assert hierarchy_score(out, gt, spec, tree, provider, tau=1.0) == pytest.approx(0.4, abs=1e-12)


def test_hierarchy_score_score_threshold_branch_rule(tree, provider):
    spec = TASKS["anomaly-bu"]
    out = AnswerList([{**TRIPLETS["zebra"], "anomaly": 0.2}])
    gt = [{**TRIPLETS["zebra"], "anomaly": 0.0}]
    assert hierarchy_score(out, gt, spec, tree, provider, tau=1.0) == pytest.approx(1.0, abs=1e-12)


def test_hierarchy_score_event_level(tree, provider):
    spec = TASKS["event-rec"]
    out = AnswerList([{"event": "climbing"}])
    gt = [{"event": "climbing"}]
    assert hierarchy_score(out, gt, spec, tree, provider, tau=1.0) == pytest.approx(1.0, abs=1e-12)
    out = AnswerList([{"event": "theft"}])
    # climbing resolves into the anomaly branch (smallest id); theft sits
    # two levels away under a different domain: d = 3, d_max = 4
    assert hierarchy_score(out, gt, spec, tree, provider, tau=1.0) == pytest.approx(
        1.0 - 3.0 / 4.0, abs=1e-12
    )


def test_hierarchy_score_order_invariance(tree, provider):
    spec = TASKS["anomaly-td"]
    out_records = [dict(TRIPLETS[k]) for k in ("vandalism", "explosion", "cliff")]
    gt = [dict(TRIPLETS[k]) for k in ("theft", "cliff")]
    base = hierarchy_score(AnswerList(list(out_records)), list(gt), spec, tree, provider, tau=1.0)
    rng = random.Random(2)
    for _ in range(5):
        shuffled_out = list(out_records)
        shuffled_gt = list(gt)
        rng.shuffle(shuffled_out)
        rng.shuffle(shuffled_gt)
        score = hierarchy_score(AnswerList(shuffled_out), shuffled_gt, spec, tree, provider, tau=1.0)
        assert score == pytest.approx(base, abs=1e-12)


def test_hierarchy_score_unresolvable_gt(tree, provider):
    spec = TASKS["anomaly-td"]
    out = AnswerList([dict(TRIPLETS["vandalism"])])
    with pytest.raises(GroundTruthResolutionError):
        hierarchy_score(out, [{"event": "ghost", "scene": "x", "attribute": "y"}], spec, tree, provider)


def test_resolve_gt_node_prefers_anomaly_branch_for_td(tree):
    spec = TASKS["anomaly-td"]
    node = resolve_gt_node(tree, TRIPLETS["vandalism"], spec)
    assert node == "a.law.prop.vand.road"


def test_resolve_gt_node_uses_anomaly_value(tree):
    spec = TASKS["anomaly-bu"]
    node = resolve_gt_node(tree, {**TRIPLETS["zebra"], "anomaly": 0.0}, spec)
    assert node == "n.saf.per.cross.zebra"


def test_temporal_iou_partial_overlap():
    assert temporal_iou([(2, 6)], [(4, 8)]) == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_temporal_iou_identity_and_disjoint():
    assert temporal_iou([(0, 5), (10, 12)], [(0, 5), (10, 12)]) == 1.0
    assert temporal_iou([(0, 1)], [(5, 6)]) == 0.0


def test_temporal_iou_empty_conventions():
    assert temporal_iou([], []) == 1.0
    assert temporal_iou([], [(0, 1)]) == 0.0
    assert temporal_iou([(0, 1)], []) == 0.0


def test_temporal_iou_symmetry_and_split_invariance():
    pred = [(0.0, 5.0)]
    gt = [(2.0, 9.0)]
    assert temporal_iou(pred, gt) == temporal_iou(gt, pred)
    split = [(0.0, 2.0), (2.0, 5.0)]
    assert temporal_iou(split, gt) == temporal_iou(pred, gt)


def test_temporal_iou_rejects_inverted_interval():
    with pytest.raises(ValueError):
        temporal_iou([(5, 2)], [(0, 1)])


def test_temporal_iou_pairwise_option():
    pred = [(0, 2), (10, 12)]
    gt = [(0, 2), (10, 12)]
    assert temporal_iou(pred, gt, method="pairwise") == pytest.approx(1.0)
    assert temporal_iou([(0, 2)], gt, method="pairwise") == pytest.approx(0.5)


def test_merge_intervals_touching():
    merged = merge_intervals([(0, 2), (2, 4), (5, 6)])
    assert [(iv.start, iv.end) for iv in merged] == [(0.0, 4.0), (5.0, 6.0)]


def test_records_to_intervals_skips_invalid():
    records = [
        {"start": 1, "end": 2},
        {"start": "0:30", "end": "1:00"},
        {"start": 5, "end": 1},
        {"start": -2, "end": 1},
        {"start": "junk", "end": 3},
        {"end": 3},
    ]
    intervals = records_to_intervals(records)
    assert [(iv.start, iv.end) for iv in intervals] == [(1.0, 2.0), (30.0, 60.0)]


def test_topk_hierarchy_exact_top1(tree, provider):
    assert topk_hierarchy_score([dict(TRIPLETS["theft"])], TRIPLETS["theft"], 1, tree, provider) == 1.0


def test_topk_hierarchy_max_semantics(tree, provider):
    ranked = [dict(TRIPLETS["gear"]), dict(TRIPLETS["zebra"]), dict(TRIPLETS["theft"])]
    assert topk_hierarchy_score(ranked, TRIPLETS["theft"], 5, tree, provider) == 1.0


def test_topk_hierarchy_k1_scores_rank_one_only(tree, provider):
    ranked = [dict(TRIPLETS["vandalism"]), dict(TRIPLETS["cliff"]), dict(TRIPLETS["theft"])]
    # rank-1 proxy is vandalism: distance 2 to theft (same domain, other event)
    expected = 1.0 - 2.0 / 5.0
    assert topk_hierarchy_score(ranked, TRIPLETS["theft"], 1, tree, provider) == pytest.approx(expected)


def test_topk_hierarchy_event_level_and_empty(tree, provider):
    assert topk_hierarchy_score([], TRIPLETS["theft"], 3, tree, provider) == 0.0
    score = topk_hierarchy_score(["climbing"], {"event": "climbing"}, 1, tree, provider)
    assert score == 1.0


def test_frames_to_intervals_single_run():
    intervals = frames_to_intervals([False, True, True, False], fps=1.0)
    assert [(iv.start, iv.end) for iv in intervals] == [(1.0, 3.0)]


def test_frames_to_intervals_empty():
    assert frames_to_intervals([False, False], fps=1.0) == []


def test_frames_to_intervals_fps_scaling():
    intervals = frames_to_intervals([True, False, True], fps=2.0)
    assert [(iv.start, iv.end) for iv in intervals] == [(0.0, 0.5), (1.0, 1.5)]


def test_frames_to_intervals_rejects_bad_fps():
    with pytest.raises(ValueError):
        frames_to_intervals([True], fps=0)


def test_evaluate_sample_routing_grounding(tree, provider):
    spec = TASKS["grounding"]
    pred = AnswerList([{"start": 0.0, "end": 2.0}])
    bundle = evaluate_sample(pred, [{"start": 0.0, "end": 2.0}], spec, tree, provider)
    assert bundle.struct == 1.0 and bundle.tiou == 1.0
    assert bundle.semantic is None and bundle.hierarchy is None


def test_evaluate_sample_routing_scene(tree, provider):
    spec = TASKS["scene-rec"]
    pred = AnswerList([{"scene": "shop"}])
    bundle = evaluate_sample(pred, [{"scene": "shop"}], spec, tree, provider)
    assert bundle.struct == 1.0 and bundle.semantic == pytest.approx(1.0)
    assert bundle.hierarchy is None and bundle.tiou is None


def test_evaluate_sample_routing_anomaly_bu(tree, provider):
    spec = TASKS["anomaly-bu"]
    pred = AnswerList([{**TRIPLETS["vandalism"], "anomaly": 1.0}])
    bundle = evaluate_sample(pred, [{**TRIPLETS["vandalism"], "anomaly": 1.0}], spec, tree, provider)
    assert bundle.struct == 1.0
    assert bundle.semantic is not None and bundle.hierarchy is not None
    assert bundle.tiou is None


def test_evaluate_sample_empty_prediction_scores_zero(tree, provider):
    spec = TASKS["anomaly-bu"]
    bundle = evaluate_sample(
        AnswerList([]), [{**TRIPLETS["vandalism"], "anomaly": 1.0}], spec, tree, provider
    )
    assert bundle == ScoreBundle(struct=0.0, semantic=0.0, hierarchy=0.0)


def test_interval_validation():
    with pytest.raises(ValueError):
        Interval(3.0, 1.0)
    with pytest.raises(ValueError):
        Interval(-1.0, 1.0)
