"""Independent re-derivation of the scoring pipelines.

Everything here is computed from first principles on the raw fixture
document: reference hash vectors, pure-python cosines, brute-force
matchings, and parent-chain tree walks. No package internals beyond the
public scoring entry points are used, so agreement means the production
pipeline composes rendering, matching, clamping, proxy retrieval, and
normalization the way the definitions say.
"""

from __future__ import annotations

import itertools
import json
import math
import random
from pathlib import Path

import pytest

from cueval.answers import TASKS, AnswerList
from cueval.metrics import hierarchy_score, semantic_score

from .fnv_oracle import reference_hash_vector

FIXTURES = Path(__file__).parent / "fixtures"
DIMS = 256


def _norm(text: str) -> str:
    return " ".join(text.lower().split())


def _render(record: dict) -> str:
    return (
        f"event: {_norm(str(record.get('event', '')))}; "
        f"scene: {_norm(str(record.get('scene', '')))}; "
        f"attribute: {_norm(str(record.get('attribute', '')))}"
    )


def _cos(u: list[float], v: list[float]) -> float:
    dot = math.fsum(a * b for a, b in zip(u, v))
    nu = math.sqrt(math.fsum(a * a for a in u))
    nv = math.sqrt(math.fsum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return max(-1.0, min(1.0, dot / (nu * nv)))


def _best_matching(sims: list[list[float]]) -> list[tuple[int, int]]:
    r, t = len(sims), len(sims[0])
    best_pairs: list[tuple[int, int]] = []
    best_total = -math.inf
    if r <= t:
        for cols in itertools.permutations(range(t), r):
            total = math.fsum(sims[i][j] for i, j in enumerate(cols))
            if total > best_total:
                best_total = total
                best_pairs = list(enumerate(cols))
    else:
        for rows in itertools.permutations(range(r), t):
            total = math.fsum(sims[i][j] for j, i in enumerate(rows))
            if total > best_total:
                best_total = total
                best_pairs = [(i, j) for j, i in enumerate(rows)]
    return best_pairs


class _RawTree:
    """Parent-chain view of the taxonomy document, no package machinery."""

    def __init__(self, path: Path):
        doc = json.loads(path.read_text(encoding="utf-8"))
        self.by_id = {n["id"]: n for n in doc["nodes"]}

    def state(self, node_id: str) -> str:
        node = self.by_id[node_id]
        while node["level"] > 1:
            node = self.by_id[node["parent"]]
        return "anomaly" if node["label"] == "Anomaly" else "normality"

    def ancestors(self, node_id: str) -> list[str]:
        chain = [node_id]
        node = self.by_id[node_id]
        while "parent" in node:
            chain.append(node["parent"])
            node = self.by_id[node["parent"]]
        return chain

    def distance(self, a: str, b: str) -> int:
        chain_a = self.ancestors(a)
        in_a = set(chain_a)
        node = self.by_id[b]
        while node["id"] not in in_a:
            node = self.by_id[node["parent"]]
        return self.by_id[a]["level"] - node["level"]

    def leaves(self, branch: str) -> list[str]:
        return sorted(
            n["id"]
            for n in self.by_id.values()
            if n["level"] == 5 and self.state(n["id"]) == branch
        )

    def leaf_by_triplet(self, record: dict, branch: str) -> str:
        for leaf in self.leaves(branch):
            t = self.by_id[leaf]["triplet"]
            if (
                _norm(t["event"]) == _norm(str(record["event"]))
                and _norm(t["scene"]) == _norm(str(record["scene"]))
                and _norm(t["attribute"]) == _norm(str(record["attribute"]))
            ):
                return leaf
        raise AssertionError(f"unresolvable record {record}")


def _leaf_records(raw: _RawTree) -> list[dict]:
    records = []
    for node in raw.by_id.values():
        if node["level"] == 5:
            t = node["triplet"]
            records.append(
                {
                    "event": t["event"],
                    "scene": t["scene"],
                    "attribute": t["attribute"],
                    "anomaly": 1.0 if t["anomaly"] else 0.0,
                }
            )
    return sorted(records, key=lambda r: (r["event"], r["scene"], r["attribute"]))


def _reference_semantic(out_records, gt_records) -> float:
    vec_out = [reference_hash_vector(_render(r), DIMS) for r in out_records]
    vec_gt = [reference_hash_vector(_render(r), DIMS) for r in gt_records]
    sims = [[_cos(u, v) for v in vec_gt] for u in vec_out]
    pairs = _best_matching(sims)
    total = math.fsum(max(0.0, sims[i][j]) for i, j in pairs)
    return max(0.0, min(1.0, total / (len(out_records) * len(gt_records))))


def _reference_hierarchy(out_records, gt_records, raw: _RawTree, tau: float) -> float:
    vec_out = [reference_hash_vector(_render(r), DIMS) for r in out_records]
    vec_gt = [reference_hash_vector(_render(r), DIMS) for r in gt_records]
    sims = [[_cos(u, v) for v in vec_gt] for u in vec_out]
    pairs = _best_matching(sims)
    total = 0.0
    for i, j in pairs:
        out_branch = "anomaly" if float(out_records[i]["anomaly"]) > 0.5 else "normality"
        gt_branch = "anomaly" if float(gt_records[j]["anomaly"]) > 0.5 else "normality"
        best_leaf, best_sim = None, -2.0
        for leaf in raw.leaves(out_branch):
            t = raw.by_id[leaf]["triplet"]
            sim = _cos(vec_out[i], reference_hash_vector(_render(t), DIMS))
            if sim > best_sim:
                best_leaf, best_sim = leaf, sim
        gt_leaf = raw.leaf_by_triplet(gt_records[j], gt_branch)
        d = raw.distance(best_leaf, gt_leaf)
        if d <= tau * 5:
            total += 1.0 - d / 5.0
    return max(0.0, min(1.0, total / (len(out_records) * len(gt_records))))


def test_semantic_pipeline_matches_independent_derivation(tree, provider):
    raw = _RawTree(FIXTURES / "mini_taxonomy.json")
    pool = _leaf_records(raw)
    spec = TASKS["anomaly-bu"]
    rng = random.Random(31)
    for _ in range(40):
        out = [dict(rng.choice(pool)) for _ in range(rng.randint(1, 3))]
        gt = rng.sample(pool, rng.randint(1, 3))
        expected = _reference_semantic(out, gt)
        got = semantic_score(AnswerList(list(out)), list(gt), spec, provider)
        assert got == pytest.approx(expected, abs=1e-12)


def test_hierarchy_pipeline_matches_independent_derivation(tree, provider):
    raw = _RawTree(FIXTURES / "mini_taxonomy.json")
    pool = _leaf_records(raw)
    spec = TASKS["anomaly-bu"]
    rng = random.Random(47)
    for _ in range(40):
        out = [dict(rng.choice(pool)) for _ in range(rng.randint(1, 2))]
        gt = rng.sample(pool, rng.randint(1, 2))
        tau = rng.choice([0.2, 0.5, 1.0])
        expected = _reference_hierarchy(out, gt, raw, tau)
        got = hierarchy_score(AnswerList(list(out)), list(gt), spec, tree, provider, tau=tau)
        assert got == pytest.approx(expected, abs=1e-12)
