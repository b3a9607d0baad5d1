"""Five-level event taxonomy: loading, validation, distance, leaf retrieval.

The tree has a virtual level-0 root above the two level-1 states
("Anomaly" and "Normality"), then domains, effects, events, and finally
context-triplet leaves at level 5. Placing the root above the states
makes the distance between opposite-state leaves equal to the maximum
leaf depth, so a wrong-state answer scores exactly zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import EmbeddingProvider, cosine, normalize_text

LEAF_LEVEL = 5
STATE_ANOMALY = "Anomaly"
STATE_NORMALITY = "Normality"

BRANCH_ANOMALY = "anomaly"
BRANCH_NORMALITY = "normality"
BRANCH_BOTH = "both"
_BRANCHES = (BRANCH_ANOMALY, BRANCH_NORMALITY, BRANCH_BOTH)


class TaxonomyError(ValueError):
    """Validation or lookup failure, carrying the offending node id."""

    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message if node_id is None else f"{message} (node {node_id!r})")
        self.node_id = node_id


@dataclass(frozen=True)
class ContextTriplet:
    """An event with its scene and attribute context, labeled by state."""

    event: str
    scene: str
    attribute: str
    anomaly: bool
    leaf_id: str = ""


@dataclass
class TaxonomyNode:
    id: str
    label: str
    level: int
    parent: str | None
    children: list[str] = field(default_factory=list)
    triplet: ContextTriplet | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


def render_triplet_text(t: ContextTriplet) -> str:
    """Canonical lowercase text of a triplet, used for embedding."""
    return (
        f"event: {normalize_text(t.event)}; "
        f"scene: {normalize_text(t.scene)}; "
        f"attribute: {normalize_text(t.attribute)}"
    )


def node_text(node: TaxonomyNode) -> str:
    """Text embedded for a node: rendered triplet for leaves, label otherwise."""
    if node.triplet is not None:
        return render_triplet_text(node.triplet)
    return normalize_text(node.label)


class Hierarchy:
    """Validated taxonomy tree. Immutable after construction; all queries
    are read-only and safe to share across threads."""

    def __init__(self, nodes: dict[str, TaxonomyNode], root: str):
        self.nodes = nodes
        self.root = root
        self._state: dict[str, str | None] = {}
        for node_id in nodes:
            self._state[node_id] = self._trace_state(node_id)
        leaf_levels = [n.level for n in nodes.values() if n.is_leaf]
        self.max_leaf_depth = max(leaf_levels) if leaf_levels else 0
        self._by_level: dict[int, list[str]] = {}
        for node in nodes.values():
            self._by_level.setdefault(node.level, []).append(node.id)
        for ids in self._by_level.values():
            ids.sort()
        self._leaf_index: dict[tuple[str, str, str, str], str] = {}
        for node in nodes.values():
            if node.triplet is not None:
                key = self._triplet_key(node.triplet, self._state[node.id] or "")
                self._leaf_index[key] = node.id

    @staticmethod
    def _triplet_key(t: ContextTriplet, branch: str) -> tuple[str, str, str, str]:
        return (
            branch,
            normalize_text(t.event),
            normalize_text(t.scene),
            normalize_text(t.attribute),
        )

    def _trace_state(self, node_id: str) -> str | None:
        node = self.nodes[node_id]
        while node.level > 1:
            node = self.nodes[node.parent]  # type: ignore[index]
        if node.level == 1:
            return BRANCH_ANOMALY if node.label == STATE_ANOMALY else BRANCH_NORMALITY
        return None

    def node(self, node_id: str) -> TaxonomyNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TaxonomyError("unknown node id", node_id) from None

    def state_of(self, node_id: str) -> str | None:
        """Branch of a node: 'anomaly', 'normality', or None for the root."""
        self.node(node_id)
        return self._state[node_id]

    def nodes_at(self, level: int, branch: str = BRANCH_BOTH) -> list[str]:
        """Node ids at a level, optionally filtered by state branch; sorted."""
        if branch not in _BRANCHES:
            raise TaxonomyError(f"unknown branch filter {branch!r}")
        ids = self._by_level.get(level, [])
        if branch == BRANCH_BOTH:
            return list(ids)
        return [i for i in ids if self._state[i] == branch]

    def leaves(self, branch: str = BRANCH_BOTH) -> list[str]:
        return [i for i in self.nodes_at(self.max_leaf_depth, branch) if self.nodes[i].is_leaf]

    def find_leaf(self, event: str, scene: str, attribute: str, branch: str = BRANCH_BOTH) -> list[str]:
        """Leaf ids whose triplet matches (normalized); sorted by id."""
        probe = ContextTriplet(event, scene, attribute, anomaly=False)
        hits = []
        if branch in (BRANCH_ANOMALY, BRANCH_BOTH):
            hit = self._leaf_index.get(self._triplet_key(probe, BRANCH_ANOMALY))
            if hit is not None:
                hits.append(hit)
        if branch in (BRANCH_NORMALITY, BRANCH_BOTH):
            hit = self._leaf_index.get(self._triplet_key(probe, BRANCH_NORMALITY))
            if hit is not None:
                hits.append(hit)
        return sorted(hits)

    def find_by_label(self, level: int, label: str, branch: str = BRANCH_BOTH) -> list[str]:
        """Node ids at a level whose normalized label matches; sorted by id."""
        wanted = normalize_text(label)
        return [i for i in self.nodes_at(level, branch) if normalize_text(self.nodes[i].label) == wanted]


def lca(h: Hierarchy, a: str, b: str) -> str:
    """Deepest common ancestor of two nodes; lca(x, x) == x."""
    node_a = h.node(a)
    node_b = h.node(b)
    while node_a.level > node_b.level:
        node_a = h.nodes[node_a.parent]  # type: ignore[index]
    while node_b.level > node_a.level:
        node_b = h.nodes[node_b.parent]  # type: ignore[index]
    while node_a.id != node_b.id:
        node_a = h.nodes[node_a.parent]  # type: ignore[index]
        node_b = h.nodes[node_b.parent]  # type: ignore[index]
    return node_a.id


def hierarchy_distance(h: Hierarchy, a: str, b: str) -> int:
    """Levels ascended from ``a`` (or ``b``) to their common ancestor.

    Defined only between equal-level nodes, which keeps the distance
    bounded by the node level by construction.
    """
    node_a = h.node(a)
    node_b = h.node(b)
    if node_a.level != node_b.level:
        raise TaxonomyError(
            f"distance undefined across levels ({node_a.level} vs {node_b.level})", a
        )
    ancestor = lca(h, a, b)
    return node_a.level - h.nodes[ancestor].level


def nearest_node(
    h: Hierarchy,
    query: np.ndarray,
    level: int,
    branch: str,
    provider: EmbeddingProvider,
) -> tuple[str, float]:
    """Node at ``level``/``branch`` whose embedded text maximizes cosine
    with ``query``. Ties break toward the smallest node id."""
    if not 1 <= level <= h.max_leaf_depth:
        raise TaxonomyError(f"level {level} outside 1..{h.max_leaf_depth}")
    candidates = h.nodes_at(level, branch)
    if not candidates:
        raise TaxonomyError(f"no nodes at level {level} in branch {branch!r}")
    best_id = None
    best_sim = -2.0
    for node_id in candidates:
        sim = cosine(query, provider.embed(node_text(h.nodes[node_id])))
        if sim > best_sim:
            best_id, best_sim = node_id, sim
    assert best_id is not None
    return best_id, best_sim


@dataclass(frozen=True)
class TaxonomyStats:
    level_counts: tuple[int, ...]
    anomaly_leaves: int
    normality_leaves: int


def taxonomy_stats(h: Hierarchy) -> TaxonomyStats:
    """Exact node counts per level plus the per-branch leaf split."""
    counts = tuple(len(h.nodes_at(level)) for level in range(h.max_leaf_depth + 1))
    return TaxonomyStats(
        level_counts=counts,
        anomaly_leaves=len(h.leaves(BRANCH_ANOMALY)),
        normality_leaves=len(h.leaves(BRANCH_NORMALITY)),
    )


def _load_document(source) -> dict:
    if isinstance(source, dict):
        return source
    if isinstance(source, Path):
        return json.loads(source.read_text(encoding="utf-8"))
    if isinstance(source, str):
        if source.lstrip().startswith("{"):
            return json.loads(source)
        return json.loads(Path(source).read_text(encoding="utf-8"))
    raise TaxonomyError(f"unsupported taxonomy source: {type(source).__name__}")


def load_taxonomy(source, pad_shallow_leaves: bool = True) -> Hierarchy:
    """Load and validate a taxonomy document.

    The document is a JSON object {"nodes": [...]}; each node carries id,
    label, level, parent (absent only on the level-0 root), and a triplet
    payload exactly when level is 5. Leaves above level 5 are padded down
    with a single-child chain so that every leaf sits at depth 5 (set
    ``pad_shallow_leaves=False`` to reject such documents instead).
    """
    doc = _load_document(source)
    entries = doc.get("nodes")
    if not isinstance(entries, list) or not entries:
        raise TaxonomyError("document must contain a non-empty 'nodes' list")

    nodes: dict[str, TaxonomyNode] = {}
    for entry in entries:
        if not isinstance(entry, dict):
            raise TaxonomyError("node entries must be objects")
        node_id = entry.get("id")
        if not isinstance(node_id, str) or not node_id:
            raise TaxonomyError("node id must be a non-empty string")
        if node_id in nodes:
            raise TaxonomyError("duplicate node id", node_id)
        label = entry.get("label")
        if not isinstance(label, str):
            raise TaxonomyError("node label must be a string", node_id)
        level = entry.get("level")
        if not isinstance(level, int) or isinstance(level, bool) or not 0 <= level <= LEAF_LEVEL:
            raise TaxonomyError(f"level must be an integer in 0..{LEAF_LEVEL}", node_id)
        parent = entry.get("parent")
        if level == 0 and parent is not None:
            raise TaxonomyError("root node must not declare a parent", node_id)
        if level > 0 and not isinstance(parent, str):
            raise TaxonomyError("non-root node must declare a parent id", node_id)
        triplet_doc = entry.get("triplet")
        if level == LEAF_LEVEL and triplet_doc is None:
            raise TaxonomyError("leaf at level 5 without triplet payload", node_id)
        if level != LEAF_LEVEL and triplet_doc is not None:
            raise TaxonomyError("triplet payload only allowed at level 5", node_id)
        triplet = None
        if triplet_doc is not None:
            if not isinstance(triplet_doc, dict):
                raise TaxonomyError("triplet must be an object", node_id)
            try:
                triplet = ContextTriplet(
                    event=str(triplet_doc["event"]),
                    scene=str(triplet_doc["scene"]),
                    attribute=str(triplet_doc["attribute"]),
                    anomaly=bool(triplet_doc["anomaly"]),
                    leaf_id=node_id,
                )
            except KeyError as exc:
                raise TaxonomyError(f"triplet missing field {exc}", node_id) from None
            if not triplet.event:
                raise TaxonomyError("triplet event must be non-empty", node_id)
        nodes[node_id] = TaxonomyNode(node_id, label, level, parent, triplet=triplet)

    roots = [n for n in nodes.values() if n.level == 0]
    if len(roots) != 1:
        raise TaxonomyError(f"expected exactly one level-0 root, found {len(roots)}")
    root = roots[0]

    for node in nodes.values():
        if node.parent is None:
            continue
        parent = nodes.get(node.parent)
        if parent is None:
            raise TaxonomyError(f"parent {node.parent!r} does not exist", node.id)
        if node.level != parent.level + 1:
            raise TaxonomyError(
                f"level skip: level {node.level} under parent at level {parent.level}",
                node.id,
            )
        parent.children.append(node.id)

    # Parent chains with strictly decreasing levels cannot cycle; walking
    # each chain to the root still guards against inconsistent input.
    for node in nodes.values():
        seen = set()
        cursor = node
        while cursor.parent is not None:
            if cursor.id in seen:
                raise TaxonomyError("cycle detected", node.id)
            seen.add(cursor.id)
            cursor = nodes[cursor.parent]
        if cursor.id != root.id:
            raise TaxonomyError("node not reachable from the root", node.id)

    states = sorted(nodes[i].label for i in root.children)
    if states != sorted([STATE_ANOMALY, STATE_NORMALITY]):
        raise TaxonomyError(
            f"level-1 labels must be exactly {STATE_ANOMALY!r} and {STATE_NORMALITY!r}, got {states}"
        )

    # Childless state nodes are legal empty branches; only nodes below the
    # states are padded (or rejected) when they stop short of leaf depth.
    shallow = [n.id for n in nodes.values() if n.is_leaf and 2 <= n.level < LEAF_LEVEL]
    for node_id in sorted(shallow):
        if not pad_shallow_leaves:
            raise TaxonomyError(f"leaf above level {LEAF_LEVEL}", node_id)
        _pad_to_leaf_level(nodes, node_id)

    h = Hierarchy(nodes, root.id)
    if h.max_leaf_depth != LEAF_LEVEL:
        raise TaxonomyError("taxonomy has no triplet leaves at level 5")

    for leaf_id in h.leaves():
        node = nodes[leaf_id]
        if node.triplet is None:
            raise TaxonomyError("leaf at level 5 without triplet payload", leaf_id)
        expected = h.state_of(leaf_id) == BRANCH_ANOMALY
        if node.triplet.anomaly != expected:
            raise TaxonomyError(
                f"triplet anomaly flag {node.triplet.anomaly} contradicts branch", leaf_id
            )
    seen_triplets: dict[tuple[str, str, str, str], str] = {}
    for leaf_id in h.leaves():
        t = nodes[leaf_id].triplet
        key = Hierarchy._triplet_key(t, h.state_of(leaf_id) or "")
        if key in seen_triplets:
            raise TaxonomyError(
                f"duplicate triplet within branch (also at {seen_triplets[key]!r})", leaf_id
            )
        seen_triplets[key] = leaf_id
    return h


def _pad_to_leaf_level(nodes: dict[str, TaxonomyNode], node_id: str) -> None:
    """Extend a shallow leaf with a single-child chain down to level 5."""
    node = nodes[node_id]
    state_cursor = node
    while state_cursor.level > 1:
        state_cursor = nodes[state_cursor.parent]  # type: ignore[index]
    anomaly = state_cursor.label == STATE_ANOMALY
    current = node
    while current.level < LEAF_LEVEL:
        child_id = f"{current.id}::pad{current.level + 1}"
        if child_id in nodes:
            raise TaxonomyError("padding id collision", child_id)
        child = TaxonomyNode(child_id, current.label, current.level + 1, current.id)
        nodes[child_id] = child
        current.children.append(child_id)
        current = child
    current.triplet = ContextTriplet(
        event=node.label, scene="", attribute="", anomaly=anomaly, leaf_id=current.id
    )


def serialize(h: Hierarchy) -> dict:
    """Document form of a hierarchy; inverse of :func:`load_taxonomy`."""
    entries = []
    for node in h.nodes.values():
        entry: dict = {"id": node.id, "label": node.label, "level": node.level}
        if node.parent is not None:
            entry["parent"] = node.parent
        if node.triplet is not None:
            entry["triplet"] = {
                "event": node.triplet.event,
                "scene": node.triplet.scene,
                "attribute": node.triplet.attribute,
                "anomaly": node.triplet.anomaly,
            }
        entries.append(entry)
    return {"nodes": entries}
