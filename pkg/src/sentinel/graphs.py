"""Windowed event streams to heterogeneous graph snapshots.

Each window of normalized events becomes an immutable snapshot: typed nodes
(users, roles, resources), directed weighted edges, and a node feature
matrix. Edge weights combine interaction frequency with exponential recency
decay; user features carry behavioral state (role mix, access entropy,
rate, privilege) merged from a rolling per-user history.

Every function here is pure and deterministic: identical inputs produce
byte-identical snapshots, including node ordering.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    EmptyHistogram,
    InvalidArgument,
    UnknownAction,
    UnknownRole,
    WindowMismatch,
)
from .events import NormalizedEvent

DEFAULT_HALF_LIFE_MS = 6 * 3600 * 1000
DEFAULT_WINDOW_MS = 15 * 60 * 1000

ASSUME_ACTION = "assume"


class NodeKind(Enum):
    USER = "user"
    ROLE = "role"
    RESOURCE = "resource"

    @property
    def rank(self) -> int:
        return _KIND_RANK[self]


_KIND_RANK = {NodeKind.USER: 0, NodeKind.ROLE: 1, NodeKind.RESOURCE: 2}


@dataclass(frozen=True)
class EntityId:
    """A typed node identity; equality is exact (kind, name) match."""

    kind: NodeKind
    name: str

    def sort_key(self):
        return (self.kind.rank, self.name)

    def as_tuple(self):
        return (self.kind.value, self.name)


@dataclass(frozen=True)
class AccessEdge:
    """One aggregated directed interaction inside a snapshot.

    ``src``/``dst`` index into the owning snapshot's node table. Direction
    encodes actor-to-target: User->Role for role usage, actor->Resource for
    access actions.
    """

    src: int
    dst: int
    action: str
    last_seen: int
    count_in_window: int
    weight: float

    def key(self):
        return (self.src, self.dst, self.action)


@dataclass(frozen=True)
class FeatureSpec:
    """Node feature layout.

    Layout, by offset:
      [0:3)            node-type one-hot (user, role, resource)
      [3:3+R)          role-usage proportions over ``role_vocab`` (users only;
                       exactly one-hot for single-role users)
      [3+R]            access entropy in bits
      [3+R+1]          log1p of merged access count
      [3+R+2]          mean privilege level (users only)

    so d == 3 + len(role_vocab) + 3. Vocabularies are deduplicated and
    sorted for determinism. When ``frozen`` is set, unseen roles/actions
    raise instead of extending the vocabulary.
    """

    role_vocab: tuple[str, ...]
    action_vocab: tuple[str, ...]
    frozen: bool = False

    def __post_init__(self):
        object.__setattr__(self, "role_vocab", tuple(sorted(set(self.role_vocab))))
        object.__setattr__(self, "action_vocab", tuple(sorted(set(self.action_vocab))))

    @property
    def d(self) -> int:
        return 3 + len(self.role_vocab) + 3

    def role_index(self, role: str) -> int:
        try:
            return self.role_vocab.index(role)
        except ValueError:
            raise UnknownRole(role)

    def extended(self, roles: Iterable[str], actions: Iterable[str]) -> "FeatureSpec":
        return FeatureSpec(
            role_vocab=tuple(self.role_vocab) + tuple(roles),
            action_vocab=tuple(self.action_vocab) + tuple(actions),
            frozen=self.frozen,
        )


@dataclass
class UserHistory:
    """Decayed per-user behavioral counters carried across windows."""

    action_counts: dict = field(default_factory=dict)
    role_counts: dict = field(default_factory=dict)
    priv_weighted: float = 0.0
    total: float = 0.0

    def decayed(self, factor: float) -> "UserHistory":
        prune = 1e-12
        return UserHistory(
            action_counts={k: v * factor for k, v in self.action_counts.items() if v * factor > prune},
            role_counts={k: v * factor for k, v in self.role_counts.items() if v * factor > prune},
            priv_weighted=self.priv_weighted * factor,
            total=self.total * factor,
        )

    def added(self, other: "UserHistory") -> "UserHistory":
        merged_actions = dict(self.action_counts)
        for k, v in other.action_counts.items():
            merged_actions[k] = merged_actions.get(k, 0.0) + v
        merged_roles = dict(self.role_counts)
        for k, v in other.role_counts.items():
            merged_roles[k] = merged_roles.get(k, 0.0) + v
        return UserHistory(
            action_counts=merged_actions,
            role_counts=merged_roles,
            priv_weighted=self.priv_weighted + other.priv_weighted,
            total=self.total + other.total,
        )


@dataclass(frozen=True)
class GraphSnapshot:
    """G_t for one window: nodes, features, weighted edges.

    Immutable once built; incremental updates produce new snapshots.
    ``user_stats`` holds the raw in-window per-user counters consumed by
    :func:`merge_history`.
    """

    window_start: int
    window_end: int
    nodes: tuple[EntityId, ...]
    features: np.ndarray
    edges: tuple[AccessEdge, ...]
    spec: FeatureSpec
    labels: Optional[tuple[int, ...]] = None
    user_stats: Mapping[str, UserHistory] = field(default_factory=dict)

    def node_index(self) -> dict[EntityId, int]:
        return {node: i for i, node in enumerate(self.nodes)}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def compute_edge_weight(count_in_window: int, last_seen: int, now: int, half_life: int) -> float:
    """Frequency-recency weight: count * 2^(-(now - last_seen) / half_life)."""
    if count_in_window < 1:
        raise InvalidArgument("count_in_window must be >= 1")
    if now < last_seen:
        raise InvalidArgument("now must be >= last_seen")
    if half_life <= 0:
        raise InvalidArgument("half_life must be > 0")
    return count_in_window * 2.0 ** (-(now - last_seen) / half_life)


def compute_access_entropy(action_histogram: Mapping[str, float]) -> float:
    """Shannon entropy in bits over an action count histogram.

    0*log(0) is taken as 0; range is [0, log2(k)] for k nonzero actions.
    """
    total = 0.0
    for count in action_histogram.values():
        if count < 0:
            raise InvalidArgument("histogram counts must be >= 0")
        total += count
    if total == 0:
        raise EmptyHistogram("all counts are zero")
    entropy = 0.0
    for count in action_histogram.values():
        if count > 0:
            p = count / total
            entropy -= p * math.log2(p)
    return entropy


def build_snapshot(
    events: Sequence[NormalizedEvent],
    window: tuple[int, int],
    spec: FeatureSpec,
    history: Optional[Mapping[str, UserHistory]] = None,
    half_life: int = DEFAULT_HALF_LIFE_MS,
) -> GraphSnapshot:
    """Construct one graph snapshot from an in-window, time-sorted event run.

    Each event induces exactly two edge increments: User->Role (action
    ``assume``) and User->Resource (the event's action). Repeats of the same
    (src, dst, action) aggregate into ``count_in_window`` with the latest
    ``last_seen``; weights are evaluated at ``now = window_end``.

    User feature rows blend the in-window counters with ``history`` decayed
    by one window span, exactly the state :func:`merge_history` would
    produce, so features and carried state never diverge.
    """
    start, end = window
    if start >= end:
        raise InvalidArgument("window_start must precede window_end")

    users: dict[str, UserHistory] = {}
    roles: set[str] = set()
    resources: set[str] = set()
    prev_ts = None
    for event in events:
        if not (start <= event.timestamp < end):
            raise WindowMismatch(f"event at {event.timestamp} outside [{start}, {end})")
        if prev_ts is not None and event.timestamp < prev_ts:
            raise InvalidArgument("events must be time-sorted")
        prev_ts = event.timestamp
        roles.add(event.role)
        resources.add(event.resource)
        stats = users.setdefault(event.user_id, UserHistory())
        stats.action_counts[event.action] = stats.action_counts.get(event.action, 0) + 1
        stats.role_counts[event.role] = stats.role_counts.get(event.role, 0) + 1
        stats.priv_weighted += event.privilege_level
        stats.total += 1

    new_roles = sorted(roles - set(spec.role_vocab))
    seen_actions = {e.action for e in events}
    new_actions = sorted(seen_actions - set(spec.action_vocab))
    if spec.frozen:
        if new_roles:
            raise UnknownRole(", ".join(new_roles))
        if new_actions:
            raise UnknownAction(", ".join(new_actions))
    elif new_roles or new_actions:
        spec = spec.extended(new_roles, new_actions)

    nodes = sorted(
        [EntityId(NodeKind.USER, name) for name in users]
        + [EntityId(NodeKind.ROLE, name) for name in roles]
        + [EntityId(NodeKind.RESOURCE, name) for name in resources],
        key=EntityId.sort_key,
    )
    nodes = tuple(nodes)
    index = {node: i for i, node in enumerate(nodes)}

    counts: dict[tuple[int, int, str], int] = {}
    last_seen: dict[tuple[int, int, str], int] = {}
    for event in events:
        u = index[EntityId(NodeKind.USER, event.user_id)]
        r = index[EntityId(NodeKind.ROLE, event.role)]
        s = index[EntityId(NodeKind.RESOURCE, event.resource)]
        for key in ((u, r, ASSUME_ACTION), (u, s, event.action)):
            counts[key] = counts.get(key, 0) + 1
            last_seen[key] = max(last_seen.get(key, 0), event.timestamp)

    edges = tuple(
        AccessEdge(
            src=src,
            dst=dst,
            action=action,
            last_seen=last_seen[(src, dst, action)],
            count_in_window=count,
            weight=compute_edge_weight(count, last_seen[(src, dst, action)], end, half_life),
        )
        for (src, dst, action), count in sorted(counts.items())
    )

    decay = 2.0 ** (-(end - start) / half_life)
    merged: dict[str, UserHistory] = {}
    if history:
        for name, past in history.items():
            merged[name] = past.decayed(decay)
    for name, fresh in users.items():
        merged[name] = merged.get(name, UserHistory()).added(fresh)

    in_actions: dict[int, dict[str, int]] = {}
    for edge in edges:
        hist = in_actions.setdefault(edge.dst, {})
        hist[edge.action] = hist.get(edge.action, 0) + edge.count_in_window

    features = np.zeros((len(nodes), spec.d), dtype=np.float64)
    ent_off = 3 + len(spec.role_vocab)
    for i, node in enumerate(nodes):
        features[i, node.kind.rank] = 1.0
        if node.kind is NodeKind.USER:
            stats = merged[node.name]
            if stats.total > 0:
                for role, count in stats.role_counts.items():
                    features[i, 3 + spec.role_index(role)] = count / stats.total
                features[i, ent_off] = compute_access_entropy(stats.action_counts)
                features[i, ent_off + 1] = math.log1p(stats.total)
                features[i, ent_off + 2] = stats.priv_weighted / stats.total
        else:
            hist = in_actions.get(i, {})
            total = sum(hist.values())
            if total > 0:
                features[i, ent_off] = compute_access_entropy(hist)
                features[i, ent_off + 1] = math.log1p(total)

    return GraphSnapshot(
        window_start=start,
        window_end=end,
        nodes=nodes,
        features=features,
        edges=edges,
        spec=spec,
        user_stats={name: users[name] for name in sorted(users)},
    )


def merge_history(
    history: Optional[Mapping[str, UserHistory]],
    snapshot: GraphSnapshot,
    half_life: int = DEFAULT_HALF_LIFE_MS,
) -> dict[str, UserHistory]:
    """Roll per-user counters forward one window with exponential decay."""
    decay = 2.0 ** (-(snapshot.window_end - snapshot.window_start) / half_life)
    merged: dict[str, UserHistory] = {}
    if history:
        for name, past in history.items():
            decayed = past.decayed(decay)
            if decayed.total > 0:
                merged[name] = decayed
    for name, fresh in snapshot.user_stats.items():
        merged[name] = merged.get(name, UserHistory()).added(fresh)
    return merged


def snapshot_to_json(snapshot: GraphSnapshot) -> str:
    """Debug dump used by golden tests and the UI graph inspector."""
    doc = {
        "window": {"start": snapshot.window_start, "end": snapshot.window_end},
        "nodes": [{"kind": n.kind.value, "name": n.name} for n in snapshot.nodes],
        "features": [[float(x) for x in row] for row in snapshot.features],
        "edges": [
            {
                "src": e.src,
                "dst": e.dst,
                "action": e.action,
                "last_seen": e.last_seen,
                "count": e.count_in_window,
                "weight": e.weight,
            }
            for e in snapshot.edges
        ],
        "spec": {
            "role_vocab": list(snapshot.spec.role_vocab),
            "action_vocab": list(snapshot.spec.action_vocab),
        },
        "labels": list(snapshot.labels) if snapshot.labels is not None else None,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def snapshot_from_json(text: str) -> GraphSnapshot:
    doc = json.loads(text)
    spec = FeatureSpec(
        role_vocab=tuple(doc["spec"]["role_vocab"]),
        action_vocab=tuple(doc["spec"]["action_vocab"]),
    )
    return GraphSnapshot(
        window_start=doc["window"]["start"],
        window_end=doc["window"]["end"],
        nodes=tuple(EntityId(NodeKind(n["kind"]), n["name"]) for n in doc["nodes"]),
        features=np.array(doc["features"], dtype=np.float64).reshape(len(doc["nodes"]), spec.d),
        edges=tuple(
            AccessEdge(
                src=e["src"],
                dst=e["dst"],
                action=e["action"],
                last_seen=e["last_seen"],
                count_in_window=e["count"],
                weight=e["weight"],
            )
            for e in doc["edges"]
        ),
        spec=spec,
        labels=tuple(doc["labels"]) if doc.get("labels") is not None else None,
    )
