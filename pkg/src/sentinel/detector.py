"""Streaming detection loop: score, flag, adapt, retrain.

Every observed edge in a window is scored by reconstruction error
S = |y_hat - y_observed| (1 - y_hat for observed edges); records above the
adaptive threshold tau become pending alerts, the rest feed a rolling
benign-score window whose upper quantile becomes the next tau. Analyst
labels accumulate in a bounded feedback buffer whose weighted samples drive
periodic retraining.

The engine is single-writer: one logical detection loop owns graph,
threshold, and buffer state. Callers serialize access (the HTTP layer holds
a lock); scoring reads a frozen ParamSet and retraining swaps in the next
version between windows.
"""

from __future__ import annotations

import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import AlreadyLabeled, NothingToTrainOn, UnknownAlert
from .events import NormalizedEvent
from .graphs import (
    DEFAULT_HALF_LIFE_MS,
    DEFAULT_WINDOW_MS,
    FeatureSpec,
    GraphSnapshot,
    build_snapshot,
    merge_history,
)
from .gnn import (
    AdamState,
    ParamSet,
    decode_pairs,
    encode,
    init_params,
    train_on_snapshots,
)
from .gnn.forward import ATTENTION_SOFTMAX, ATTENTION_UNIFORM, build_adjacency
from .rng import stream

log = logging.getLogger(__name__)

LABEL_BENIGN = "benign"
LABEL_MALICIOUS = "malicious"
STATUS_PENDING = "pending"

ORIGIN_OBSERVED = "observed"
ORIGIN_PROBE = "probe"

TAU_FLOOR = 0.05
TAU_CEIL = 0.999


@dataclass(frozen=True)
class EdgeRef:
    """Snapshot-independent edge identity: entity names plus action."""

    src_kind: str
    src_name: str
    dst_kind: str
    dst_name: str
    action: str

    def as_dict(self) -> dict:
        return {
            "src_kind": self.src_kind,
            "src": self.src_name,
            "dst_kind": self.dst_kind,
            "dst": self.dst_name,
            "action": self.action,
        }


@dataclass(frozen=True)
class AnomalyScoreRecord:
    edge: EdgeRef
    S: float
    y_hat: float
    y_observed: int
    window_end: int
    origin: str = ORIGIN_OBSERVED


@dataclass
class ThresholdState:
    """Adaptive flagging cutoff: an upper quantile of recent benign scores."""

    tau: float = 0.9
    quantile_q: float = 0.99
    benign_scores: deque = field(default_factory=lambda: deque(maxlen=10_000))

    def observe(self, score: float) -> None:
        self.benign_scores.append(float(score))


def update_threshold(state: ThresholdState) -> ThresholdState:
    """tau <- clamped empirical quantile (linear interpolation) of the
    benign window; an empty window leaves tau untouched."""
    if not state.benign_scores:
        return state
    tau = float(np.quantile(np.array(state.benign_scores), state.quantile_q, method="linear"))
    state.tau = min(max(tau, TAU_FLOOR), TAU_CEIL)
    return state


@dataclass
class FeedbackSample:
    edge: EdgeRef
    label: str
    weight: float
    confirmed_at: int

    @property
    def y(self) -> float:
        return 1.0 if self.label == LABEL_BENIGN else 0.0


@dataclass
class FeedbackBuffer:
    """Bounded store of confirmed samples; eviction is strictly oldest-first."""

    capacity: int = 5_000
    malicious_boost: float = 4.0
    recency_half_life_ms: int = DEFAULT_HALF_LIFE_MS
    samples: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def append(self, sample: FeedbackSample) -> None:
        self.samples.append(sample)
        while len(self.samples) > self.capacity:
            self.samples.pop(0)

    def resolve_rows(self, snapshot: GraphSnapshot) -> list[tuple[int, int, float, float]]:
        """Map stored samples onto a snapshot's node indices; samples whose
        endpoints are absent from the window contribute nothing."""
        from .graphs import EntityId, NodeKind

        index = snapshot.node_index()
        rows = []
        for sample in self.samples:
            src = EntityId(NodeKind(sample.edge.src_kind), sample.edge.src_name)
            dst = EntityId(NodeKind(sample.edge.dst_kind), sample.edge.dst_name)
            i = index.get(src)
            j = index.get(dst)
            if i is not None and j is not None:
                rows.append((i, j, sample.y, sample.weight))
        return rows


@dataclass
class Alert:
    id: str
    record: AnomalyScoreRecord
    tau_at_flag: float
    created_at: int
    status: str = STATUS_PENDING
    labeled_at: Optional[int] = None
    scenario_tag: Optional[str] = None

    def to_json_dict(self) -> dict:
        doc = {
            "id": self.id,
            "edge": self.record.edge.as_dict(),
            "S": self.record.S,
            "y_hat": self.record.y_hat,
            "origin": self.record.origin,
            "tau": self.tau_at_flag,
            "window_end": self.record.window_end,
            "created_at": self.created_at,
            "status": self.status,
        }
        if self.labeled_at is not None:
            doc["labeled_at"] = self.labeled_at
        if self.scenario_tag is not None:
            doc["scenario"] = self.scenario_tag
        return doc


def alert_id_for(edge: EdgeRef, window_end: int) -> str:
    text = "|".join(
        [edge.src_kind, edge.src_name, edge.dst_kind, edge.dst_name, edge.action, str(window_end)]
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def score_snapshot(
    snapshot: GraphSnapshot,
    params: ParamSet,
    mode: str = ATTENTION_SOFTMAX,
    bidirectional: bool = False,
    weighted_logits: bool = False,
    k_probes: int = 0,
    seed: int = 0,
) -> list[AnomalyScoreRecord]:
    """Reconstruction-error scores for every observed edge, plus optional
    seeded negative probes (k per node) surfacing expected-but-absent links.
    """
    adj = build_adjacency(snapshot, bidirectional=bidirectional, weighted_logits=weighted_logits)
    Z, _ = encode(snapshot, params, adj=adj, mode=mode)
    records: list[AnomalyScoreRecord] = []

    observed = [(edge.src, edge.dst) for edge in snapshot.edges]
    if observed:
        pairs = np.array(observed, dtype=np.int64)
        y_hat = decode_pairs(Z, pairs, params.W_o)
        for edge, prob in zip(snapshot.edges, y_hat):
            src = snapshot.nodes[edge.src]
            dst = snapshot.nodes[edge.dst]
            ref = EdgeRef(src.kind.value, src.name, dst.kind.value, dst.name, edge.action)
            records.append(
                AnomalyScoreRecord(
                    edge=ref, S=float(1.0 - prob), y_hat=float(prob),
                    y_observed=1, window_end=snapshot.window_end,
                )
            )

    if k_probes > 0 and snapshot.n_nodes >= 3:
        rng = stream(seed, "probes", snapshot.window_end)
        observed_set = {(e.src, e.dst) for e in snapshot.edges}
        probe_pairs = []
        n = snapshot.n_nodes
        for i in range(n):
            for _ in range(k_probes):
                j = int(rng.integers(0, n))
                attempts = 0
                while (j == i or (i, j) in observed_set) and attempts < 8:
                    j = int(rng.integers(0, n))
                    attempts += 1
                if j != i and (i, j) not in observed_set:
                    probe_pairs.append((i, j))
        if probe_pairs:
            pairs = np.array(probe_pairs, dtype=np.int64)
            y_hat = decode_pairs(Z, pairs, params.W_o)
            for (i, j), prob in zip(probe_pairs, y_hat):
                src = snapshot.nodes[i]
                dst = snapshot.nodes[j]
                ref = EdgeRef(src.kind.value, src.name, dst.kind.value, dst.name, "probe")
                records.append(
                    AnomalyScoreRecord(
                        edge=ref, S=float(prob), y_hat=float(prob),
                        y_observed=0, window_end=snapshot.window_end,
                        origin=ORIGIN_PROBE,
                    )
                )
    return records


def flag(records: Iterable[AnomalyScoreRecord], threshold: ThresholdState) -> list[Alert]:
    """Strictly-greater-than-tau flagging; sub-threshold scores are presumed
    benign and feed the threshold's rolling window."""
    alerts = []
    for record in records:
        if record.S > threshold.tau:
            alerts.append(
                Alert(
                    id=alert_id_for(record.edge, record.window_end),
                    record=record,
                    tau_at_flag=threshold.tau,
                    created_at=record.window_end,
                )
            )
        else:
            threshold.observe(record.S)
    return alerts


def record_feedback(
    buffer: FeedbackBuffer,
    alert: Alert,
    label: str,
    now: int,
    confirmed_at: Optional[int] = None,
) -> FeedbackBuffer:
    """Apply an analyst verdict: transition the alert, store the weighted
    sample. Recent malicious confirmations weigh heaviest:
    w = 1 + boost * 2^(-(now - confirmed_at) / half_life)."""
    if label not in (LABEL_BENIGN, LABEL_MALICIOUS):
        raise ValueError(f"label must be benign or malicious, got {label!r}")
    if alert.status != STATUS_PENDING:
        raise AlreadyLabeled(f"alert {alert.id} already {alert.status}")
    confirmed = now if confirmed_at is None else confirmed_at
    boost = buffer.malicious_boost if label == LABEL_MALICIOUS else 0.0
    weight = 1.0 + boost * 2.0 ** (-(now - confirmed) / buffer.recency_half_life_ms)
    alert.status = label
    alert.labeled_at = confirmed
    buffer.append(
        FeedbackSample(edge=alert.record.edge, label=label, weight=weight, confirmed_at=confirmed)
    )
    return buffer


def retrain(
    params: ParamSet,
    buffer: FeedbackBuffer,
    snapshots: Sequence[GraphSnapshot],
    epochs: int,
    lr: float,
    seed: int,
    adam_state: Optional[AdamState] = None,
    mode: str = ATTENTION_SOFTMAX,
    k_negatives: int = 1,
    bidirectional: bool = False,
    weighted_logits: bool = False,
) -> tuple[ParamSet, AdamState, list[float]]:
    """Adam epochs over fresh pairs from recent snapshots with buffer
    samples (their labels and weights) overriding matching pairs."""
    if len(buffer) == 0 and not snapshots:
        raise NothingToTrainOn("empty feedback buffer and no recent snapshots")
    return train_on_snapshots(
        params,
        snapshots,
        epochs=epochs,
        lr=lr,
        seed=seed,
        k_negatives=k_negatives,
        mode=mode,
        buffer_resolver=buffer.resolve_rows,
        adam_state=adam_state,
        bidirectional=bidirectional,
        weighted_logits=weighted_logits,
    )


@dataclass
class EngineConfig:
    """Knobs for the detection loop; defaults are the shipped behavior."""

    window_ms: int = DEFAULT_WINDOW_MS
    half_life_ms: int = DEFAULT_HALF_LIFE_MS
    hidden_dims: tuple[int, ...] = (32, 32)
    retrain_every_windows: int = 4
    feedback_retrain_threshold: int = 20
    quantile_q: float = 0.99
    tau_init: float = 0.9
    benign_window_capacity: int = 10_000
    buffer_capacity: int = 5_000
    malicious_weight_boost: float = 4.0
    feedback_half_life_ms: int = DEFAULT_HALF_LIFE_MS
    retrain_epochs: int = 2
    initial_epochs: int = 6
    lr: float = 0.02
    k_negatives: int = 1
    k_probes: int = 1
    recent_snapshot_count: int = 4
    strict_paper_mode: bool = True
    bidirectional: bool = False
    seed: int = 42

    @property
    def attention_mode(self) -> str:
        return ATTENTION_SOFTMAX

    @property
    def weighted_logits(self) -> bool:
        # recency-weighted attention logits are the documented extension;
        # strict mode keeps the attention computation feature-only
        return not self.strict_paper_mode

    @property
    def probes_enabled(self) -> bool:
        return not self.strict_paper_mode


@dataclass
class WindowResult:
    window_start: int
    window_end: int
    n_events: int
    records: list[AnomalyScoreRecord]
    alerts: list[Alert]
    tau_after: float
    retrained: bool


class DetectionEngine:
    """Event-time windowed detection with online threshold and retraining.

    Windows close when an event at or past window_end arrives (or on
    flush). Per-window failures are logged and skipped; the stream
    survives. All state mutation happens on the caller's thread.
    """

    def __init__(
        self,
        config: EngineConfig,
        spec: FeatureSpec,
        params: Optional[ParamSet] = None,
        adam: Optional[AdamState] = None,
        attention_mode: str = ATTENTION_SOFTMAX,
    ):
        self.config = config
        self.spec = replace(spec, frozen=True)
        dims = (self.spec.d, *config.hidden_dims)
        self.params = params if params is not None else init_params(dims, config.seed)
        self.adam = adam if adam is not None else AdamState.fresh(self.params)
        self.attention_mode = attention_mode
        self.threshold = ThresholdState(
            tau=config.tau_init,
            quantile_q=config.quantile_q,
            benign_scores=deque(maxlen=config.benign_window_capacity),
        )
        self.buffer = FeedbackBuffer(
            capacity=config.buffer_capacity,
            malicious_boost=config.malicious_weight_boost,
            recency_half_life_ms=config.feedback_half_life_ms,
        )
        self.history: dict = {}
        self.alerts: dict[str, Alert] = {}
        self.model_version = 0
        self.windows_processed = 0
        self.windows_since_retrain = 0
        self.feedback_since_retrain = 0
        self.last_retrain_at: Optional[int] = None
        self.recent_snapshots: deque = deque(maxlen=config.recent_snapshot_count)
        self.tau_trace: list[tuple[int, float, int]] = []
        self.results: list[WindowResult] = []
        self.latest_snapshot: Optional[GraphSnapshot] = None
        self.rejected_events = 0
        self.late_events = 0
        self._window_start: Optional[int] = None
        self._pending: list[NormalizedEvent] = []
        self._pending_keys: set = set()

    # -- ingestion ---------------------------------------------------------

    def _align(self, ts: int) -> int:
        return (ts // self.config.window_ms) * self.config.window_ms

    def submit(self, events: Sequence[NormalizedEvent]) -> dict:
        """Queue events; closes and processes windows as event time passes.

        Returns counts: accepted (new), duplicates (already seen in the
        current window), late (before the open window; dropped).
        """
        accepted = duplicates = late = 0
        for event in sorted(events, key=lambda e: e.sort_key()):
            if self._window_start is None:
                self._window_start = self._align(event.timestamp)
            window_end = self._window_start + self.config.window_ms
            if event.timestamp < self._window_start:
                late += 1
                self.late_events += 1
                continue
            if event.timestamp >= window_end:
                self._close_window()
                self._window_start = self._align(event.timestamp)
            key = (
                event.timestamp, event.user_id, event.role, event.resource,
                event.action, event.result, event.session_id,
                event.privilege_level, event.session_duration,
            )
            if key in self._pending_keys:
                duplicates += 1
                continue
            self._pending_keys.add(key)
            self._pending.append(event)
            accepted += 1
        return {"accepted": accepted, "duplicates": duplicates, "late": late}

    def flush(self) -> None:
        """Drain the currently open window (graceful shutdown)."""
        if self._pending:
            self._close_window()
        elif self._window_start is not None:
            self._window_start = None

    # -- the loop body -----------------------------------------------------

    def _close_window(self) -> None:
        events = sorted(self._pending, key=lambda e: e.sort_key())
        start = self._window_start
        end = start + self.config.window_ms
        self._pending = []
        self._pending_keys = set()
        self._window_start = None
        if not events:
            return
        try:
            self._process_window(events, start, end)
        except Exception:
            log.exception("window [%s, %s) failed; stream continues", start, end)

    def _process_window(self, events: list[NormalizedEvent], start: int, end: int) -> None:
        cfg = self.config
        snapshot = build_snapshot(
            events, (start, end), self.spec, history=self.history, half_life=cfg.half_life_ms
        )
        records = score_snapshot(
            snapshot,
            self.params,
            mode=self.attention_mode,
            bidirectional=cfg.bidirectional,
            weighted_logits=cfg.weighted_logits,
            k_probes=cfg.k_probes if cfg.probes_enabled else 0,
            seed=cfg.seed,
        )
        alerts = flag(records, self.threshold)
        for alert in alerts:
            self.alerts[alert.id] = alert
        update_threshold(self.threshold)
        self.tau_trace.append((end, self.threshold.tau, len(self.threshold.benign_scores)))
        self.history = merge_history(self.history, snapshot, half_life=cfg.half_life_ms)
        self.recent_snapshots.append(snapshot)
        self.latest_snapshot = snapshot
        self.windows_processed += 1
        self.windows_since_retrain += 1

        retrained = False
        if (
            self.windows_since_retrain >= cfg.retrain_every_windows
            or self.feedback_since_retrain >= cfg.feedback_retrain_threshold
        ):
            try:
                self.params, self.adam, _ = retrain(
                    self.params,
                    self.buffer,
                    list(self.recent_snapshots),
                    epochs=cfg.retrain_epochs,
                    lr=cfg.lr,
                    seed=cfg.seed,
                    adam_state=self.adam,
                    mode=self.attention_mode,
                    k_negatives=cfg.k_negatives,
                    bidirectional=cfg.bidirectional,
                    weighted_logits=cfg.weighted_logits,
                )
                self.model_version += 1
                self.last_retrain_at = end
                retrained = True
            except NothingToTrainOn:
                pass
            self.windows_since_retrain = 0
            self.feedback_since_retrain = 0

        self.results.append(
            WindowResult(
                window_start=start, window_end=end, n_events=len(events),
                records=records, alerts=alerts,
                tau_after=self.threshold.tau, retrained=retrained,
            )
        )

    # -- feedback ----------------------------------------------------------

    def feedback(self, alert_id: str, label: str, now: int,
                 confirmed_at: Optional[int] = None) -> float:
        alert = self.alerts.get(alert_id)
        if alert is None:
            raise UnknownAlert(alert_id)
        record_feedback(self.buffer, alert, label, now, confirmed_at)
        self.feedback_since_retrain += 1
        return self.buffer.samples[-1].weight

    def drain_results(self) -> list[WindowResult]:
        out = self.results
        self.results = []
        return out

    # -- observability -----------------------------------------------------

    def status(self) -> dict:
        return {
            "model_version": self.model_version,
            "params_step": self.params.version,
            "tau": self.threshold.tau,
            "benign_window_size": len(self.threshold.benign_scores),
            "buffer_size": len(self.buffer),
            "windows_processed": self.windows_processed,
            "alerts_total": len(self.alerts),
            "alerts_pending": sum(1 for a in self.alerts.values() if a.status == STATUS_PENDING),
            "rejected_events": self.rejected_events,
            "late_events": self.late_events,
            "last_retrain_at": self.last_retrain_at,
        }
