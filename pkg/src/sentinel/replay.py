"""Deterministic offline runs: train on history, stream the rest.

A replay splits a labeled event file at a training boundary, fits the model
on the training windows, warms the adaptive threshold on the tail of the
training phase, then streams the remaining events through a
:class:`DetectionEngine`. When ground truth is available every flagged
alert is labeled immediately (the perfect-analyst setting), driving the
feedback retraining path exactly as a triage team would.

Identical (events, labels, seed, config) inputs produce byte-identical
artifacts: alert log, tau trace, score log, and checkpoint.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import checkpoint_bytes_digest, save_checkpoint
from .detector import Alert, DetectionEngine, EngineConfig
from .events import NormalizedEvent
from .evaluation import MetricsReport, TruthIndex, compute_metrics
from .graphs import FeatureSpec, build_snapshot, merge_history
from .gnn import AdamState, init_params, train_on_snapshots
from .gnn.forward import ATTENTION_SOFTMAX
from .detector import score_snapshot
from .synth import LabeledStream

DAY_MS = 86_400_000


@dataclass
class ReplayConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    train_days: float = 5.0
    warmup_windows: int = 48
    attention_mode: str = ATTENTION_SOFTMAX


@dataclass
class ReplayResult:
    alerts: list[Alert]
    tau_trace: list[tuple[int, float, int]]
    scores: list[dict]
    metrics: Optional[MetricsReport]
    engine: DetectionEngine
    train_windows: int
    stream_windows: int
    runtime_s: float
    checkpoint_digest: Optional[str] = None


def vocab_from_events(events: Sequence[NormalizedEvent]) -> FeatureSpec:
    roles = sorted({e.role for e in events})
    actions = sorted({e.action for e in events} | {"assume"})
    return FeatureSpec(role_vocab=tuple(roles), action_vocab=tuple(actions), frozen=True)


def _window_groups(events: Sequence[NormalizedEvent], window_ms: int):
    groups: list[list[NormalizedEvent]] = []
    current: list[NormalizedEvent] = []
    current_idx = None
    for event in events:
        idx = event.timestamp // window_ms
        if current_idx is None:
            current_idx = idx
        if idx != current_idx:
            groups.append(current)
            current = []
            current_idx = idx
        current.append(event)
    if current:
        groups.append(current)
    return groups


def replay(
    labeled: LabeledStream,
    config: ReplayConfig,
    out_dir: Optional[str | Path] = None,
) -> ReplayResult:
    """Run the full train-then-stream pipeline on one labeled stream."""
    started = time.monotonic()
    events = labeled.events
    if not events:
        raise ValueError("empty event stream")
    engine_cfg = config.engine
    window_ms = engine_cfg.window_ms
    spec = vocab_from_events(events)

    first_ts = events[0].timestamp
    train_until = (first_ts // window_ms) * window_ms + int(config.train_days * DAY_MS)
    train_events = [e for e in events if e.timestamp < train_until]
    stream_events = [e for e in events if e.timestamp >= train_until]

    # phase 1: window the history, fit the model
    history: dict = {}
    train_snapshots = []
    for group in _window_groups(train_events, window_ms):
        start = (group[0].timestamp // window_ms) * window_ms
        group = sorted(group, key=lambda e: e.sort_key())
        snapshot = build_snapshot(
            group, (start, start + window_ms), spec,
            history=history, half_life=engine_cfg.half_life_ms,
        )
        history = merge_history(history, snapshot, half_life=engine_cfg.half_life_ms)
        train_snapshots.append(snapshot)

    dims = (spec.d, *engine_cfg.hidden_dims)
    params = init_params(dims, engine_cfg.seed)
    adam = AdamState.fresh(params)
    if train_snapshots and engine_cfg.initial_epochs > 0:
        params, adam, _ = train_on_snapshots(
            params, train_snapshots,
            epochs=engine_cfg.initial_epochs, lr=engine_cfg.lr,
            seed=engine_cfg.seed, k_negatives=engine_cfg.k_negatives,
            mode=config.attention_mode, adam_state=adam,
            bidirectional=engine_cfg.bidirectional,
            weighted_logits=engine_cfg.weighted_logits,
        )

    # phase 1.5: warm the threshold on the training tail (presumed benign)
    engine = DetectionEngine(
        engine_cfg, spec, params=params, adam=adam, attention_mode=config.attention_mode
    )
    engine.history = history
    for snapshot in train_snapshots[-config.warmup_windows:]:
        records = score_snapshot(
            snapshot, params,
            mode=config.attention_mode,
            bidirectional=engine_cfg.bidirectional,
            weighted_logits=engine_cfg.weighted_logits,
            k_probes=engine_cfg.k_probes if engine_cfg.probes_enabled else 0,
            seed=engine_cfg.seed,
        )
        for record in records:
            engine.threshold.observe(record.S)
    from .detector import update_threshold

    update_threshold(engine.threshold)

    # phase 2: stream with immediate oracle labeling of every flagged alert
    truth = TruthIndex.from_stream(labeled) if labeled.scenario_tags else None
    scores: list[dict] = []

    def handle_results():
        for result in engine.drain_results():
            flagged_ids = {a.id for a in result.alerts}
            for record in result.records:
                scores.append(
                    {
                        "edge": record.edge.as_dict(),
                        "S": record.S,
                        "y_hat": record.y_hat,
                        "origin": record.origin,
                        "window_end": record.window_end,
                        "flagged": False,
                    }
                )
            for alert in result.alerts:
                for row in scores[::-1]:
                    if (
                        row["window_end"] == alert.record.window_end
                        and row["edge"] == alert.record.edge.as_dict()
                    ):
                        row["flagged"] = True
                        break
            if truth is not None:
                for alert in result.alerts:
                    verdict = (
                        "malicious"
                        if truth.involves(alert, window_ms=window_ms)
                        else "benign"
                    )
                    engine.feedback(alert.id, verdict, now=alert.created_at)
                    if verdict == "malicious":
                        alert.scenario_tag = truth.scenario_for(alert, window_ms=window_ms)

    for group in _window_groups(stream_events, window_ms):
        engine.submit(group)
        handle_results()
    engine.flush()
    handle_results()

    alerts = sorted(engine.alerts.values(), key=lambda a: (a.created_at, a.id))
    metrics = None
    if truth is not None:
        metrics = compute_metrics(
            alerts,
            truth,
            scored_records=scores,
            matching_window_ms=window_ms,
            fingerprint=labeled.fingerprint(),
        )

    result = ReplayResult(
        alerts=alerts,
        tau_trace=list(engine.tau_trace),
        scores=scores,
        metrics=metrics,
        engine=engine,
        train_windows=len(train_snapshots),
        stream_windows=engine.windows_processed,
        runtime_s=time.monotonic() - started,
    )
    if out_dir is not None:
        result.checkpoint_digest = write_artifacts(result, labeled, config, Path(out_dir))
    return result


def write_artifacts(
    result: ReplayResult,
    labeled: LabeledStream,
    config: ReplayConfig,
    out_dir: Path,
) -> str:
    """Alert log, tau trace, score log, metrics, checkpoint, run manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "alerts.jsonl", "w", encoding="utf-8") as fh:
        for alert in result.alerts:
            fh.write(json.dumps(alert.to_json_dict(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")

    with open(out_dir / "tau_trace.csv", "w", encoding="utf-8") as fh:
        fh.write("window_end,tau,benign_window_size\n")
        for window_end, tau, size in result.tau_trace:
            fh.write(f"{window_end},{tau!r},{size}\n")

    with open(out_dir / "scores.jsonl", "w", encoding="utf-8") as fh:
        for row in result.scores:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            fh.write("\n")

    engine = result.engine
    aux = {
        "tau": engine.threshold.tau,
        "quantile_q": engine.threshold.quantile_q,
        "benign_scores": [float(s) for s in engine.threshold.benign_scores],
        "buffer": [
            {
                "edge": s.edge.as_dict(),
                "label": s.label,
                "weight": s.weight,
                "confirmed_at": s.confirmed_at,
            }
            for s in engine.buffer.samples
        ],
        "model_version": engine.model_version,
        "role_vocab": list(engine.spec.role_vocab),
        "action_vocab": list(engine.spec.action_vocab),
    }
    ckpt_path = out_dir / "checkpoint.bin"
    save_checkpoint(ckpt_path, engine.params, engine.adam, aux)
    digest = checkpoint_bytes_digest(ckpt_path)

    if result.metrics is not None:
        (out_dir / "metrics.json").write_text(result.metrics.to_json())
        (out_dir / "metrics.csv").write_text(result.metrics.to_csv())

    meta = {
        "fingerprint": labeled.fingerprint(),
        "events": len(labeled.events),
        "malicious": len(labeled.scenario_tags),
        "train_windows": result.train_windows,
        "stream_windows": result.stream_windows,
        "checkpoint_sha256": digest,
        "engine": {
            "window_ms": config.engine.window_ms,
            "seed": config.engine.seed,
            "strict_paper_mode": config.engine.strict_paper_mode,
            "quantile_q": config.engine.quantile_q,
        },
        "train_days": config.train_days,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2))
    return digest
