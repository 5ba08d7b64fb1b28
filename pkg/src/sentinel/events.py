"""Audit-record parsing and normalization.

Provider-flavored IAM audit events (CloudTrail, Azure AD, GCP IAM, or the
generic JSONL flavor) are mapped onto one unified schema. Field mappings
live in ``mappings/provider_fields.json`` so operators can adjust them
without touching code.

All functions here are pure; the reader in :func:`read_jsonl_stream` is a
single-consumer lazy iterator.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from typing import IO, Iterable, Iterator, Optional

from .errors import InvalidArgument, InvalidTimestamp, MalformedJson, MissingField

VALID_RESULTS = ("success", "failure", "denied")
PROVIDERS = ("aws_cloudtrail", "azure_ad", "gcp_iam", "generic")

_MANDATORY = ("ts", "user", "role", "resource", "action", "result")


@dataclass(frozen=True)
class RawEvent:
    """One provider-flavored record: an opaque JSON payload plus its dialect."""

    provider: str
    payload: str


@dataclass(frozen=True)
class NormalizedEvent:
    """One IAM audit record in the unified schema.

    ``timestamp`` is epoch milliseconds UTC. Equality is full-field (the
    dedup contract); stream order is given by :meth:`sort_key`.
    """

    timestamp: int
    user_id: str
    role: str
    resource: str
    action: str
    result: str
    session_id: Optional[str] = None
    privilege_level: int = 0
    session_duration: Optional[float] = None

    def __post_init__(self):
        if self.timestamp <= 0:
            raise InvalidTimestamp(f"timestamp must be positive, got {self.timestamp}")
        for name in ("user_id", "role", "resource", "action"):
            if not getattr(self, name):
                raise MissingField(name)
        if self.result not in VALID_RESULTS:
            raise InvalidArgument(f"result must be one of {VALID_RESULTS}")
        if not 0 <= self.privilege_level <= 4:
            raise InvalidArgument("privilege_level outside [0, 4]")
        if self.session_duration is not None and self.session_duration < 0:
            raise InvalidArgument("session_duration must be >= 0")

    def sort_key(self):
        return (self.timestamp, self.user_id, self.resource, self.action)

    def to_generic(self) -> dict:
        """Serialize to the generic JSONL flavor (round-trips exactly)."""
        out = {
            "ts": self.timestamp,
            "user": self.user_id,
            "role": self.role,
            "resource": self.resource,
            "action": self.action,
            "result": self.result,
        }
        if self.session_id is not None:
            out["session"] = self.session_id
        if self.privilege_level:
            out["priv"] = self.privilege_level
        if self.session_duration is not None:
            out["dur_s"] = self.session_duration
        return out

    def to_json_line(self) -> str:
        return json.dumps(self.to_generic(), sort_keys=True, separators=(",", ":"))


_mapping_cache: dict | None = None


def provider_mappings() -> dict:
    """Load the machine-readable provider field-mapping table."""
    global _mapping_cache
    if _mapping_cache is None:
        text = resources.files("sentinel").joinpath("mappings/provider_fields.json").read_text()
        _mapping_cache = json.loads(text)
    return _mapping_cache


_INDEX_RE = re.compile(r"^(.*)\[(\d+)\]$")


def _resolve_path(obj, path: str):
    """Walk a dotted path with optional [n] list indices; None when absent."""
    cur = obj
    for part in path.split("."):
        idx = None
        m = _INDEX_RE.match(part)
        if m:
            part, idx = m.group(1), int(m.group(2))
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
        if idx is not None:
            if not isinstance(cur, list) or idx >= len(cur):
                return None
            cur = cur[idx]
    return cur


def parse_timestamp_ms(value) -> int:
    """Accept RFC3339 text or an epoch-ms integer; return epoch ms UTC.

    Sub-millisecond precision is discarded. Raises InvalidTimestamp on
    unparseable or non-positive values.
    """
    if isinstance(value, bool):
        raise InvalidTimestamp(f"not a timestamp: {value!r}")
    if isinstance(value, (int, float)):
        ms = int(value)
    elif isinstance(value, str):
        text = value.strip()
        if text.isdigit():
            ms = int(text)
        else:
            try:
                if text.endswith(("Z", "z")):
                    text = text[:-1] + "+00:00"
                dt = datetime.fromisoformat(text)
            except ValueError as exc:
                raise InvalidTimestamp(f"unparseable time: {value!r}") from exc
            if dt.tzinfo is None:
                dt = dt.replace(tzinfo=timezone.utc)
            ms = int(dt.timestamp() * 1000)
    else:
        raise InvalidTimestamp(f"not a timestamp: {value!r}")
    if ms <= 0:
        raise InvalidTimestamp(f"non-positive time: {value!r}")
    return ms


def _apply_result_rule(rule: dict, obj: dict):
    kind = rule["kind"]
    if kind == "direct":
        return obj.get("result")
    if kind == "error_code_absent":
        return rule["absent"] if _resolve_path(obj, rule["path"]) is None else rule["present"]
    if kind == "value_map":
        raw = _resolve_path(obj, rule["path"])
        if raw is None:
            return None
        return rule["map"].get(str(raw), rule["default"])
    if kind == "granted_flag":
        raw = _resolve_path(obj, rule["path"])
        if raw is None:
            return rule["absent"]
        return rule["true"] if raw else rule["false"]
    raise MalformedJson(f"unknown result rule {kind!r} in mapping file")


def parse_event(raw: RawEvent) -> NormalizedEvent:
    """Map one provider record onto the unified schema.

    Unknown extra fields are ignored. Raises MalformedJson, MissingField,
    or InvalidTimestamp.
    """
    try:
        obj = json.loads(raw.payload)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(obj, dict):
        raise MalformedJson("payload is not a JSON object")

    mapping = provider_mappings().get(raw.provider)
    if mapping is None:
        raise MissingField(f"provider:{raw.provider}")

    fields = {}
    for generic_name, path in mapping["fields"].items():
        fields[generic_name] = _resolve_path(obj, path)
    fields["result"] = _apply_result_rule(mapping["result_rule"], obj)

    for name in _MANDATORY:
        if name == "result":
            continue
        if fields.get(name) in (None, ""):
            raise MissingField(name)
    result = fields.get("result")
    if result not in VALID_RESULTS:
        raise MissingField("result")

    priv = fields.get("priv")
    if priv is None:
        priv = 0
    try:
        priv = int(priv)
    except (TypeError, ValueError):
        raise MissingField("priv")
    if not 0 <= priv <= 4:
        raise MissingField("priv")

    dur = fields.get("dur_s")
    if dur is not None:
        try:
            dur = float(dur)
        except (TypeError, ValueError):
            raise MissingField("dur_s")

    session = fields.get("session")
    if session is not None:
        session = str(session)

    return NormalizedEvent(
        timestamp=parse_timestamp_ms(fields["ts"]),
        user_id=str(fields["user"]),
        role=str(fields["role"]),
        resource=str(fields["resource"]),
        action=str(fields["action"]),
        result=result,
        session_id=session,
        privilege_level=priv,
        session_duration=dur,
    )


def _dedup_key(e: NormalizedEvent):
    return (
        e.timestamp, e.user_id, e.role, e.resource, e.action, e.result,
        e.session_id, e.privilege_level, e.session_duration,
    )


def normalize_batch(raws: Iterable[RawEvent]) -> tuple[list[NormalizedEvent], int]:
    """Parse, deduplicate, and time-sort a batch.

    Parse failures are dropped, never raised: a stream must survive bad
    records. Returns (sorted unique events, rejection tally). Duplicates are
    full-field duplicates; providers disagree on event-ID semantics so no ID
    is trusted for dedup.
    """
    rejected = 0
    seen = set()
    out = []
    for raw in raws:
        if isinstance(raw, NormalizedEvent):
            event = raw
        else:
            try:
                event = parse_event(raw)
            except (MalformedJson, MissingField, InvalidTimestamp, InvalidArgument):
                rejected += 1
                continue
        key = _dedup_key(event)
        if key in seen:
            continue
        seen.add(key)
        out.append(event)
    out.sort(key=lambda e: e.sort_key())
    return out, rejected


class EventStreamReader:
    """Lazy single-consumer reader over newline-delimited records.

    Yields events in source order; per-line failures are dropped and counted
    on ``rejected``. Memory use is bounded by consumer pace.
    """

    def __init__(self, source: IO, provider: str = "generic"):
        self._source = source
        self._provider = provider
        self.rejected = 0
        self.lines = 0

    def __iter__(self) -> Iterator[NormalizedEvent]:
        for line in self._source:
            if isinstance(line, bytes):
                line = line.decode("utf-8", errors="replace")
            line = line.strip()
            if not line:
                continue
            self.lines += 1
            try:
                yield parse_event(RawEvent(self._provider, line))
            except (MalformedJson, MissingField, InvalidTimestamp, InvalidArgument):
                self.rejected += 1


def read_jsonl_stream(source: IO, provider: str = "generic") -> EventStreamReader:
    """Stream normalized events from a JSONL byte/text source."""
    return EventStreamReader(source, provider)
