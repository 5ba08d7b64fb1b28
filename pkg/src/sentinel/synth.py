"""Deterministic synthetic IAM workload with labeled attack injection.

The baseline assigns each user 1-2 roles and each role a mostly-disjoint
resource territory (10% overlap by default); benign events never step
outside the assignment matrix, which is exactly what makes the injected
scenarios structurally anomalous. Service accounts get a deliberately
narrow, machine-regular baseline.

All randomness flows through named Philox streams keyed off the workload
seed, so a config generates byte-identical output on every platform and
injection never perturbs baseline draws.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .errors import InvalidConfig, MismatchedRun, OutOfRange, UnknownActor
from .events import NormalizedEvent
from .rng import stream

DAY_MS = 86_400_000

KIND_PRIVILEGE_ESCALATION = "privilege_escalation"
KIND_LATERAL_MOVEMENT = "lateral_movement"
KIND_SERVICE_ACCOUNT = "service_account_compromise"
SCENARIO_KINDS = (KIND_PRIVILEGE_ESCALATION, KIND_LATERAL_MOVEMENT, KIND_SERVICE_ACCOUNT)

# baseline action mix; "admin" marks privilege-4 operations
ACTIONS = ("read", "list", "write", "update", "delete")
ACTION_PRIV = {"read": 0, "list": 0, "write": 1, "update": 2, "delete": 3, "admin": 4}

WORKLOAD_EPOCH_MS = 1_735_689_600_000  # 2025-01-01T00:00:00Z


@dataclass(frozen=True)
class WorkloadConfig:
    """Workload shape; the full-scale figures are 500/60/300 over 30 days."""

    n_users: int = 500
    n_roles: int = 60
    n_resources: int = 300
    duration_days: float = 30.0
    events_per_user_day: float = 40.0
    diurnal_amplitude: float = 0.6
    role_overlap: float = 0.1
    service_account_fraction: float = 0.1
    failure_rate: float = 0.02
    start_ms: int = WORKLOAD_EPOCH_MS
    drift_day: Optional[float] = None
    drift_fraction: float = 0.3
    seed: int = 42

    def validate(self) -> None:
        if min(self.n_users, self.n_roles, self.n_resources) < 1:
            raise InvalidConfig("counts must be >= 1")
        if self.duration_days <= 0 or self.events_per_user_day <= 0:
            raise InvalidConfig("duration and event rate must be positive")
        if not 0 <= self.diurnal_amplitude < 1:
            raise InvalidConfig("diurnal amplitude must be in [0, 1)")

    @property
    def end_ms(self) -> int:
        return self.start_ms + int(self.duration_days * DAY_MS)


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    actor: str
    start: int
    intensity: int
    duration_ms: int = 2 * 3_600_000
    chain_length: int = 6
    burst_ms: int = 10 * 60_000
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise InvalidConfig(f"unknown scenario kind {self.kind!r}")
        if self.intensity < 1:
            raise InvalidConfig("intensity must be >= 1")


@dataclass
class LabeledStream:
    """Time-sorted events plus ground truth by position."""

    events: list[NormalizedEvent]
    scenario_tags: dict[int, str] = field(default_factory=dict)

    @property
    def malicious_event_ids(self) -> set[int]:
        return set(self.scenario_tags)

    def benign_events(self) -> list[NormalizedEvent]:
        tagged = self.scenario_tags
        return [e for i, e in enumerate(self.events) if i not in tagged]

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for event in self.events:
            digest.update(event.to_json_line().encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()


@dataclass(frozen=True)
class Assignment:
    """Derived role/resource structure of a workload (not serialized)."""

    user_roles: dict[str, tuple[str, ...]]
    role_resources: dict[str, tuple[str, ...]]
    service_accounts: frozenset[str]
    drifted_roles: dict[str, tuple[str, ...]]


def _user_name(i: int, is_service: bool) -> str:
    return f"svc{i:04d}" if is_service else f"u{i:04d}"


def derive_assignment(config: WorkloadConfig) -> Assignment:
    """Deterministic role territories and user-role assignments."""
    roles = [f"role{i:03d}" for i in range(config.n_roles)]
    resources = [f"res{i:04d}" for i in range(config.n_resources)]

    role_resources: dict[str, tuple[str, ...]] = {}
    per_role = max(1, config.n_resources // config.n_roles)
    rng = stream(config.seed, "territories")
    for idx, role in enumerate(roles):
        base = [resources[(idx * per_role + k) % config.n_resources] for k in range(per_role)]
        if config.role_overlap > 0 and rng.random() < config.role_overlap * 2:
            borrowed = resources[int(rng.integers(0, config.n_resources))]
            if borrowed not in base:
                base.append(borrowed)
        role_resources[role] = tuple(base)

    n_service = int(round(config.n_users * config.service_account_fraction))
    service = frozenset(_user_name(i, True) for i in range(n_service))

    user_roles: dict[str, tuple[str, ...]] = {}
    drifted: dict[str, tuple[str, ...]] = {}
    for i in range(config.n_users):
        is_service = i < n_service
        name = _user_name(i, is_service)
        rng = stream(config.seed, "user-roles", i)
        if is_service:
            assigned = (roles[int(rng.integers(0, config.n_roles))],)
        else:
            count = 1 + int(rng.random() < 0.4)
            picks = rng.choice(config.n_roles, size=count, replace=False)
            assigned = tuple(roles[int(p)] for p in sorted(picks))
        user_roles[name] = assigned
        if config.drift_day is not None and not is_service:
            if rng.random() < config.drift_fraction:
                current = set(assigned)
                candidates = [r for r in roles if r not in current]
                if candidates:
                    replacement = candidates[int(rng.integers(0, len(candidates)))]
                    shifted = list(assigned)
                    shifted[int(rng.integers(0, len(shifted)))] = replacement
                    drifted[name] = tuple(sorted(shifted))
    return Assignment(
        user_roles=user_roles,
        role_resources=role_resources,
        service_accounts=service,
        drifted_roles=drifted,
    )


def _role_action_probs(config: WorkloadConfig, role_idx: int):
    rng = stream(config.seed, "role-actions", role_idx)
    raw = rng.dirichlet([2.0, 1.5, 1.0, 0.7, 0.3])
    return raw


def _diurnal_ms(rng, amplitude: float) -> int:
    """Millisecond offset within a day, denser around 14:00 UTC."""
    while True:
        h = rng.random() * 24.0
        shape = 1.0 + amplitude * math.sin(2.0 * math.pi * (h - 8.0) / 24.0)
        if rng.random() * (1.0 + amplitude) <= shape:
            return int(h * 3_600_000)


def generate_baseline(config: WorkloadConfig) -> LabeledStream:
    """All-benign workload; deterministic per seed, byte for byte."""
    config.validate()
    assignment = derive_assignment(config)
    days = int(math.ceil(config.duration_days))
    events: list[NormalizedEvent] = []

    for i in range(config.n_users):
        is_service = _user_name(i, True) in assignment.service_accounts
        name = _user_name(i, is_service)
        roles_before = assignment.user_roles[name]
        roles_after = assignment.drifted_roles.get(name, roles_before)
        rng = stream(config.seed, "user-events", i)
        role_probs = None

        if is_service:
            period = int(rng.integers(20, 45)) * 60_000
            resources = assignment.role_resources[roles_before[0]][:3]
            t = config.start_ms + int(rng.integers(0, period))
            k = 0
            while t < config.end_ms:
                resource = resources[k % len(resources)]
                events.append(
                    NormalizedEvent(
                        timestamp=t,
                        user_id=name,
                        role=roles_before[0],
                        resource=resource,
                        action="read",
                        result="success",
                        session_id=f"{name}-session",
                        privilege_level=0,
                        session_duration=round(float(rng.uniform(0.2, 2.0)), 3),
                    )
                )
                # machine-regular cadence: ~1% jitter keeps CV well under 0.1
                t += period + int(rng.integers(-period // 100, period // 100 + 1))
                k += 1
            continue

        for day in range(days):
            day_start = config.start_ms + day * DAY_MS
            if day_start >= config.end_ms:
                break
            drifted = config.drift_day is not None and day >= config.drift_day
            roles = roles_after if drifted else roles_before
            n_events = int(rng.poisson(config.events_per_user_day))
            for k in range(n_events):
                ts = day_start + _diurnal_ms(rng, config.diurnal_amplitude)
                if ts >= config.end_ms:
                    continue
                role = roles[int(rng.integers(0, len(roles)))]
                territory = assignment.role_resources[role]
                resource = territory[int(rng.integers(0, len(territory)))]
                role_idx = int(role[4:])
                probs = _role_action_probs(config, role_idx)
                action = ACTIONS[int(rng.choice(len(ACTIONS), p=probs))]
                roll = rng.random()
                result = "success" if roll >= config.failure_rate else (
                    "failure" if roll < config.failure_rate / 2 else "denied"
                )
                events.append(
                    NormalizedEvent(
                        timestamp=ts,
                        user_id=name,
                        role=role,
                        resource=resource,
                        action=action,
                        result=result,
                        session_id=f"{name}-d{day}",
                        privilege_level=ACTION_PRIV[action],
                        session_duration=round(float(rng.lognormal(1.0, 0.8)), 3),
                    )
                )

    events.sort(key=lambda e: e.sort_key())
    return LabeledStream(events=events)


# -- injection -------------------------------------------------------------


def _observed_structure(events: Sequence[NormalizedEvent]):
    user_roles: dict[str, set] = {}
    role_resources: dict[str, set] = {}
    user_resources: dict[str, set] = {}
    for e in events:
        user_roles.setdefault(e.user_id, set()).add(e.role)
        role_resources.setdefault(e.role, set()).add(e.resource)
        user_resources.setdefault(e.user_id, set()).add(e.resource)
    return user_roles, role_resources, user_resources


def _merge(stream_: LabeledStream, injected: list[tuple[NormalizedEvent, str]]) -> LabeledStream:
    """Stable merge of tagged events into a stream; label-sound by
    construction: benign positions afterwards are exactly the original
    events."""
    tagged = [(e, stream_.scenario_tags.get(i)) for i, e in enumerate(stream_.events)]
    tagged.extend(injected)
    tagged.sort(key=lambda pair: pair[0].sort_key())
    events = [e for e, _ in tagged]
    tags = {i: tag for i, (_, tag) in enumerate(tagged) if tag is not None}
    return LabeledStream(events=events, scenario_tags=tags)


def _check_actor_and_start(stream_: LabeledStream, spec: ScenarioSpec, known_users) -> None:
    spec.validate()
    if spec.actor not in known_users:
        raise UnknownActor(spec.actor)
    if not stream_.events:
        raise OutOfRange("empty stream")
    lo = stream_.events[0].timestamp
    hi = stream_.events[-1].timestamp
    if not lo <= spec.start <= hi:
        raise OutOfRange(f"start {spec.start} outside stream range [{lo}, {hi}]")


def inject_privilege_escalation(stream_: LabeledStream, spec: ScenarioSpec) -> LabeledStream:
    """Actor assumes a never-assigned role and runs privilege-4 actions on
    that role's resources, spread over the scenario duration."""
    user_roles, role_resources, _ = _observed_structure(stream_.events)
    _check_actor_and_start(stream_, spec, user_roles)
    rng = stream(spec.seed, "inject-escalation", spec.start)
    foreign = sorted(set(role_resources) - user_roles[spec.actor])
    if not foreign:
        raise InvalidConfig("no unassigned role available for escalation")
    target_role = foreign[int(rng.integers(0, len(foreign)))]
    territory = sorted(role_resources[target_role])

    injected = []
    step = max(1, spec.duration_ms // spec.intensity)
    for k in range(spec.intensity):
        ts = spec.start + k * step + int(rng.integers(0, max(step // 2, 1)))
        action = "admin" if k % 2 == 0 else "delete"
        injected.append(
            (
                NormalizedEvent(
                    timestamp=ts,
                    user_id=spec.actor,
                    role=target_role,
                    resource=territory[k % len(territory)],
                    action=action,
                    result="success",
                    session_id=f"{spec.actor}-esc",
                    privilege_level=4,
                ),
                KIND_PRIVILEGE_ESCALATION,
            )
        )
    return _merge(stream_, injected)


def inject_lateral_movement(stream_: LabeledStream, spec: ScenarioSpec) -> LabeledStream:
    """Timed chain across resources belonging to at least three other
    roles' territories, inside one short burst."""
    user_roles, role_resources, user_resources = _observed_structure(stream_.events)
    _check_actor_and_start(stream_, spec, user_roles)
    rng = stream(spec.seed, "inject-lateral", spec.start)
    own_role = sorted(user_roles[spec.actor])[0]
    own_resources = user_resources[spec.actor]

    foreign_roles = sorted(r for r in role_resources if r not in user_roles[spec.actor])
    if len(foreign_roles) < 3:
        raise InvalidConfig("need at least 3 foreign role territories")
    order = rng.permutation(len(foreign_roles))
    chain: list[str] = []
    used_roles = []
    for idx in order:
        role = foreign_roles[int(idx)]
        fresh = sorted(set(role_resources[role]) - own_resources - set(chain))
        if not fresh:
            continue
        take = fresh[: max(1, spec.chain_length // 3)]
        chain.extend(take[:2])
        used_roles.append(role)
        if len(chain) >= spec.chain_length and len(used_roles) >= 3:
            break
    chain = chain[: spec.chain_length]
    if len(chain) < spec.chain_length or len(used_roles) < 3:
        raise InvalidConfig("could not assemble a cross-territory chain")

    injected = []
    step = max(1, spec.burst_ms // (len(chain) + 1))
    for k, resource in enumerate(chain):
        ts = spec.start + (k + 1) * step + int(rng.integers(0, max(step // 4, 1)))
        injected.append(
            (
                NormalizedEvent(
                    timestamp=ts,
                    user_id=spec.actor,
                    role=own_role,
                    resource=resource,
                    action="read" if k % 2 == 0 else "list",
                    result="success",
                    session_id=f"{spec.actor}-lat",
                    privilege_level=0,
                ),
                KIND_LATERAL_MOVEMENT,
            )
        )
    return _merge(stream_, injected)


def inject_service_account_compromise(stream_: LabeledStream, spec: ScenarioSpec) -> LabeledStream:
    """After takeover the account leaves its narrow baseline: resources it
    never touched, irregular timing, mixed actions."""
    user_roles, role_resources, user_resources = _observed_structure(stream_.events)
    _check_actor_and_start(stream_, spec, user_roles)
    if spec.intensity == 0:
        return stream_
    rng = stream(spec.seed, "inject-svc", spec.start)
    baseline = user_resources[spec.actor]
    own_role = sorted(user_roles[spec.actor])[0]
    outside = sorted({r for rs in role_resources.values() for r in rs} - baseline)
    if not outside:
        raise InvalidConfig("no resources outside the account baseline")

    injected = []
    t = float(spec.start)
    mean_gap = spec.duration_ms / max(spec.intensity, 1)
    for k in range(spec.intensity):
        # heavy-tailed gaps: coefficient of variation well above the
        # machine-regular baseline cadence
        t += rng.lognormal(math.log(max(mean_gap, 1.0)) - 0.5, 1.0)
        resource = outside[int(rng.integers(0, len(outside)))]
        action = ACTIONS[int(rng.integers(0, len(ACTIONS)))]
        injected.append(
            (
                NormalizedEvent(
                    timestamp=int(t),
                    user_id=spec.actor,
                    role=own_role,
                    resource=resource,
                    action=action,
                    result="success",
                    session_id=f"{spec.actor}-hijack",
                    privilege_level=ACTION_PRIV[action],
                ),
                KIND_SERVICE_ACCOUNT,
            )
        )
    return _merge(stream_, injected)


def inject(stream_: LabeledStream, spec: ScenarioSpec) -> LabeledStream:
    spec.validate()
    if spec.kind == KIND_PRIVILEGE_ESCALATION:
        return inject_privilege_escalation(stream_, spec)
    if spec.kind == KIND_LATERAL_MOVEMENT:
        return inject_lateral_movement(stream_, spec)
    return inject_service_account_compromise(stream_, spec)


# -- files -----------------------------------------------------------------


def write_labeled_jsonl(stream_: LabeledStream, out_dir: str | Path) -> tuple[Path, Path]:
    """events.jsonl (generic flavor) plus labels.jsonl sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    events_path = out_dir / "events.jsonl"
    labels_path = out_dir / "labels.jsonl"

    with open(events_path, "w", encoding="utf-8") as fh:
        for event in stream_.events:
            fh.write(event.to_json_line())
            fh.write("\n")

    with open(labels_path, "w", encoding="utf-8") as fh:
        header = {
            "type": "header",
            "fingerprint": stream_.fingerprint(),
            "events": len(stream_.events),
            "malicious": len(stream_.scenario_tags),
        }
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for index in sorted(stream_.scenario_tags):
            event = stream_.events[index]
            row = {
                "index": index,
                "scenario": stream_.scenario_tags[index],
                "ts": event.timestamp,
                "actor": event.user_id,
            }
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    return events_path, labels_path


def read_labeled_jsonl(out_dir: str | Path) -> LabeledStream:
    from .events import read_jsonl_stream

    out_dir = Path(out_dir)
    with open(out_dir / "events.jsonl", "rb") as fh:
        events = list(read_jsonl_stream(fh))
    tags: dict[int, str] = {}
    expected_fingerprint = None
    with open(out_dir / "labels.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc.get("type") == "header":
                expected_fingerprint = doc.get("fingerprint")
                continue
            tags[int(doc["index"])] = doc["scenario"]
    loaded = LabeledStream(events=events, scenario_tags=tags)
    if expected_fingerprint is not None and loaded.fingerprint() != expected_fingerprint:
        raise MismatchedRun("labels sidecar fingerprint does not match events file")
    return loaded


def load_labels_sidecar(path: str | Path) -> tuple[Optional[str], list[dict]]:
    """Sidecar rows without the events file: (fingerprint, label rows)."""
    rows = []
    fingerprint = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc.get("type") == "header":
                fingerprint = doc.get("fingerprint")
            else:
                rows.append(doc)
    return fingerprint, rows


# -- the frozen desk-scale dataset ------------------------------------------


def desk_scale_config(seed: int = 42, drift: bool = False) -> WorkloadConfig:
    """1/10 linear scale of the full experimental regime; CI-sized."""
    return WorkloadConfig(
        n_users=50,
        n_roles=10,
        n_resources=30,
        duration_days=7.0,
        events_per_user_day=40.0,
        seed=seed,
        drift_day=5.0 if drift else None,
    )


def make_desk_dataset(seed: int = 42, drift: bool = False) -> LabeledStream:
    """Frozen desk-scale dataset: benign baseline with ~2% malicious events
    injected into the final two days (the streamed evaluation phase)."""
    config = desk_scale_config(seed=seed, drift=drift)
    labeled = generate_baseline(config)
    users = sorted({e.user_id for e in labeled.events if not e.user_id.startswith("svc")})
    service = sorted({e.user_id for e in labeled.events if e.user_id.startswith("svc")})
    day5 = config.start_ms + 5 * DAY_MS
    pick = stream(seed, "scenario-actors")

    def actor_at(users_pool, k):
        return users_pool[int(pick.integers(0, len(users_pool)))] if users_pool else None

    scenarios: list[ScenarioSpec] = []
    for k in range(5):
        scenarios.append(
            ScenarioSpec(
                kind=KIND_PRIVILEGE_ESCALATION,
                actor=actor_at(users, k),
                start=day5 + int(pick.integers(0, int(1.6 * DAY_MS))),
                intensity=24,
                duration_ms=2 * 3_600_000,
                seed=seed + 100 + k,
            )
        )
    for k in range(8):
        scenarios.append(
            ScenarioSpec(
                kind=KIND_LATERAL_MOVEMENT,
                actor=actor_at(users, k),
                start=day5 + int(pick.integers(0, int(1.8 * DAY_MS))),
                intensity=6,
                chain_length=6,
                seed=seed + 200 + k,
            )
        )
    for k in range(3):
        scenarios.append(
            ScenarioSpec(
                kind=KIND_SERVICE_ACCOUNT,
                actor=actor_at(service, k),
                start=day5 + int(pick.integers(0, DAY_MS)),
                intensity=30,
                duration_ms=int(0.9 * DAY_MS),
                seed=seed + 300 + k,
            )
        )
    for spec in scenarios:
        labeled = inject(labeled, spec)
    return labeled
