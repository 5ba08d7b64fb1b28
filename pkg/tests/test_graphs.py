import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentinel.errors import EmptyHistogram, InvalidArgument, UnknownRole, WindowMismatch
from sentinel.events import NormalizedEvent
from sentinel.graphs import (
    DEFAULT_HALF_LIFE_MS,
    EntityId,
    FeatureSpec,
    NodeKind,
    UserHistory,
    build_snapshot,
    compute_access_entropy,
    compute_edge_weight,
    merge_history,
    snapshot_from_json,
    snapshot_to_json,
)

HL = 3_600_000  # 1h half-life keeps the arithmetic below readable


def ev(ts, user="u1", role="dev", resource="r1", action="read", priv=0):
    return NormalizedEvent(
        timestamp=ts, user_id=user, role=role, resource=resource,
        action=action, result="success", privilege_level=priv,
    )


SPEC = FeatureSpec(role_vocab=("dev", "ops"), action_vocab=("read", "write", "assume"))


class TestEdgeWeight:
    def test_zero_age(self):
        assert compute_edge_weight(5, 1000, 1000, HL) == pytest.approx(5.0)

    def test_one_half_life(self):
        assert compute_edge_weight(4, 0, HL, HL) == pytest.approx(2.0)

    def test_fractional_age(self):
        # 3 * 2^(-2.5) evaluated independently: 3 * 0.1767766952966369
        assert compute_edge_weight(3, 0, int(2.5 * HL), HL) == pytest.approx(
            0.5303300858899107, abs=1e-12
        )

    def test_invalid_arguments(self):
        with pytest.raises(InvalidArgument):
            compute_edge_weight(0, 0, 10, HL)
        with pytest.raises(InvalidArgument):
            compute_edge_weight(1, 10, 5, HL)
        with pytest.raises(InvalidArgument):
            compute_edge_weight(1, 0, 10, 0)

    @settings(max_examples=60)
    @given(
        count=st.integers(min_value=1, max_value=1000),
        age=st.integers(min_value=0, max_value=10 * HL),
    )
    def test_monotonicity(self, count, age):
        w = compute_edge_weight(count, 0, age, HL)
        assert compute_edge_weight(count + 1, 0, age, HL) > w
        assert compute_edge_weight(count, 0, age + 60_000, HL) < w


class TestEntropy:
    def test_single_action(self):
        assert compute_access_entropy({"read": 1}) == 0.0

    def test_uniform_four(self):
        hist = {"read": 1, "write": 1, "delete": 1, "list": 1}
        assert compute_access_entropy(hist) == pytest.approx(2.0)

    def test_skewed(self):
        # -(0.75 log2 0.75 + 0.25 log2 0.25) = 0.8112781244591328
        assert compute_access_entropy({"read": 3, "write": 1}) == pytest.approx(
            0.8112781244591328, abs=1e-12
        )

    def test_empty_and_negative(self):
        with pytest.raises(EmptyHistogram):
            compute_access_entropy({"read": 0})
        with pytest.raises(InvalidArgument):
            compute_access_entropy({"read": -1})

    @settings(max_examples=60)
    @given(st.lists(st.integers(min_value=0, max_value=50), min_size=1, max_size=8))
    def test_bounds(self, counts):
        if sum(counts) == 0:
            return
        hist = {f"a{i}": c for i, c in enumerate(counts)}
        h = compute_access_entropy(hist)
        k = sum(1 for c in counts if c > 0)
        assert -1e-12 <= h <= math.log2(k) + 1e-12
        if k == 1:
            assert h == 0.0


class TestBuildSnapshot:
    def test_minimal_construction(self):
        snap = build_snapshot([ev(100)], (0, 1000), SPEC, half_life=HL)
        kinds = [(n.kind, n.name) for n in snap.nodes]
        assert kinds == [
            (NodeKind.USER, "u1"),
            (NodeKind.ROLE, "dev"),
            (NodeKind.RESOURCE, "r1"),
        ]
        edge_keys = {(e.src, e.dst, e.action) for e in snap.edges}
        assert edge_keys == {(0, 1, "assume"), (0, 2, "read")}
        user_row = snap.features[0]
        ent_off = 3 + len(snap.spec.role_vocab)
        assert user_row[ent_off] == 0.0  # single action: zero entropy

    def test_repeat_aggregates(self):
        snap = build_snapshot([ev(100), ev(200)], (0, 1000), SPEC, half_life=HL)
        assert len(snap.edges) == 2
        assert all(e.count_in_window == 2 for e in snap.edges)
        assert all(e.last_seen == 200 for e in snap.edges)

    def test_edge_conservation(self):
        events = [ev(100), ev(200, action="write"), ev(300, user="u2", role="ops")]
        snap = build_snapshot(events, (0, 1000), SPEC, half_life=HL)
        assert sum(e.count_in_window for e in snap.edges) == 2 * len(events)

    def test_determinism(self):
        events = [ev(100), ev(150, user="u9", role="ops", resource="r7"), ev(300)]
        a = build_snapshot(events, (0, 1000), SPEC, half_life=HL)
        b = build_snapshot(events, (0, 1000), SPEC, half_life=HL)
        assert snapshot_to_json(a) == snapshot_to_json(b)

    def test_window_mismatch(self):
        with pytest.raises(WindowMismatch):
            build_snapshot([ev(5000)], (0, 1000), SPEC, half_life=HL)

    def test_frozen_vocab_rejects_new_role(self):
        frozen = FeatureSpec(role_vocab=("dev",), action_vocab=("read", "assume"), frozen=True)
        with pytest.raises(UnknownRole):
            build_snapshot([ev(10, role="intruder")], (0, 1000), frozen, half_life=HL)

    def test_open_vocab_extends(self):
        snap = build_snapshot([ev(10, role="newrole")], (0, 1000), SPEC, half_life=HL)
        assert "newrole" in snap.spec.role_vocab
        assert snap.features.shape[1] == snap.spec.d

    def test_features_finite_fuzz(self, rng):
        users = [f"u{i}" for i in range(6)]
        actions = ["read", "write", "assume"]
        events = sorted(
            (
                ev(
                    int(rng.integers(1, 999)),
                    user=str(rng.choice(users)),
                    role=str(rng.choice(["dev", "ops"])),
                    resource=f"r{int(rng.integers(0, 5))}",
                    action=str(rng.choice(actions)),
                    priv=int(rng.integers(0, 5)),
                )
                for _ in range(60)
            ),
            key=lambda e: e.sort_key(),
        )
        snap = build_snapshot(events, (0, 1000), SPEC, half_life=HL)
        assert np.all(np.isfinite(snap.features))

    def test_role_proportions_sum_to_one(self):
        events = [ev(10), ev(20, role="ops"), ev(30)]
        snap = build_snapshot(events, (0, 1000), SPEC, half_life=HL)
        row = snap.features[0]
        role_block = row[3 : 3 + len(snap.spec.role_vocab)]
        assert role_block.sum() == pytest.approx(1.0)
        # dev used twice, ops once
        assert row[3 + snap.spec.role_vocab.index("dev")] == pytest.approx(2 / 3)

    def test_json_roundtrip(self):
        snap = build_snapshot([ev(100), ev(200, action="write")], (0, 1000), SPEC, half_life=HL)
        again = snapshot_from_json(snapshot_to_json(snap))
        assert snapshot_to_json(again) == snapshot_to_json(snap)


class TestGoldenFixture:
    def test_ten_event_fixture_matches_golden(self):
        from pathlib import Path

        from sentinel.events import read_jsonl_stream

        here = Path(__file__).parent / "fixtures"
        with open(here / "snapshot_small.jsonl", "rb") as fh:
            events = list(read_jsonl_stream(fh))
        spec = FeatureSpec(
            role_vocab=("dev", "ops", "svc"),
            action_vocab=("read", "write", "list", "assume"),
        )
        snap = build_snapshot(events, (0, HL), spec, half_life=HL)
        golden = (here / "snapshot_small.golden.json").read_text()
        assert snapshot_to_json(snap) == golden

        # spot values re-derived by hand from the construction rules:
        # u1 used dev 3x / ops 1x; actions read 3x, write 1x at priv 2
        iu1 = [i for i, n in enumerate(snap.nodes) if n.name == "u1"][0]
        row = snap.features[iu1]
        off = 3 + len(snap.spec.role_vocab)
        assert row[3 + snap.spec.role_vocab.index("dev")] == pytest.approx(0.75)
        assert row[off] == pytest.approx(0.8112781244591328, abs=1e-12)
        assert row[off + 2] == pytest.approx(0.5)
        # u1->dev assume: count 3, last_seen half a half-life before window end
        edge = [
            e for e in snap.edges
            if snap.nodes[e.src].name == "u1" and snap.nodes[e.dst].name == "dev"
        ][0]
        assert edge.weight == pytest.approx(3 * 2 ** -0.5, abs=1e-12)


class TestMergeHistory:
    def test_empty_history_equals_window_counts(self):
        snap = build_snapshot([ev(100), ev(200)], (0, 1000), SPEC, half_life=HL)
        merged = merge_history(None, snap, half_life=HL)
        assert merged["u1"].total == 2
        assert merged["u1"].action_counts == {"read": 2}

    def test_empty_snapshot_decays(self):
        snap = build_snapshot([ev(100)], (0, HL), SPEC, half_life=HL)
        history = merge_history(None, snap, half_life=HL)
        empty = build_snapshot([], (HL, 2 * HL), SPEC, half_life=HL)
        decayed = merge_history(history, empty, half_life=HL)
        # one full half-life window: every counter halves
        assert decayed["u1"].total == pytest.approx(0.5)
        assert decayed["u1"].action_counts["read"] == pytest.approx(0.5)

    def test_disjoint_actions_accumulate_with_decay(self):
        first = build_snapshot([ev(100, action="read")], (0, HL), SPEC, half_life=HL)
        history = merge_history(None, first, half_life=HL)
        second = build_snapshot([ev(HL + 5, action="write")], (HL, 2 * HL), SPEC, half_life=HL)
        merged = merge_history(history, second, half_life=HL)
        # read decayed by one half-life to 0.5; write fresh at 1.0
        assert merged["u1"].action_counts["read"] == pytest.approx(0.5)
        assert merged["u1"].action_counts["write"] == pytest.approx(1.0)
        assert merged["u1"].total == pytest.approx(1.5)

    def test_feature_state_consistency(self):
        # features at window t must equal what merge_history hands window t+1
        first = build_snapshot([ev(100)], (0, HL), SPEC, half_life=HL)
        history = merge_history(None, first, half_life=HL)
        second = build_snapshot([ev(HL + 5, action="write")], (HL, 2 * HL), SPEC,
                                history=history, half_life=HL)
        merged = merge_history(history, second, half_life=HL)
        ent_off = 3 + len(second.spec.role_vocab)
        expected_total = merged["u1"].total
        assert second.features[0][ent_off + 1] == pytest.approx(math.log1p(expected_total))


def test_entity_sort_order():
    ids = [
        EntityId(NodeKind.RESOURCE, "a"),
        EntityId(NodeKind.USER, "z"),
        EntityId(NodeKind.ROLE, "m"),
    ]
    ordered = sorted(ids, key=EntityId.sort_key)
    assert [e.kind for e in ordered] == [NodeKind.USER, NodeKind.ROLE, NodeKind.RESOURCE]
