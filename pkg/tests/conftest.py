import numpy as np
import pytest

from sentinel.graphs import AccessEdge, EntityId, FeatureSpec, GraphSnapshot, NodeKind


def toy_snapshot(features, pairs, window=(0, 900_000), labels=None):
    """Wrap raw features and (src, dst) pairs in a snapshot for GNN tests."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    nodes = tuple(EntityId(NodeKind.USER, f"n{i:03d}") for i in range(n))
    edges = tuple(
        AccessEdge(src=int(s), dst=int(d), action="read", last_seen=window[1] - 1,
                   count_in_window=1, weight=1.0)
        for s, d in pairs
    )
    spec = FeatureSpec(role_vocab=("r",), action_vocab=("read",))
    return GraphSnapshot(
        window_start=window[0], window_end=window[1], nodes=nodes,
        features=features, edges=edges, spec=spec,
        labels=tuple(labels) if labels is not None else None,
    )


def random_instance(rng, n_nodes=10, d0=8, n_edges=12):
    """Random features plus a random simple directed edge set."""
    features = rng.normal(size=(n_nodes, d0))
    pairs = set()
    while len(pairs) < n_edges:
        s, d = rng.integers(0, n_nodes, size=2)
        if s != d:
            pairs.add((int(s), int(d)))
    return features, sorted(pairs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)
