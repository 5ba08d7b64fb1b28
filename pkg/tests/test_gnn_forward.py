import math

import numpy as np
import pytest

from sentinel.errors import IndexOutOfRange, LengthMismatch, ShapeMismatch
from sentinel.gnn import (
    attention_coefficients,
    decode_edge,
    decode_pairs,
    encode,
    init_params,
    loss_weighted_bce,
    message_pass_layer,
)
from sentinel.gnn.forward import ATTENTION_UNIFORM, build_adjacency

from conftest import random_instance, toy_snapshot
from oracles import dense_forward


def _adj(snapshot, **kw):
    return build_adjacency(snapshot, **kw)


def test_single_neighbor_attention_is_one(rng):
    snap = toy_snapshot(rng.normal(size=(3, 4)), [(0, 2)])
    params = init_params((4, 4), seed=7)
    alpha = attention_coefficients(snap.features, _adj(snap), params.layers[0])
    assert alpha == {(2, 0): pytest.approx(1.0)}


def test_identical_neighbors_split_evenly(rng):
    x = rng.normal(size=4)
    features = np.stack([x, x, rng.normal(size=4)])
    snap = toy_snapshot(features, [(0, 2), (1, 2)])
    params = init_params((4, 4), seed=7)
    alpha = attention_coefficients(snap.features, _adj(snap), params.layers[0])
    assert alpha[(2, 0)] == pytest.approx(0.5)
    assert alpha[(2, 1)] == pytest.approx(0.5)


def test_attention_matches_hand_softmax():
    # 3 nodes, 2x2 weights set by hand; independent evaluation of the
    # softmax over LeakyReLU-scored neighbor pairs.
    features = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    params = init_params((2, 2), seed=0)
    layer = params.layers[0]
    layer.W1[:] = np.array([[1.0, 0.5], [0.0, 1.0]])
    layer.W2[:] = np.array([[0.5, 0.0], [1.0, -1.0]])
    layer.a[:] = np.array([1.0, -1.0, 0.5, 2.0])

    snap = toy_snapshot(features, [(0, 2), (1, 2)])
    alpha = attention_coefficients(snap.features, _adj(snap), layer)

    def score(i, j):
        s = layer.a[:2] @ (layer.W1 @ features[i]) + layer.a[2:] @ (layer.W2 @ features[j])
        return s if s > 0 else 0.2 * s

    s0, s1 = score(2, 0), score(2, 1)
    z = math.exp(s0) + math.exp(s1)
    assert alpha[(2, 0)] == pytest.approx(math.exp(s0) / z, abs=1e-12)
    assert alpha[(2, 1)] == pytest.approx(math.exp(s1) / z, abs=1e-12)


def test_attention_rows_sum_to_one_randomized(rng):
    for _ in range(25):
        n = int(rng.integers(3, 20))
        features, pairs = random_instance(rng, n_nodes=n, d0=6, n_edges=min(2 * n, n * (n - 1) // 2))
        snap = toy_snapshot(features, pairs)
        params = init_params((6, 5), seed=int(rng.integers(0, 10_000)))
        alpha = attention_coefficients(snap.features, _adj(snap), params.layers[0])
        sums = {}
        for (i, _j), val in alpha.items():
            assert 0.0 <= val <= 1.0
            sums[i] = sums.get(i, 0.0) + val
        for total in sums.values():
            assert abs(total - 1.0) <= 1e-9


def test_isolated_node_identity_transform():
    features = np.array([[0.5, 1.5, 0.0]])
    params = init_params((3, 3), seed=1)
    params.layers[0].W1[:] = np.eye(3)
    snap = toy_snapshot(features, [])
    act = message_pass_layer(snap.features, _adj(snap), params.layers[0])
    np.testing.assert_allclose(act.H, features)


def test_zero_input_zero_output(rng):
    snap = toy_snapshot(np.zeros((4, 5)), [(0, 1), (2, 1), (3, 2)])
    params = init_params((5, 4), seed=3)
    act = message_pass_layer(snap.features, _adj(snap), params.layers[0])
    assert np.all(act.H == 0.0)  # no bias terms anywhere


def test_message_passing_matches_dense_oracle(rng):
    features, pairs = random_instance(rng, n_nodes=5, d0=4, n_edges=7)
    snap = toy_snapshot(features, pairs)
    params = init_params((4, 6), seed=11)
    act = message_pass_layer(snap.features, _adj(snap), params.layers[0])
    H_ref, alpha_ref = dense_forward(features, pairs, params.layers[:1])
    np.testing.assert_allclose(act.H, H_ref, atol=1e-10)
    alpha = attention_coefficients(snap.features, _adj(snap), params.layers[0])
    for (i, j), val in alpha.items():
        assert abs(val - alpha_ref[0][i, j]) < 1e-10


def test_encode_single_layer_equals_one_pass(rng):
    features, pairs = random_instance(rng, n_nodes=6, d0=4, n_edges=8)
    snap = toy_snapshot(features, pairs)
    params = init_params((4, 5), seed=2)
    Z, _ = encode(snap, params)
    act = message_pass_layer(snap.features, _adj(snap), params.layers[0])
    np.testing.assert_array_equal(Z, act.H)


def test_encode_two_layers_matches_oracle_composition(rng):
    features, pairs = random_instance(rng, n_nodes=5, d0=4, n_edges=7)
    snap = toy_snapshot(features, pairs)
    params = init_params((4, 6, 3), seed=5)
    Z, _ = encode(snap, params)
    H_ref, _ = dense_forward(features, pairs, params.layers)
    np.testing.assert_allclose(Z, H_ref, atol=1e-10)


def test_encode_permutation_equivariance(rng):
    features, pairs = random_instance(rng, n_nodes=7, d0=4, n_edges=9)
    params = init_params((4, 5, 5), seed=9)
    snap = toy_snapshot(features, pairs)
    Z, _ = encode(snap, params)

    perm = rng.permutation(7)
    inv = np.argsort(perm)
    permuted_features = features[perm]
    permuted_pairs = [(int(inv[s]), int(inv[d])) for s, d in pairs]
    snap_p = toy_snapshot(permuted_features, permuted_pairs)
    Z_p, _ = encode(snap_p, params)
    np.testing.assert_allclose(Z_p, Z[perm], atol=1e-12)


def test_encode_rejects_wrong_feature_dim(rng):
    snap = toy_snapshot(rng.normal(size=(3, 4)), [(0, 1)])
    params = init_params((5, 4), seed=1)
    with pytest.raises(ShapeMismatch):
        encode(snap, params)


def test_uniform_mode_averages_neighbors(rng):
    features, pairs = random_instance(rng, n_nodes=6, d0=4, n_edges=8)
    snap = toy_snapshot(features, pairs)
    params = init_params((4, 5), seed=4)
    act = message_pass_layer(snap.features, _adj(snap), params.layers[0], mode=ATTENTION_UNIFORM)
    H_ref, _ = dense_forward(features, pairs, params.layers[:1], mode="uniform")
    np.testing.assert_allclose(act.H, H_ref, atol=1e-10)


def test_weighted_logits_reduce_to_plain_when_weights_one(rng):
    features, pairs = random_instance(rng, n_nodes=5, d0=4, n_edges=6)
    snap = toy_snapshot(features, pairs)  # toy edges all have weight 1.0
    params = init_params((4, 4), seed=8)
    plain = message_pass_layer(snap.features, _adj(snap), params.layers[0])
    weighted = message_pass_layer(
        snap.features, _adj(snap, weighted_logits=True), params.layers[0]
    )
    np.testing.assert_allclose(weighted.H, plain.H, atol=1e-12)


def test_decode_zero_embedding_is_half():
    Z = np.zeros((2, 3))
    assert decode_edge(Z, 0, 1, np.eye(3)) == pytest.approx(0.5)


def test_decode_unit_vectors_identity():
    Z = np.zeros((2, 3))
    Z[0, 1] = 1.0
    Z[1, 1] = 1.0
    expected = 1.0 / (1.0 + math.exp(-1.0))
    assert decode_edge(Z, 0, 1, np.eye(3)) == pytest.approx(expected, abs=1e-12)


def test_decode_antisymmetric_in_Wo(rng):
    Z = rng.normal(size=(4, 3))
    W_o = rng.normal(size=(3, 3))
    y = decode_edge(Z, 1, 2, W_o)
    y_neg = decode_edge(Z, 1, 2, -W_o)
    assert y_neg == pytest.approx(1.0 - y, abs=1e-12)


def test_decode_bounds_and_index_check(rng):
    Z = rng.normal(size=(3, 2)) * 50
    probs = decode_pairs(Z, np.array([[0, 1], [1, 2], [2, 0]]), rng.normal(size=(2, 2)) * 50)
    assert np.all((probs >= 0.0) & (probs <= 1.0))
    clipped = np.clip(probs, 1e-7, 1 - 1e-7)  # the clamp applied before any log
    assert np.all((clipped > 0) & (clipped < 1))
    with pytest.raises(IndexOutOfRange):
        decode_edge(Z, 0, 5, np.eye(2))


def test_loss_perfect_prediction_near_zero():
    labels = np.array([1.0, 0.0, 1.0])
    loss = loss_weighted_bce(labels, labels, np.ones(3))
    assert 0.0 <= loss <= 3 * -math.log(1 - 1e-7) + 1e-12


def test_loss_half_prediction_is_ln2():
    loss = loss_weighted_bce(np.array([0.5]), np.array([1.0]), np.array([1.0]))
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_loss_linear_in_weights(rng):
    preds = rng.uniform(0.05, 0.95, size=8)
    labels = (rng.random(8) > 0.5).astype(float)
    w = rng.uniform(0.5, 2.0, size=8)
    base = loss_weighted_bce(preds, labels, w)
    assert loss_weighted_bce(preds, labels, 2 * w) == pytest.approx(2 * base, rel=1e-12)


def test_loss_length_mismatch():
    with pytest.raises(LengthMismatch):
        loss_weighted_bce(np.ones(2), np.ones(3), np.ones(2))
