"""Forward pass: attention coefficients, message passing, edge decoding.

Message passing follows the access direction: node i aggregates from its
in-neighbors j, with attention

    alpha_ij = softmax_j( LeakyReLU( a . [W1 h_i || W2 h_j] ) )

computed with max-subtraction for stability. The per-node update is

    h_i = ReLU( W1 h_i + sum_j alpha_ij W2 h_j )

with no bias terms anywhere. The decoder scores a node pair as
sigmoid(z_i . W_o z_j).

Graph connectivity is captured once per snapshot in :class:`Adjacency`
(edge-aligned src/dst index arrays), shared by all layers and by the
backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import IndexOutOfRange, LengthMismatch, NonFiniteInput, ShapeMismatch
from ..graphs import GraphSnapshot
from .params import LayerParams, ParamSet

LEAKY_SLOPE = 0.2
PROB_EPS = 1e-7

ATTENTION_SOFTMAX = "softmax"
ATTENTION_UNIFORM = "uniform"


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function without overflow at large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class Adjacency:
    """Deduplicated directed pairs (src -> dst) plus optional logit offsets.

    ``logit_offset`` carries log(edge weight) when recency weighting of the
    attention logits is enabled; it is None in plain (paper-exact) mode.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    logit_offset: Optional[np.ndarray] = None

    @property
    def n_edges(self) -> int:
        return len(self.src)


def build_adjacency(
    snapshot: GraphSnapshot,
    bidirectional: bool = False,
    weighted_logits: bool = False,
) -> Adjacency:
    """Collapse a snapshot's multi-action edges into unique directed pairs.

    With ``bidirectional`` set, reversed copies of every pair are added so
    information can also flow against the access direction.
    """
    weights: dict[tuple[int, int], float] = {}
    for edge in snapshot.edges:
        key = (edge.src, edge.dst)
        weights[key] = weights.get(key, 0.0) + edge.weight
    if bidirectional:
        for (s, d), w in list(weights.items()):
            rev = (d, s)
            weights[rev] = weights.get(rev, 0.0) + w
    pairs = sorted(weights)
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    dst = np.array([p[1] for p in pairs], dtype=np.int64)
    offset = None
    if weighted_logits and pairs:
        offset = np.log(np.array([weights[p] for p in pairs], dtype=np.float64))
    elif weighted_logits:
        offset = np.zeros(0, dtype=np.float64)
    return Adjacency(n_nodes=snapshot.n_nodes, src=src, dst=dst, logit_offset=offset)


@dataclass
class LayerActivation:
    """Everything the backward pass needs from one layer's forward run."""

    H_prev: np.ndarray      # input activations
    P: np.ndarray           # W1 h_i rows
    Q: np.ndarray           # W2 h_j rows
    att_pre: np.ndarray     # pre-LeakyReLU attention scores, per edge
    alpha: np.ndarray       # attention coefficients, per edge
    Z_pre: np.ndarray       # pre-ReLU node updates
    H: np.ndarray           # layer output

    def alpha_map(self, adj: Adjacency) -> dict[tuple[int, int], float]:
        return {
            (int(i), int(j)): float(a)
            for i, j, a in zip(adj.dst, adj.src, self.alpha)
        }


def _check_layer_shapes(H_prev: np.ndarray, adj: Adjacency, layer: LayerParams) -> None:
    if H_prev.ndim != 2 or H_prev.shape[0] != adj.n_nodes:
        raise ShapeMismatch(f"activation matrix must be {adj.n_nodes} x d_in")
    if H_prev.shape[1] != layer.d_in:
        raise ShapeMismatch(f"layer expects d_in={layer.d_in}, got {H_prev.shape[1]}")
    if not np.all(np.isfinite(H_prev)):
        raise NonFiniteInput("activations contain NaN/Inf")


def _attention_terms(H_prev, adj, layer, mode):
    """Per-edge pre-activation scores and coefficients; also P, Q."""
    P = H_prev @ layer.W1.T
    Q = H_prev @ layer.W2.T
    d_out = layer.d_out
    a_self, a_neigh = layer.a[:d_out], layer.a[d_out:]

    if adj.n_edges == 0:
        empty = np.zeros(0, dtype=np.float64)
        return P, Q, empty, empty

    att_pre = P[adj.dst] @ a_self + Q[adj.src] @ a_neigh

    if mode == ATTENTION_UNIFORM:
        degree = np.zeros(adj.n_nodes)
        np.add.at(degree, adj.dst, 1.0)
        alpha = 1.0 / degree[adj.dst]
        return P, Q, att_pre, alpha

    logits = np.where(att_pre > 0, att_pre, LEAKY_SLOPE * att_pre)
    if adj.logit_offset is not None:
        logits = logits + adj.logit_offset
    group_max = np.full(adj.n_nodes, -np.inf)
    np.maximum.at(group_max, adj.dst, logits)
    shifted = np.exp(logits - group_max[adj.dst])
    denom = np.zeros(adj.n_nodes)
    np.add.at(denom, adj.dst, shifted)
    alpha = shifted / denom[adj.dst]
    return P, Q, att_pre, alpha


def attention_coefficients(
    H_prev: np.ndarray,
    adj: Adjacency,
    layer: LayerParams,
    mode: str = ATTENTION_SOFTMAX,
) -> dict[tuple[int, int], float]:
    """Attention map (i, j) -> alpha_ij over the graph's edges.

    Rows for nodes without in-neighbors are simply absent. Coefficients for
    each non-isolated node sum to 1.
    """
    _check_layer_shapes(H_prev, adj, layer)
    _, _, _, alpha = _attention_terms(H_prev, adj, layer, mode)
    return {
        (int(i), int(j)): float(a)
        for i, j, a in zip(adj.dst, adj.src, alpha)
    }


def message_pass_layer(
    H_prev: np.ndarray,
    adj: Adjacency,
    layer: LayerParams,
    mode: str = ATTENTION_SOFTMAX,
) -> LayerActivation:
    """One aggregation layer; isolated nodes reduce to ReLU(W1 h_i)."""
    _check_layer_shapes(H_prev, adj, layer)
    P, Q, att_pre, alpha = _attention_terms(H_prev, adj, layer, mode)
    M = np.zeros_like(P)
    if adj.n_edges:
        np.add.at(M, adj.dst, alpha[:, None] * Q[adj.src])
    Z_pre = P + M
    H = np.maximum(Z_pre, 0.0)
    return LayerActivation(H_prev=H_prev, P=P, Q=Q, att_pre=att_pre, alpha=alpha, Z_pre=Z_pre, H=H)


@dataclass
class EncodeCache:
    """Activations from one encode call, pinned to a parameter version."""

    adj: Adjacency
    activations: list[LayerActivation]
    params_version: int
    mode: str


def encode(
    snapshot: GraphSnapshot,
    params: ParamSet,
    adj: Optional[Adjacency] = None,
    mode: str = ATTENTION_SOFTMAX,
) -> tuple[np.ndarray, EncodeCache]:
    """Run all layers; return final embeddings and the backward cache."""
    if snapshot.features.shape[1] != params.dims[0]:
        raise ShapeMismatch(
            f"snapshot features d={snapshot.features.shape[1]} but params expect d_0={params.dims[0]}"
        )
    if adj is None:
        adj = build_adjacency(snapshot)
    H = snapshot.features
    activations = []
    for layer in params.layers:
        act = message_pass_layer(H, adj, layer, mode=mode)
        activations.append(act)
        H = act.H
    cache = EncodeCache(adj=adj, activations=activations, params_version=params.version, mode=mode)
    return H, cache


def decode_edge(Z: np.ndarray, i: int, j: int, W_o: np.ndarray) -> float:
    """Reconstruction probability sigmoid(z_i . W_o z_j) for one pair."""
    n = Z.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRange(f"pair ({i}, {j}) outside 0..{n - 1}")
    logit = Z[i] @ W_o @ Z[j]
    return float(stable_sigmoid(np.array([logit]))[0])


def decode_pairs(Z: np.ndarray, pairs: np.ndarray, W_o: np.ndarray) -> np.ndarray:
    """Vectorized decode for an array of (i, j) index pairs."""
    if len(pairs) == 0:
        return np.zeros(0, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.min() < 0 or pairs.max() >= Z.shape[0]:
        raise IndexOutOfRange("pair index outside node table")
    logits = np.einsum("ed,ed->e", Z[pairs[:, 0]] @ W_o, Z[pairs[:, 1]])
    return stable_sigmoid(logits)


def loss_weighted_bce(predictions: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Weighted cross-entropy, summed (not averaged) over the batch.

    Predictions are clamped to [eps, 1-eps] so the loss stays finite.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if not (len(predictions) == len(labels) == len(weights)):
        raise LengthMismatch("predictions, labels, weights must align")
    p = np.clip(predictions, PROB_EPS, 1.0 - PROB_EPS)
    terms = labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)
    return float(-np.sum(weights * terms))
