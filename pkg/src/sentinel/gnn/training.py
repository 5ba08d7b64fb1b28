"""Training batches and the snapshot-sequence training loop.

Observed edges are positives (label 1); negatives come from uniform
corruption of edge destinations, seeded per (snapshot, epoch) so a full
training run is a pure function of its inputs. Analyst-confirmed samples
can override fresh pairs with their own labels and weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import InvalidArgument, LengthMismatch
from ..graphs import GraphSnapshot
from ..rng import stream
from .forward import ATTENTION_SOFTMAX, Adjacency, build_adjacency, encode
from .params import ParamSet


@dataclass
class EdgeBatch:
    """Node-index pairs with labels y and positive weights w."""

    pairs: np.ndarray    # (m, 2) int
    labels: np.ndarray   # (m,) float in {0, 1}
    weights: np.ndarray  # (m,) float > 0

    def validate(self, n_nodes: int) -> None:
        if not (len(self.pairs) == len(self.labels) == len(self.weights)):
            raise LengthMismatch("pairs, labels, weights must align")
        if len(self.pairs) == 0:
            return
        if self.pairs.min() < 0 or self.pairs.max() >= n_nodes:
            raise InvalidArgument("pair index outside node table")
        if np.any(self.weights <= 0):
            raise InvalidArgument("weights must be > 0")


# Resolves feedback samples into (i, j, label, weight) rows for a snapshot.
BufferResolver = Callable[[GraphSnapshot], list[tuple[int, int, float, float]]]


def sample_negatives(
    pairs: np.ndarray,
    n_nodes: int,
    rng: np.random.Generator,
    k: int = 1,
) -> np.ndarray:
    """Corrupt each pair's destination uniformly, avoiding src and the
    original dst; repeats per positive when k > 1."""
    if len(pairs) == 0 or n_nodes < 3:
        return np.zeros((0, 2), dtype=np.int64)
    src = np.repeat(pairs[:, 0], k)
    orig = np.repeat(pairs[:, 1], k)
    dst = rng.integers(0, n_nodes, size=len(src))
    bad = (dst == src) | (dst == orig)
    while np.any(bad):
        dst[bad] = rng.integers(0, n_nodes, size=int(bad.sum()))
        bad = (dst == src) | (dst == orig)
    return np.stack([src, dst], axis=1)


def make_training_batch(
    snapshot: GraphSnapshot,
    seed: int,
    epoch: int = 0,
    k_negatives: int = 1,
    buffer_rows: Optional[Sequence[tuple[int, int, float, float]]] = None,
    adj: Optional[Adjacency] = None,
) -> EdgeBatch:
    """Positives from observed pairs, seeded negatives, buffer overrides.

    A buffer row for a pair already in the fresh set replaces it: the
    analyst's label and weight win over the self-supervised default.
    """
    if adj is None:
        adj = build_adjacency(snapshot)
    positives = np.stack([adj.src, adj.dst], axis=1) if adj.n_edges else np.zeros((0, 2), dtype=np.int64)
    rng = stream(seed, "negatives", snapshot.window_end, epoch)
    negatives = sample_negatives(positives, snapshot.n_nodes, rng, k=k_negatives)

    rows: dict[tuple[int, int], tuple[float, float]] = {}
    for i, j in positives:
        rows[(int(i), int(j))] = (1.0, 1.0)
    for i, j in negatives:
        rows.setdefault((int(i), int(j)), (0.0, 1.0))
    if buffer_rows:
        for i, j, label, weight in buffer_rows:
            rows[(int(i), int(j))] = (float(label), float(weight))

    keys = sorted(rows)
    pairs = np.array(keys, dtype=np.int64).reshape(len(keys), 2)
    labels = np.array([rows[k][0] for k in keys], dtype=np.float64)
    weights = np.array([rows[k][1] for k in keys], dtype=np.float64)
    return EdgeBatch(pairs=pairs, labels=labels, weights=weights)


def train_on_snapshots(
    params: ParamSet,
    snapshots: Sequence[GraphSnapshot],
    epochs: int,
    lr: float,
    seed: int,
    k_negatives: int = 1,
    mode: str = ATTENTION_SOFTMAX,
    buffer_resolver: Optional[BufferResolver] = None,
    adam_state=None,
    bidirectional: bool = False,
    weighted_logits: bool = False,
) -> tuple[ParamSet, "AdamState", list[float]]:
    """Sequential Adam over the snapshot sequence; one step per snapshot.

    Returns the new params, optimizer state, and mean loss per epoch.
    epochs=0 returns the inputs untouched.
    """
    from .backward import backward
    from .optim import AdamState, optimizer_step

    if adam_state is None:
        adam_state = AdamState.fresh(params)
    epoch_losses: list[float] = []
    adjacencies = [
        build_adjacency(s, bidirectional=bidirectional, weighted_logits=weighted_logits)
        for s in snapshots
    ]
    for epoch in range(epochs):
        total, batches = 0.0, 0
        for snapshot, adj in zip(snapshots, adjacencies):
            if adj.n_edges == 0:
                continue
            buffer_rows = buffer_resolver(snapshot) if buffer_resolver else None
            batch = make_training_batch(
                snapshot, seed, epoch=epoch, k_negatives=k_negatives,
                buffer_rows=buffer_rows, adj=adj,
            )
            _, cache = encode(snapshot, params, adj=adj, mode=mode)
            loss, grads = backward(params, batch, cache)
            params, adam_state = optimizer_step(params, grads, adam_state, lr)
            total += loss
            batches += 1
        epoch_losses.append(total / max(batches, 1))
    return params, adam_state, epoch_losses
