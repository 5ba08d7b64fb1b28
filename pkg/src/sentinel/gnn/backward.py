"""Exact analytic gradients through decoder, attention, and message passing.

The chain runs: weighted BCE -> sigmoid decode -> L message-passing layers,
each with a ReLU node update and a softmax-normalized, LeakyReLU-scored
attention stage. The softmax Jacobian is applied per destination group;
ReLU and LeakyReLU use derivative 0 exactly at the kink. Probabilities the
forward pass clamped contribute zero gradient, so the gradient matches the
computed loss, not an idealized one.
"""

from __future__ import annotations

import numpy as np

from ..errors import StaleCache
from .forward import (
    ATTENTION_SOFTMAX,
    EncodeCache,
    LEAKY_SLOPE,
    PROB_EPS,
    loss_weighted_bce,
    stable_sigmoid,
)
from .params import GradSet, ParamSet, zeros_like_params
from .training import EdgeBatch


def backward(params: ParamSet, batch: EdgeBatch, cache: EncodeCache) -> tuple[float, GradSet]:
    """Loss and dLoss/dtheta for one batch against cached activations.

    The cache must come from an encode() run of this exact parameter
    version, otherwise StaleCache is raised.
    """
    if cache.params_version != params.version:
        raise StaleCache(
            f"cache built for params v{cache.params_version}, have v{params.version}"
        )
    grads = zeros_like_params(params)
    Z = cache.activations[-1].H
    batch.validate(Z.shape[0])

    if len(batch.pairs) == 0:
        return 0.0, grads

    i_idx = batch.pairs[:, 0]
    j_idx = batch.pairs[:, 1]
    logits = np.einsum("ed,ed->e", Z[i_idx] @ params.W_o, Z[j_idx])
    y_hat = stable_sigmoid(logits)
    loss = loss_weighted_bce(y_hat, batch.labels, batch.weights)

    inside = (y_hat > PROB_EPS) & (y_hat < 1.0 - PROB_EPS)
    g = batch.weights * (y_hat - batch.labels) * inside

    grads.W_o[:] = (Z[i_idx] * g[:, None]).T @ Z[j_idx]
    dZ = np.zeros_like(Z)
    np.add.at(dZ, i_idx, g[:, None] * (Z[j_idx] @ params.W_o.T))
    np.add.at(dZ, j_idx, g[:, None] * (Z[i_idx] @ params.W_o))

    adj = cache.adj
    G = dZ
    for l in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[l]
        act = cache.activations[l]
        glayer = grads.layers[l]

        Gp = G * (act.Z_pre > 0)
        dP = Gp.copy()
        dQ = np.zeros_like(act.Q)

        if adj.n_edges:
            dM = Gp
            np.add.at(dQ, adj.src, act.alpha[:, None] * dM[adj.dst])
            if cache.mode == ATTENTION_SOFTMAX:
                d_alpha = np.einsum("ed,ed->e", dM[adj.dst], act.Q[adj.src])
                dot = np.zeros(adj.n_nodes)
                np.add.at(dot, adj.dst, act.alpha * d_alpha)
                d_logits = act.alpha * (d_alpha - dot[adj.dst])
                lrelu_grad = np.where(
                    act.att_pre > 0, 1.0, np.where(act.att_pre < 0, LEAKY_SLOPE, 0.0)
                )
                du = d_logits * lrelu_grad
                d_out = layer.d_out
                glayer.a[:d_out] = du @ act.P[adj.dst]
                glayer.a[d_out:] = du @ act.Q[adj.src]
                np.add.at(dP, adj.dst, du[:, None] * layer.a[None, :d_out])
                np.add.at(dQ, adj.src, du[:, None] * layer.a[None, d_out:])

        glayer.W1[:] = dP.T @ act.H_prev
        glayer.W2[:] = dQ.T @ act.H_prev
        G = dP @ layer.W1 + dQ @ layer.W2

    return loss, grads
