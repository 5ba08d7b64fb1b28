"""Adam optimizer, functional style: a step returns fresh params and state.

Scoring may keep reading a frozen ParamSet while a step builds the next
version; the caller swaps versions atomically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .params import GradSet, ParamSet, zeros_like_params

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: ParamSet
    v: ParamSet
    t: int = 0

    @classmethod
    def fresh(cls, params: ParamSet) -> "AdamState":
        return cls(m=zeros_like_params(params), v=zeros_like_params(params), t=0)


def _congruent(a: ParamSet, b: ParamSet) -> bool:
    if len(a.layers) != len(b.layers) or a.W_o.shape != b.W_o.shape:
        return False
    return all(
        la.W1.shape == lb.W1.shape and la.W2.shape == lb.W2.shape and la.a.shape == lb.a.shape
        for la, lb in zip(a.layers, b.layers)
    )


def optimizer_step(
    params: ParamSet,
    grads: GradSet,
    state: AdamState,
    lr: float,
) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam update, applied entrywise.

    Deterministic given (params, grads, state); the returned ParamSet
    carries version + 1 so stale encode caches are detectable.
    """
    if not _congruent(params, grads):
        raise ShapeMismatch("gradient tree does not match parameter tree")

    new_params = params.copy()
    new_state = AdamState(m=state.m.copy(), v=state.v.copy(), t=state.t + 1)
    t = new_state.t
    bias1 = 1.0 - BETA1 ** t
    bias2 = 1.0 - BETA2 ** t

    for p_arr, g_arr, m_arr, v_arr in zip(
        new_params.flat_arrays(),
        grads.flat_arrays(),
        new_state.m.flat_arrays(),
        new_state.v.flat_arrays(),
    ):
        m_arr *= BETA1
        m_arr += (1.0 - BETA1) * g_arr
        v_arr *= BETA2
        v_arr += (1.0 - BETA2) * np.square(g_arr)
        p_arr -= lr * (m_arr / bias1) / (np.sqrt(v_arr / bias2) + ADAM_EPS)

    new_params.version = params.version + 1
    return new_params, new_state
