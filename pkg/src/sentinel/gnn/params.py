"""Trainable tensors and their initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidDims, NonFiniteInput, ShapeMismatch
from ..rng import stream


@dataclass
class LayerParams:
    """One message-passing layer: self transform, neighbor transform, and
    the attention vector over their concatenation."""

    W1: np.ndarray  # d_out x d_in
    W2: np.ndarray  # d_out x d_in
    a: np.ndarray   # 2 * d_out

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def d_out(self) -> int:
        return self.W1.shape[0]


@dataclass
class ParamSet:
    """All trainable tensors plus the dimension chain.

    ``dims`` is (d_0, d_1, ..., d_L); ``version`` increments on every
    optimizer step so cached activations can detect staleness.
    """

    layers: list[LayerParams]
    W_o: np.ndarray
    dims: tuple[int, ...]
    seed: int = 0
    version: int = 0

    def validate(self) -> None:
        if len(self.dims) != len(self.layers) + 1:
            raise ShapeMismatch("dims must chain one entry per layer plus input")
        for l, (layer, d_in, d_out) in enumerate(zip(self.layers, self.dims[:-1], self.dims[1:])):
            if layer.W1.shape != (d_out, d_in) or layer.W2.shape != (d_out, d_in):
                raise ShapeMismatch(f"layer {l} weight shapes break the dimension chain")
            if layer.a.shape != (2 * d_out,):
                raise ShapeMismatch(f"layer {l} attention vector must have length {2 * d_out}")
        d_last = self.dims[-1]
        if self.W_o.shape != (d_last, d_last):
            raise ShapeMismatch("decoder matrix must be d_L x d_L")
        for arr in self.flat_arrays():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInput("parameter entries must be finite")

    def flat_arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.W1, layer.W2, layer.a])
        out.append(self.W_o)
        return out

    def copy(self) -> "ParamSet":
        return ParamSet(
            layers=[LayerParams(l.W1.copy(), l.W2.copy(), l.a.copy()) for l in self.layers],
            W_o=self.W_o.copy(),
            dims=self.dims,
            seed=self.seed,
            version=self.version,
        )


# GradSet shares the ParamSet shape tree; entries are dL/dtheta.
GradSet = ParamSet


def _xavier(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(dims: tuple[int, ...], seed: int) -> ParamSet:
    """Xavier-uniform initialization, deterministic per seed.

    Every entry lies within +-sqrt(6 / (fan_in + fan_out)); the attention
    vector is treated as a map from the 2*d_out concatenation to a scalar.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise InvalidDims(f"need a chain of positive dims, got {dims}")
    layers = []
    for l, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        rng = stream(seed, "init-layer", l)
        layers.append(
            LayerParams(
                W1=_xavier(rng, (d_out, d_in), d_in, d_out),
                W2=_xavier(rng, (d_out, d_in), d_in, d_out),
                a=_xavier(rng, (2 * d_out,), 2 * d_out, 1),
            )
        )
    rng = stream(seed, "init-decoder")
    d_last = dims[-1]
    W_o = _xavier(rng, (d_last, d_last), d_last, d_last)
    params = ParamSet(layers=layers, W_o=W_o, dims=dims, seed=seed, version=0)
    params.validate()
    return params


def zeros_like_params(params: ParamSet) -> GradSet:
    return ParamSet(
        layers=[
            LayerParams(np.zeros_like(l.W1), np.zeros_like(l.W2), np.zeros_like(l.a))
            for l in params.layers
        ],
        W_o=np.zeros_like(params.W_o),
        dims=params.dims,
        seed=params.seed,
        version=params.version,
    )
