"""Feed-forward network definition with seed-reproducible initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")

# numeric codes shared with the compiled kernel
ACT_IDENTITY = 0
ACT_RELU = 1
ACT_TANH = 2
ACT_CODES = {"identity": ACT_IDENTITY, "relu": ACT_RELU, "tanh": ACT_TANH}


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the micro net.

    A parametric layer is an affine map (``d_in x d_out`` weights plus bias)
    followed by its activation. A non-parametric layer (``has_params=False``)
    applies the activation elementwise and requires ``d_in == d_out``.
    """

    index: int
    d_in: int
    d_out: int
    activation: str = "identity"
    has_params: bool = True

    def __post_init__(self) -> None:
        if self.d_in <= 0 or self.d_out <= 0:
            raise ArchitectureError(f"layer {self.index}: dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ArchitectureError(
                f"layer {self.index}: unknown activation {self.activation!r}"
            )
        if not self.has_params and self.d_in != self.d_out:
            raise ArchitectureError(
                f"layer {self.index}: activation-only layer needs d_in == d_out"
            )

    @property
    def param_count(self) -> int:
        return self.d_in * self.d_out + self.d_out if self.has_params else 0


def dense_arch(dims: list[int], activation: str = "tanh",
               last_activation: str = "identity") -> list[LayerSpec]:
    """Chain of fused dense+activation layers; the last one emits raw outputs."""
    if len(dims) < 2:
        raise ArchitectureError("need at least input and output dimensions")
    layers = []
    for i in range(len(dims) - 1):
        act = last_activation if i == len(dims) - 2 else activation
        layers.append(LayerSpec(index=i, d_in=dims[i], d_out=dims[i + 1], activation=act))
    return layers


def validate_arch(arch: list[LayerSpec]) -> None:
    if not arch:
        raise ArchitectureError("empty architecture")
    for prev, cur in zip(arch, arch[1:]):
        if prev.d_out != cur.d_in:
            raise ArchitectureError(
                f"d_out({prev.index})={prev.d_out} != d_in({cur.index})={cur.d_in}"
            )
        if cur.index <= prev.index:
            raise ArchitectureError("layer indices must be strictly increasing")
    # Backward through a standalone activation recovers the local derivative
    # from the layer's *output*; that only works when the value feeding it was
    # not already squashed by a fused nonlinearity.
    for prev, cur in zip(arch, arch[1:]):
        if not cur.has_params and prev.activation != "identity":
            raise ArchitectureError(
                f"layer {cur.index}: activation-only layer must follow an "
                "identity-activated layer"
            )


class Network:
    """Parameter container for a layer list.

    Re-initializing with the same ``init_seed`` reproduces the parameter
    arrays bit-for-bit: weights are drawn uniform(-1/sqrt(d_in), +1/sqrt(d_in))
    per parametric layer in index order, biases start at zero.
    """

    def __init__(self, arch: list[LayerSpec], init_seed: int):
        validate_arch(arch)
        self.layers = list(arch)
        self.init_seed = int(init_seed)
        rng = np.random.Generator(np.random.PCG64(self.init_seed))
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for spec in self.layers:
            if not spec.has_params:
                continue
            bound = 1.0 / np.sqrt(spec.d_in)
            self.weights.append(rng.uniform(-bound, bound, size=(spec.d_in, spec.d_out)))
            self.biases.append(np.zeros(spec.d_out, dtype=np.float64))

    @property
    def parametric_layers(self) -> list[LayerSpec]:
        return [s for s in self.layers if s.has_params]

    @property
    def n_parametric(self) -> int:
        return len(self.parametric_layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def param_count(self) -> int:
        return sum(s.param_count for s in self.layers)

    def copy_params(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]

    def set_params(self, weights: list[np.ndarray], biases: list[np.ndarray]) -> None:
        for w_dst, w_src in zip(self.weights, weights):
            w_dst[...] = w_src
        for b_dst, b_src in zip(self.biases, biases):
            b_dst[...] = b_src


def init_network(arch: list[LayerSpec], seed: int) -> Network:
    return Network(arch, seed)
