"""Parameter containers and layers."""
from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, add, relu, sigmoid, linear, mul


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Attribute-registered parameter tree.

    Parameters and sub-modules are discovered from instance attributes (and
    lists of modules), in definition order, which fixes the naming used by
    state dicts and checkpoints.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing, extra = set(own) - set(state), set(state) - set(own)
            raise KeyError(f"state dict mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, gain: float = 1.0):
        self.weight = Parameter(gain * rng.normal(0.0, np.sqrt(1.0 / in_features), (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, groups: int = 1, bias: bool = True,
                 gain: float = 1.0):
        fan_in = (in_channels // groups) * kernel
        self.weight = Parameter(gain * _he(rng, (out_channels, in_channels // groups, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def output_length(self, length: int) -> int:
        return F.conv_output_length(length, self.weight.shape[-1], self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, width: int):
        self.gamma = Parameter(np.ones(width))
        self.beta = Parameter(np.zeros(width))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta)


class SqueezeExcitation(Module):
    """Channel gating: x * sigmoid(W2 relu(W1 mean_t(x)))."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        hidden = max(1, channels // reduction)
        self.squeeze = Linear(channels, hidden, rng)
        self.excite = Linear(hidden, channels, rng)

    def gate(self, x: Tensor) -> Tensor:
        s = F.global_avg_pool1d(x)
        return sigmoid(self.excite(relu(self.squeeze(s))))

    def forward(self, x: Tensor) -> Tensor:
        g = self.gate(x)
        return mul(x, F.reshape(g, (g.shape[0], g.shape[1], 1)))


class MultiHeadAttention(Module):
    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.output = Linear(width, width, rng)

    def forward(self, x: Tensor, return_weights: bool = False):
        out = F.scaled_dot_product_attention(self.query(x), self.key(x), self.value(x), self.heads,
                                             return_weights=return_weights)
        if return_weights:
            out, weights = out
            return self.output(out), weights
        return self.output(out)


class TransformerEncoderLayer(Module):
    """Post-norm encoder layer: LN(x + MHA(x)), then LN(h + FFN(h))."""

    def __init__(self, width: int, heads: int, ff_width: int, rng: np.random.Generator):
        self.attention = MultiHeadAttention(width, heads, rng)
        self.norm1 = LayerNorm(width)
        self.ff1 = Linear(width, ff_width, rng, gain=np.sqrt(2.0))
        self.ff2 = Linear(ff_width, width, rng)
        self.norm2 = LayerNorm(width)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(add(x, self.attention(x)))
        return self.norm2(add(h, self.ff2(relu(self.ff1(h)))))
