"""Parameter containers built on the tensor engine.

A `Module` registers every trainable `Tensor` and child `Module` assigned as an
attribute, so parameters get stable dotted names such as
``seq2seq.encoder_layers.0.attention.query.weight``.
"""

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

import tensor as T
from tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._parameters[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class ModuleList(Module):
    def __init__(self, modules: Optional[List[Module]] = None):
        super().__init__()
        object.__setattr__(self, "_items", [])
        for module in modules or []:
            self.append(module)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, index):
        return self._items[index]


def normal_parameter(
    shape: Tuple[int, ...], rng: np.random.Generator, std: float = 0.02
) -> Tensor:
    return Tensor(
        rng.normal(0.0, std, size=shape).astype(T.get_default_dtype()),
        requires_grad=True,
    )


def xavier_uniform(
    fan_in: int, fan_out: int, rng: np.random.Generator
) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(
        T.get_default_dtype()
    )


class Linear(Module):
    """
    Affine map over the last axis; the weight is stored as (in, out).

    Args:
        in_features (int): Input width.
        out_features (int): Output width.
        rng (np.random.Generator): Initialization RNG.
        bias (bool): Whether to add a bias.
        init (str): "xavier" (uniform) or "normal" (std 0.02).
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        init: str = "xavier",
    ):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        if init == "xavier":
            weight = xavier_uniform(in_features, out_features, rng)
        else:
            weight = rng.normal(0.0, 0.02, size=(in_features, out_features)).astype(
                T.get_default_dtype()
            )
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = (
            Tensor(np.zeros(out_features, dtype=T.get_default_dtype()), requires_grad=True)
            if bias
            else None
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise T.DimensionError(
                f"linear expects width {self.in_features}, got input {x.shape}"
            )
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(width, dtype=T.get_default_dtype()), requires_grad=True)
        self.beta = Tensor(np.zeros(width, dtype=T.get_default_dtype()), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int, eps: float = 1e-5):
        super().__init__()
        self.groups = math.gcd(groups, channels)
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=T.get_default_dtype()), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=T.get_default_dtype()), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.gamma, self.beta, self.groups, self.eps)


class Conv2d(Module):
    """Channel-last convolution with He-normal initialized (k, k, C_in, C_out) kernels."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = False,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = kernel_size * kernel_size * in_channels
        self.weight = Tensor(
            rng.normal(
                0.0,
                math.sqrt(2.0 / fan_in),
                size=(kernel_size, kernel_size, in_channels, out_channels),
            ).astype(T.get_default_dtype()),
            requires_grad=True,
        )
        self.bias = (
            Tensor(np.zeros(out_channels, dtype=T.get_default_dtype()), requires_grad=True)
            if bias
            else None
        )

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)
