"""Parameter-holding layers and a minimal module container."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .autograd import Tensor

INIT_STD = 0.02


class Module:
    """Base class collecting parameters and batch-norm statistics by name."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters plus running statistics, copied, in a stable order."""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, bn in self._named_batchnorms():
            state[f"{name}running_mean"] = bn.stats.mean.copy()
            state[f"{name}running_var"] = bn.stats.var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing tensor {name!r}")
            if state[name].shape != p.shape:
                raise ValueError(f"tensor {name!r} has shape {state[name].shape}, expected {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, bn in self._named_batchnorms():
            bn.stats.mean = np.array(state[f"{name}running_mean"], dtype=np.float64)
            bn.stats.var = np.array(state[f"{name}running_var"], dtype=np.float64)

    def _named_batchnorms(self, prefix: str = "") -> Iterator[tuple[str, "BatchNorm"]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}."
            if isinstance(value, BatchNorm):
                yield full, value
            elif isinstance(value, Module):
                yield from value._named_batchnorms(full)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, BatchNorm):
                        yield f"{full}{i}.", item
                    elif isinstance(item, Module):
                        yield from item._named_batchnorms(f"{full}{i}.")


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int,
                 pad, rng: np.random.Generator):
        self.weight = Tensor(rng.normal(0.0, INIT_STD, (out_channels, in_channels, kernel, kernel)), True)
        self.bias = Tensor(np.zeros(out_channels), True)
        self.stride = stride
        self.pad = pad

    def __call__(self, x) -> Tensor:
        return F.conv2d(x, self.weight, self.stride, self.pad, bias=self.bias)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Tensor(rng.normal(0.0, INIT_STD, (in_features, out_features)), True)
        self.bias = Tensor(np.zeros(out_features), True)

    def __call__(self, x) -> Tensor:
        return F.fully_connected(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), True)
        self.beta = Tensor(np.zeros(channels), True)
        self.stats = F.RunningStats(channels)

    def __call__(self, x) -> Tensor:
        mode = "train" if self.training else "eval"
        return F.batchnorm(x, self.gamma, self.beta, mode, self.stats)


class ConvBlock(Module):
    """Convolution, activation, then batch normalisation."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int,
                 pad, rng: np.random.Generator, norm: bool = True):
        self.conv = Conv2d(in_channels, out_channels, kernel, stride, pad, rng)
        self.bn = BatchNorm(out_channels) if norm else None

    def __call__(self, x) -> Tensor:
        h = F.relu(self.conv(x))
        return self.bn(h) if self.bn is not None else h
