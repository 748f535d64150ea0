"""Parameter containers and the standard layers built on the autodiff primitives."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import Tensor
from .autodiff import functional as F


class Parameter(Tensor):
    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Attribute-walking container, in the spirit of ``torch.nn.Module``.

    Parameters, sub-modules and lists of sub-modules assigned as attributes
    are discovered in assignment order. Buffers (non-trainable state such as
    batch-norm running statistics) are registered by name in ``_buffers``.
    """

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, val in vars(self).items():
            if isinstance(val, (Module, Parameter)):
                yield name, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, val in self._children():
            if isinstance(val, Parameter):
                yield prefix + name, val
            else:
                yield from val.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in getattr(self, "_buffers", {}).items():
            yield prefix + name, arr
        for name, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

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
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: arr.copy() for name, arr in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self._buffer_owners())
        expected = set(params) | set(buffers)
        if strict:
            missing = expected - set(state)
            unexpected = set(state) - expected
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, arr in state.items():
            if name in params:
                p = params[name]
                if p.shape != arr.shape:
                    raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
                p.data = np.array(arr, dtype=p.dtype)
            elif name in buffers:
                owner, key = buffers[name]
                owner._buffers[key] = np.array(arr, dtype=owner._buffers[key].dtype)

    def _buffer_owners(self, prefix: str = ""):
        for key in getattr(self, "_buffers", {}):
            yield prefix + key, (self, key)
        for name, val in self._children():
            if isinstance(val, Module):
                yield from val._buffer_owners(prefix + name + ".")

    def to_dtype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for m in self.modules():
            for k, v in getattr(m, "_buffers", {}).items():
                m._buffers[k] = v.astype(dtype)
        return self


INIT_NEGATIVE_SLOPE = math.sqrt(5.0)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype,
                    a: float = INIT_NEGATIVE_SLOPE) -> np.ndarray:
    """Kaiming-uniform fan-in init: U(-b, b), b = sqrt(6 / ((1 + a^2) fan_in)).

    ``a`` is the leaky-ReLU slope in the gain; the default sqrt(5) gives
    b = 1/sqrt(fan_in), which keeps deep un-normalised residual stacks at
    O(1) activations. ``a=0`` is the plain ReLU gain.
    """
    bound = math.sqrt(6.0 / ((1.0 + a * a) * fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, padding: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 init_slope: float = INIT_NEGATIVE_SLOPE):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding
        self.weight = Parameter(kaiming_uniform(rng, (cout, cin, k, k), cin * k * k, dtype, init_slope))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(kaiming_uniform(rng, (fin, fout), fin, dtype))
        self.bias = Parameter(np.zeros(fout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.matmul(x, self.weight) + self.bias


class BatchNorm2d(Module):
    """Batch statistics in training mode, running statistics in eval mode."""

    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.eps = eps
        self.momentum = momentum
        self.weight = Parameter(np.ones(c, dtype=dtype))
        self.bias = Parameter(np.zeros(c, dtype=dtype))
        self._buffers = {"running_mean": np.zeros(c, dtype=dtype), "running_var": np.ones(c, dtype=dtype)}

    def forward(self, x: Tensor) -> Tensor:
        c = x.shape[1]
        if self.training:
            out, mu, var = F.batch_norm(x, self.weight, self.bias, self.eps)
            m = self.momentum
            n = x.size // c
            unbiased = var * (n / max(n - 1, 1))
            self._buffers["running_mean"] = ((1 - m) * self._buffers["running_mean"] + m * mu).astype(x.dtype)
            self._buffers["running_var"] = ((1 - m) * self._buffers["running_var"] + m * unbiased).astype(x.dtype)
            return out
        rm = self._buffers["running_mean"].reshape(1, c, 1, 1)
        rv = self._buffers["running_var"].reshape(1, c, 1, 1)
        scale = F.reshape(self.weight, (1, c, 1, 1)) * (1.0 / np.sqrt(rv + self.eps)).astype(x.dtype)
        return (x - rm.astype(x.dtype)) * scale + F.reshape(self.bias, (1, c, 1, 1))
