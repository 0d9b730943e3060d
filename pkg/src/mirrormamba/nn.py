"""Parameter containers and layers on top of the autodiff core.

Modules register parameters and submodules by attribute assignment, in
definition order. Parameter names are dotted paths, which double as the
tensor names inside checkpoints, so construction order is part of the
stored format.

Initialization draws from a caller-supplied numpy Generator so a model
built twice from the same seed is bit-identical.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, conv2d, layer_norm, linear


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, dtype=np.float32):
        super().__init__(np.asarray(data, dtype=dtype), requires_grad=True)


def trunc_normal(rng, shape, std=0.02, bound=2.0):
    """Truncated normal draw: resample anything beyond `bound` std devs."""
    out = rng.standard_normal(shape) * std
    limit = bound * std
    bad = np.abs(out) > limit
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > limit
    return out


class Module:
    """Base class with recursive parameter discovery."""

    def __setattr__(self, name, value):
        if isinstance(value, (Parameter, Module, ModuleList)):
            order = self.__dict__.setdefault("_order", [])
            if name not in order:
                order.append(name)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name in self.__dict__.get("_order", []):
            value = getattr(self, name)
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(prefix=path + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self):
        """Ordered name -> raw array view of every parameter."""
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays):
        """Copy values into parameters by name; shapes must match exactly."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing[:4]}, unexpected {extra[:4]}")
        for name, p in own.items():
            arr = np.asarray(arrays[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ShapeError(f"parameter {name}: stored shape {arr.shape} vs model {p.shape}")
            p.data[...] = arr

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


class ModuleList(Module):
    """An indexable sequence of submodules."""

    def __init__(self, modules=()):
        self._items = list(modules)

    def append(self, module):
        self._items.append(module)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def named_parameters(self, prefix=""):
        for i, m in enumerate(self._items):
            yield from m.named_parameters(prefix=f"{prefix}{i}.")


class Linear(Module):
    def __init__(self, rng, in_features, out_features, bias=True, zero_init=False):
        if zero_init:
            w = np.zeros((out_features, in_features))
        else:
            w = trunc_normal(rng, (out_features, in_features))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features)) if bias else None
        if bias:
            self._order = ["weight", "bias"]

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng, in_ch, out_ch, kernel_size, stride=1, padding=0, bias=True, zero_init=False):
        k = kernel_size
        if zero_init:
            w = np.zeros((out_ch, in_ch, k, k))
        else:
            w = trunc_normal(rng, (out_ch, in_ch, k, k))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_ch)) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return conv2d(x, self.weight, stride=self.stride, padding=self.padding, bias=self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)
