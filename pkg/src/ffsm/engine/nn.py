"""Parameter containers and the layers the backbones are assembled from."""
import math

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def he_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(default_dtype())


class Module:
    """Base class; parameters and submodules are discovered from attributes.

    Attribute insertion order defines parameter order, so names are stable
    for a given construction sequence.
    """

    training = True
    buffer_names = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(
                    isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key in self.buffer_names:
            yield prefix + key, getattr(self, key)
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=p.data.dtype)
        for name, b in buffers.items():
            if state[name].shape != b.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {b.shape}")
            b[...] = state[name]


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, rng, stride=1, padding=0, bias=False):
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(he_uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel))
        if bias:
            self.bias = Parameter(np.zeros(cout))
        else:
            self.bias = None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class SeparableConv2d(Module):
    """3x3 depthwise convolution followed by a 1x1 pointwise mix."""

    def __init__(self, cin, cout, rng, stride=1):
        self.stride = stride
        self.depthwise = Parameter(he_uniform(rng, (cin, 1, 3, 3), 9))
        self.pointwise = Parameter(he_uniform(rng, (cout, cin, 1, 1), cin))

    def forward(self, x):
        x = ops.depthwise_conv2d(x, self.depthwise, stride=self.stride, padding=1)
        return ops.pointwise_conv2d(x, self.pointwise)


class Dense(Module):
    def __init__(self, cin, cout, rng, bias=True):
        self.weight = Parameter(he_uniform(rng, (cout, cin), cin))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x):
        return ops.dense(x, self.weight, self.bias)


class BatchNorm2d(Module):
    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, self.training)


def param_count(module):
    return sum(p.size for p in module.parameters())
