"""Convolutional block attention: channel gating followed by spatial gating."""
import numpy as np

from .engine import ops
from .engine.nn import Dense, Module, Parameter, he_uniform
from .errors import DimensionError, GeometryError

DEFAULT_REDUCTION = 16
SPATIAL_KERNEL = 7


def hidden_width(channels, reduction=DEFAULT_REDUCTION):
    return max(1, channels // reduction)


def cbam_param_count(channels, reduction=DEFAULT_REDUCTION):
    """Closed-form parameter count of one attention block.

    Two biased dense layers C -> h -> C plus an unbiased 7x7 conv over two
    pooled maps (2 * 49 = 98 weights).
    """
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    h = hidden_width(channels, reduction)
    return 2 * channels * h + h + channels + 2 * SPATIAL_KERNEL * SPATIAL_KERNEL


class ChannelAttention(Module):
    def __init__(self, channels, rng, reduction=DEFAULT_REDUCTION):
        self.channels = channels
        hidden = hidden_width(channels, reduction)
        self.fc1 = Dense(channels, hidden, rng)
        self.fc2 = Dense(hidden, channels, rng)

    def mlp(self, v):
        return self.fc2(ops.relu(self.fc1(v)))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(
                f"channel attention built for {self.channels} channels, got input {x.shape}")
        n, c = x.shape[:2]
        avg = ops.flatten(ops.global_avg_pool(x))
        mx = ops.flatten(ops.global_max_pool(x))
        logits = ops.add(self.mlp(avg), self.mlp(mx))
        return ops.reshape(ops.sigmoid(logits), (n, c, 1, 1))


class SpatialAttention(Module):
    def __init__(self, rng):
        k = SPATIAL_KERNEL
        self.weight = Parameter(he_uniform(rng, (1, 2, k, k), 2 * k * k))

    def forward(self, x):
        if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
            raise GeometryError(f"spatial attention needs H, W >= 1, got {x.shape}")
        pooled = ops.concat_channels(ops.channel_mean(x), ops.channel_max(x))
        return ops.sigmoid(ops.conv2d(pooled, self.weight, None, 1, SPATIAL_KERNEL // 2))


class CBAM(Module):
    def __init__(self, channels, rng, reduction=DEFAULT_REDUCTION):
        self.channel = ChannelAttention(channels, rng, reduction)
        self.spatial = SpatialAttention(rng)

    def forward(self, x):
        refined = ops.mul_broadcast(self.channel(x), x)
        return ops.mul_broadcast(self.spatial(refined), refined)


def channel_attention(block, x):
    return block.channel(x)


def spatial_attention(block, x):
    return block.spatial(x)


def cbam_apply(block, x):
    return block(x)


def make_cbam(channels, seed=0, reduction=DEFAULT_REDUCTION):
    return CBAM(channels, np.random.default_rng(seed), reduction)
