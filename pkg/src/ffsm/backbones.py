"""Desk-scale ResNet18, DenseNet121 and Xception with optional CBAM placement.

Every model ends in global average pooling, a small fully connected head and
a sigmoid, producing one flood probability per sample.
"""
import io
import json
import struct
from dataclasses import asdict, dataclass, replace

import numpy as np

from .cbam import CBAM, cbam_param_count
from .engine import ops
from .engine.nn import BatchNorm2d, Conv2d, Dense, Module, SeparableConv2d, param_count
from .engine.ops import _out_size
from .errors import DimensionError, FormatError, GeometryError

KINDS = ("resnet18", "densenet121", "xception")
PLACEMENTS = ("none", "head", "tail", "in")

_DEFAULT_WIDTH = {"resnet18": 32, "densenet121": 12, "xception": 32}
_DEFAULT_DEPTH = {"resnet18": 1.0, "densenet121": 0.25, "xception": 0.25}

MAGIC = b"FFSM-MODEL\0"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    kind: str = "resnet18"
    factors: int = 16
    patch: int = 32
    placement: str = "none"
    base_width: int = 0
    depth_scale: float = 0.0
    classifier: tuple = (64,)
    reduction: int = 16
    cbam_blocks: tuple = None

    def __post_init__(self):
        kind = self.kind.lower()
        placement = self.placement.lower()
        if kind not in KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}; choose from {KINDS}")
        if placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}; choose from {PLACEMENTS}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "placement", placement)
        if not self.base_width:
            object.__setattr__(self, "base_width", _DEFAULT_WIDTH[kind])
        if not self.depth_scale:
            object.__setattr__(self, "depth_scale", _DEFAULT_DEPTH[kind])
        object.__setattr__(self, "classifier", tuple(int(c) for c in self.classifier))
        if self.cbam_blocks is not None:
            object.__setattr__(self, "cbam_blocks", tuple(bool(b) for b in self.cbam_blocks))
        if self.factors < 1 or self.patch < 1 or self.base_width < 1:
            raise ValueError("factors, patch and base_width must be positive")
        if not 0 < self.depth_scale <= 1:
            raise ValueError(f"depth_scale must lie in (0, 1], got {self.depth_scale}")

    def to_dict(self):
        d = asdict(self)
        d["classifier"] = list(self.classifier)
        d["cbam_blocks"] = None if self.cbam_blocks is None else list(self.cbam_blocks)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("cbam_blocks") is not None:
            d["cbam_blocks"] = tuple(d["cbam_blocks"])
        d["classifier"] = tuple(d.get("classifier", (64,)))
        return cls(**d)


def _scaled(n, depth_scale):
    return max(1, int(round(n * depth_scale)))


class _BlockSites:
    """Hands out per-block CBAM decisions for the "in" placement."""

    def __init__(self, spec):
        self.enabled = spec.placement == "in"
        self.mask = spec.cbam_blocks
        self.index = 0
        self.channels = []

    def take(self, channels, rng, reduction):
        i = self.index
        self.index += 1
        if not self.enabled:
            return None
        if self.mask is not None and (i >= len(self.mask) or not self.mask[i]):
            return None
        self.channels.append(channels)
        return CBAM(channels, rng, reduction)


# -- ResNet -------------------------------------------------------------------

class BasicBlock(Module):
    """Two 3x3 convolutions with an identity or projection shortcut: y = F(x) + x."""

    def __init__(self, cin, cout, stride, rng, cbam=None):
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.proj = Conv2d(cin, cout, 1, rng, stride=stride)
            self.proj_bn = BatchNorm2d(cout)
        else:
            self.proj = None
        self.cbam = cbam

    def forward(self, x):
        out = ops.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        shortcut = self.proj_bn(self.proj(x)) if self.proj is not None else x
        out = ops.relu(ops.add(out, shortcut))
        if self.cbam is not None:
            out = self.cbam(out)
        return out


class ResNetFeatures(Module):
    def __init__(self, spec, rng, sites):
        w = spec.base_width
        self.stem = Conv2d(spec.factors, w, 3, rng, padding=1)
        self.stem_bn = BatchNorm2d(w)
        per_stage = _scaled(2, spec.depth_scale)
        blocks = []
        cin = w
        for stage, cout in enumerate((w, 2 * w, 4 * w, 8 * w)):
            for b in range(per_stage):
                stride = 2 if stage > 0 and b == 0 else 1
                blocks.append(BasicBlock(cin, cout, stride, rng,
                                         sites.take(cout, rng, spec.reduction)))
                cin = cout
        self.blocks = blocks
        self.out_channels = cin

    def forward(self, x):
        x = ops.relu(self.stem_bn(self.stem(x)))
        for block in self.blocks:
            x = block(x)
        return x


def _resnet_sizes(spec):
    sizes = [("stem", spec.patch)]
    s = spec.patch
    for stage in range(1, 4):
        s = _out_size(s, 3, 2, 1, f"resnet stage {stage + 1}")
        sizes.append((f"stage {stage + 1}", s))
    return sizes


# -- DenseNet -----------------------------------------------------------------

class DenseLayer(Module):
    """BN-ReLU-1x1 bottleneck then BN-ReLU-3x3, concatenated onto its input."""

    def __init__(self, cin, growth, rng):
        self.bn1 = BatchNorm2d(cin)
        self.conv1 = Conv2d(cin, 4 * growth, 1, rng)
        self.bn2 = BatchNorm2d(4 * growth)
        self.conv2 = Conv2d(4 * growth, growth, 3, rng, padding=1)

    def forward(self, x):
        y = self.conv1(ops.relu(self.bn1(x)))
        y = self.conv2(ops.relu(self.bn2(y)))
        return ops.concat_channels(x, y)


class DenseBlock(Module):
    def __init__(self, cin, n_layers, growth, rng, cbam=None):
        self.layers = [DenseLayer(cin + i * growth, growth, rng) for i in range(n_layers)]
        self.out_channels = cin + n_layers * growth
        self.cbam = cbam

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        if self.cbam is not None:
            x = self.cbam(x)
        return x


class Transition(Module):
    def __init__(self, cin, cout, rng):
        self.bn = BatchNorm2d(cin)
        self.conv = Conv2d(cin, cout, 1, rng)

    def forward(self, x):
        return ops.avg_pool2d(self.conv(ops.relu(self.bn(x))), 2, 2)


class DenseNetFeatures(Module):
    BLOCKS = (6, 12, 24, 16)

    def __init__(self, spec, rng, sites):
        g = spec.base_width
        c = 2 * g
        self.stem = Conv2d(spec.factors, c, 3, rng, padding=1)
        self.stem_bn = BatchNorm2d(c)
        blocks, transitions = [], []
        for i, n in enumerate(self.BLOCKS):
            n = _scaled(n, spec.depth_scale)
            probe = DenseBlock(c, n, g, rng, None)
            probe.cbam = sites.take(probe.out_channels, rng, spec.reduction)
            blocks.append(probe)
            c = probe.out_channels
            if i < len(self.BLOCKS) - 1:
                transitions.append(Transition(c, c // 2, rng))
                c //= 2
        self.blocks = blocks
        self.transitions = transitions
        self.final_bn = BatchNorm2d(c)
        self.out_channels = c

    def forward(self, x):
        x = ops.relu(self.stem_bn(self.stem(x)))
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i < len(self.transitions):
                x = self.transitions[i](x)
        return ops.relu(self.final_bn(x))


def _densenet_sizes(spec):
    sizes = [("stem", spec.patch)]
    s = spec.patch
    for t in range(1, 4):
        s = _out_size(s, 2, 2, 0, f"densenet transition {t}")
        sizes.append((f"transition {t}", s))
    return sizes


# -- Xception -----------------------------------------------------------------

class XceptionBlock(Module):
    """Separable-conv block with a residual connection.

    With ``stride`` 2 the block ends in a 3x3 max-pool and uses a strided 1x1
    projection shortcut.
    """

    def __init__(self, widths, rng, stride=1, leading_relu=True, cbam=None):
        self.leading_relu = leading_relu
        self.stride = stride
        self.seps = [SeparableConv2d(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.bns = [BatchNorm2d(b) for b in widths[1:]]
        cin, cout = widths[0], widths[-1]
        if stride != 1 or cin != cout:
            self.proj = Conv2d(cin, cout, 1, rng, stride=stride)
            self.proj_bn = BatchNorm2d(cout)
        else:
            self.proj = None
        self.cbam = cbam

    def forward(self, x):
        y = x
        for i, (sep, bn) in enumerate(zip(self.seps, self.bns)):
            if i > 0 or self.leading_relu:
                y = ops.relu(y)
            y = bn(sep(y))
        if self.stride != 1:
            y = ops.max_pool2d(y, 3, self.stride, padding=1)
        shortcut = self.proj_bn(self.proj(x)) if self.proj is not None else x
        y = ops.add(y, shortcut)
        if self.cbam is not None:
            y = self.cbam(y)
        return y


class XceptionFeatures(Module):
    def __init__(self, spec, rng, sites):
        def ch(c):
            return max(1, int(round(c * spec.base_width / 32)))

        c32, c64, c128, c256, c728 = ch(32), ch(64), ch(128), ch(256), ch(728)
        c1024, c1536, c2048 = ch(1024), ch(1536), ch(2048)
        r = spec.reduction
        self.conv1 = Conv2d(spec.factors, c32, 3, rng, padding=1)
        self.bn1 = BatchNorm2d(c32)
        self.conv2 = Conv2d(c32, c64, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(c64)
        blocks = []
        for i, (a, b) in enumerate(((c64, c128), (c128, c256), (c256, c728))):
            blocks.append(XceptionBlock((a, b, b), rng, stride=2, leading_relu=i > 0,
                                        cbam=sites.take(b, rng, r)))
        for _ in range(_scaled(8, spec.depth_scale)):
            blocks.append(XceptionBlock((c728,) * 4, rng, cbam=sites.take(c728, rng, r)))
        blocks.append(XceptionBlock((c728, c728, c1024), rng, stride=2,
                                    cbam=sites.take(c1024, rng, r)))
        self.blocks = blocks
        self.sep3 = SeparableConv2d(c1024, c1536, rng)
        self.bn3 = BatchNorm2d(c1536)
        self.sep4 = SeparableConv2d(c1536, c2048, rng)
        self.bn4 = BatchNorm2d(c2048)
        self.out_channels = c2048

    def forward(self, x):
        x = ops.relu(self.bn1(self.conv1(x)))
        x = ops.relu(self.bn2(self.conv2(x)))
        for block in self.blocks:
            x = block(x)
        x = ops.relu(self.bn3(self.sep3(x)))
        return ops.relu(self.bn4(self.sep4(x)))


def _xception_sizes(spec):
    sizes = [("entry", spec.patch)]
    s = spec.patch
    for name in ("entry block 1", "entry block 2", "entry block 3", "exit block"):
        s = _out_size(s, 3, 2, 1, f"xception {name}")
        sizes.append((name, s))
    return sizes


_FEATURES = {"resnet18": ResNetFeatures, "densenet121": DenseNetFeatures,
             "xception": XceptionFeatures}
_SIZES = {"resnet18": _resnet_sizes, "densenet121": _densenet_sizes,
          "xception": _xception_sizes}


def stage_sizes(spec):
    """Spatial size after each downsampling stage; raises GeometryError if one collapses."""
    if spec.patch < 1:
        raise GeometryError(f"patch size {spec.patch} must be >= 1")
    try:
        return _SIZES[spec.kind](spec)
    except GeometryError as exc:
        raise GeometryError(f"patch {spec.patch} too small for {spec.kind}: {exc}") from None


# -- model ---------------------------------------------------------------------

class Model(Module):
    def __init__(self, spec, rng):
        self.spec = spec
        stage_sizes(spec)
        sites = _BlockSites(spec)
        self.head_cbam = CBAM(spec.factors, rng, spec.reduction) if spec.placement == "head" else None
        self.features = _FEATURES[spec.kind](spec, rng, sites)
        c = self.features.out_channels
        self.tail_cbam = CBAM(c, rng, spec.reduction) if spec.placement == "tail" else None
        fcs = []
        for hidden in spec.classifier:
            fcs.append(Dense(c, hidden, rng))
            c = hidden
        fcs.append(Dense(c, 1, rng))
        self.fc = fcs
        self.block_cbam_channels = tuple(sites.channels)
        self.n_blocks = sites.index

    def cbam_blocks(self):
        return [m for m in self.modules() if isinstance(m, CBAM)]

    def forward(self, x, training=None):
        if training is not None:
            self.train(training)
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != spec.factors or x.shape[2:] != (spec.patch, spec.patch):
            raise DimensionError(
                f"model expects (N, {spec.factors}, {spec.patch}, {spec.patch}), got {x.shape}")
        if self.head_cbam is not None:
            x = self.head_cbam(x)
        x = self.features(x)
        if self.tail_cbam is not None:
            x = self.tail_cbam(x)
        x = ops.flatten(ops.global_avg_pool(x))
        for i, fc in enumerate(self.fc):
            x = fc(x)
            if i < len(self.fc) - 1:
                x = ops.relu(x)
        return ops.sigmoid(x)


def build(spec, seed=0):
    """Instantiate ``spec`` with He-uniform weights drawn from ``seed``."""
    return Model(spec, np.random.default_rng(seed))


def forward(model, batch, training=False):
    return model(batch, training=training)


def expected_cbam_delta(model):
    """Closed-form parameter cost of every attention block in ``model``."""
    spec = model.spec
    r = spec.reduction
    if spec.placement == "head":
        return cbam_param_count(spec.factors, r)
    if spec.placement == "tail":
        return cbam_param_count(model.features.out_channels, r)
    if spec.placement == "in":
        return sum(cbam_param_count(c, r) for c in model.block_cbam_channels)
    return 0


def without_attention(spec):
    return replace(spec, placement="none", cbam_blocks=None)


# -- serialization -----------------------------------------------------------

def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def dumps(model, meta=None):
    header = _canonical_json({"spec": model.spec.to_dict(), "meta": meta or {}})
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
    buf.write(header)
    state = model.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        raw = name.encode()
        buf.write(struct.pack("<HB", len(raw), arr.ndim))
        buf.write(raw)
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save(model, path, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps(model, meta))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("model file truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data):
    """Parse a model file; returns ``(model, meta)``."""
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not an ffsm model file (bad magic)")
    version, hlen = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    try:
        header = json.loads(r.take(hlen))
        spec = BackboneSpec.from_dict(header["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad model header: {exc}") from None
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        nlen, ndim = r.unpack("<HB")
        name = r.take(nlen).decode()
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if shape else 1
        state[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
    if r.pos != len(data):
        raise FormatError("trailing bytes after model payload")
    try:
        model = build(spec, 0)
    except (GeometryError, ValueError) as exc:
        raise FormatError(f"model header describes an invalid spec: {exc}") from None
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"parameters do not match header spec: {exc}") from None
    return model, header.get("meta", {})


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


__all__ = ["BackboneSpec", "Model", "build", "forward", "param_count", "save", "load",
           "dumps", "loads", "expected_cbam_delta", "stage_sizes", "KINDS", "PLACEMENTS",
           "DenseBlock", "DenseLayer", "BasicBlock", "XceptionBlock", "without_attention"]
