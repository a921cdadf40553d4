"""Five 1D backbones with late fusion of EHR vectors before the classifier head.

Every model maps a B x 3 x L window batch (plus an optional B x F EHR batch)
to B x 1 logits.  Backbones end in a dense feature layer; the fused vector is
concatenated to those features and a single linear head produces the logit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import functional as F
from .autodiff.nn import Conv1d, Linear, Module, SqueezeExcitation, TransformerEncoderLayer

FAMILIES = ("vgg1d", "resnet1d", "mobilenet1d", "senet1d", "transformer1d")
DEPTHS = ("tiny", "small", "full")
FUSION_WIDTHS = {"demographics": 11, "clinical": 8}
FUSION_ORDER = ("demographics", "clinical")
IN_CHANNELS = 3


class IncompatibleLength(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str
    width_scale: float = 0.25
    depth: str = "small"
    fusion_inputs: frozenset = field(default_factory=frozenset)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.depth not in DEPTHS:
            raise ValueError(f"unknown depth preset {self.depth!r}; expected one of {DEPTHS}")
        unknown = set(self.fusion_inputs) - set(FUSION_WIDTHS)
        if unknown:
            raise ValueError(f"unknown fusion inputs {sorted(unknown)}")
        object.__setattr__(self, "fusion_inputs", frozenset(self.fusion_inputs))

    @property
    def fusion_width(self) -> int:
        return sum(FUSION_WIDTHS[k] for k in self.fusion_inputs)

    def to_dict(self) -> dict:
        return {"family": self.family, "width_scale": self.width_scale, "depth": self.depth,
                "fusion_inputs": [k for k in FUSION_ORDER if k in self.fusion_inputs], "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["family"], d["width_scale"], d["depth"], frozenset(d["fusion_inputs"]), d["seed"])


def _channels(width_scale: float, multiple: int = 1) -> int:
    return max(4, int(round(64 * width_scale))) * multiple


def _hidden(width_scale: float) -> int:
    return max(8, int(round(128 * width_scale)))


# --- VGG -------------------------------------------------------------------------

_VGG = {
    "tiny": (1, "M", 2, "M"),
    "small": (1, "M", 2, "M", 4, "M", 4, "M"),
    "full": (1, "M", 2, "M", 4, 4, "M", 8, 8, "M", 8, 8, "M"),  # VGG-11 layout
}


class VGG1d(Module):
    def __init__(self, depth: str, width_scale: float, rng):
        c = _channels(width_scale)
        self.plan = _VGG[depth]
        convs, cin = [], IN_CHANNELS
        for item in self.plan:
            if item != "M":
                convs.append(Conv1d(cin, c * item, 3, rng, padding=1))
                cin = c * item
        self.convs = convs
        self.dense = Linear(cin, _hidden(width_scale), rng, gain=math.sqrt(2))
        self.out_features = _hidden(width_scale)

    def forward(self, x):
        convs = iter(self.convs)
        for item in self.plan:
            x = F.max_pool1d(x, 2) if item == "M" else ad.relu(next(convs)(x))
        return ad.relu(self.dense(F.global_avg_pool1d(x)))


# --- ResNet / SE-ResNet ------------------------------------------------------------------

class ResidualBlock(Module):
    def __init__(self, cin: int, cout: int, stride: int, rng, squeeze_excite: bool = False):
        self.conv1 = Conv1d(cin, cout, 3, rng, stride=stride, padding=1)
        # damped second conv keeps the un-normalised residual stack well-conditioned
        self.conv2 = Conv1d(cout, cout, 3, rng, padding=1, gain=0.5)
        self.se = SqueezeExcitation(cout, rng) if squeeze_excite else None
        self.shortcut = Conv1d(cin, cout, 1, rng, stride=stride) if (stride != 1 or cin != cout) else None

    def forward(self, x):
        h = self.conv2(ad.relu(self.conv1(x)))
        if self.se is not None:
            h = self.se(h)
        skip = x if self.shortcut is None else self.shortcut(x)
        return ad.relu(h + skip)


_RESNET = {
    "tiny": ((1, 1),),
    "small": ((1, 1), (1, 2), (1, 4)),
    "full": ((2, 1), (2, 2), (2, 4), (2, 8)),  # ResNet-18 stage layout
}


class ResNet1d(Module):
    def __init__(self, depth: str, width_scale: float, rng, squeeze_excite: bool = False):
        c = _channels(width_scale)
        self.stem = Conv1d(IN_CHANNELS, c, 7, rng, stride=2, padding=3)
        blocks, cin = [], c
        for i, (n_blocks, mult) in enumerate(_RESNET[depth]):
            for j in range(n_blocks):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(ResidualBlock(cin, c * mult, stride, rng, squeeze_excite))
                cin = c * mult
        self.blocks = blocks
        self.dense = Linear(cin, _hidden(width_scale), rng, gain=math.sqrt(2))
        self.out_features = _hidden(width_scale)

    def forward(self, x):
        x = F.max_pool1d(ad.relu(self.stem(x)), 2)
        for block in self.blocks:
            x = block(x)
        return ad.relu(self.dense(F.global_avg_pool1d(x)))


# --- MobileNet -------------------------------------------------------------------------

class DepthwiseSeparable(Module):
    def __init__(self, cin: int, cout: int, stride: int, rng):
        self.depthwise = Conv1d(cin, cin, 3, rng, stride=stride, padding=1, groups=cin)
        self.pointwise = Conv1d(cin, cout, 1, rng)

    def forward(self, x):
        return ad.relu(self.pointwise(ad.relu(self.depthwise(x))))


_MOBILENET = {
    "tiny": ((2, 2),),
    "small": ((2, 2), (4, 2), (4, 1), (8, 2)),
    "full": ((2, 1), (4, 2), (4, 1), (8, 2), (8, 1), (16, 2)) + ((16, 1),) * 5 + ((32, 2), (32, 1)),
}


class MobileNet1d(Module):
    def __init__(self, depth: str, width_scale: float, rng):
        c = _channels(width_scale)
        self.stem = Conv1d(IN_CHANNELS, c, 3, rng, stride=2, padding=1)
        blocks, cin = [], c
        for mult, stride in _MOBILENET[depth]:
            blocks.append(DepthwiseSeparable(cin, c * mult, stride, rng))
            cin = c * mult
        self.blocks = blocks
        self.dense = Linear(cin, _hidden(width_scale), rng, gain=math.sqrt(2))
        self.out_features = _hidden(width_scale)

    def forward(self, x):
        x = ad.relu(self.stem(x))
        for block in self.blocks:
            x = block(x)
        return ad.relu(self.dense(F.global_avg_pool1d(x)))


# --- Transformer ----------------------------------------------------------------------------

_TRANSFORMER = {
    "tiny": dict(width=8, heads=2, layers=1, post_channels=4),
    "small": dict(width=32, heads=2, layers=2, post_channels=8),
    "full": dict(width=64, heads=4, layers=4, post_channels=16),
}
MAX_TOKENS = 512


class Transformer1d(Module):
    """Conv patch embedding -> + positional encoding -> encoder layers -> conv -> flatten -> dense."""

    def __init__(self, depth: str, width_scale: float, rng, input_length: int):
        p = _TRANSFORMER[depth]
        self.patch = max(4, math.ceil(input_length / MAX_TOKENS))
        self.tokens_count = input_length // self.patch
        if self.tokens_count < 1:
            raise IncompatibleLength(f"transformer1d needs L >= {self.patch}, got {input_length}")
        width = p["width"]
        self.embed = Conv1d(IN_CHANNELS, width, self.patch, rng, stride=self.patch)
        self.layers = [TransformerEncoderLayer(width, p["heads"], 2 * width, rng) for _ in range(p["layers"])]
        self.post = Conv1d(width, p["post_channels"], 3, rng, stride=2, padding=1)
        flat = p["post_channels"] * self.post.output_length(self.tokens_count)
        self.dense = Linear(flat, _hidden(width_scale), rng, gain=math.sqrt(2))
        self.out_features = _hidden(width_scale)
        self.position = F.positional_encoding(self.tokens_count, width)

    def tokens(self, x):
        """Embedded sequence plus positional encoding, B x T x D."""
        e = self.embed(x)
        if e.shape[-1] != self.tokens_count:
            raise IncompatibleLength(f"model built for {self.tokens_count} tokens, input gives {e.shape[-1]}")
        return ad.transpose(e, (0, 2, 1)) + self.position

    def forward(self, x):
        h = self.tokens(x)
        for layer in self.layers:
            h = layer(h)
        h = ad.relu(self.post(ad.transpose(h, (0, 2, 1))))
        return ad.relu(self.dense(F.flatten(h)))


# --- assembled model -------------------------------------------------------------------------

class AcuityNet(Module):
    def __init__(self, spec: ModelSpec, input_length: int, backbone: Module, rng):
        self.spec = spec
        self.input_length = input_length
        self.backbone = backbone
        self.head = Linear(backbone.out_features + spec.fusion_width, 1, rng)

    def forward(self, x, ehr=None):
        x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        if x.ndim != 3 or x.shape[1] != IN_CHANNELS:
            raise ValueError(f"expected B x {IN_CHANNELS} x L input, got {x.shape}")
        if x.shape[-1] != self.input_length:
            raise IncompatibleLength(f"model built for L={self.input_length}, got {x.shape[-1]}")
        features = self.backbone(x)
        width = self.spec.fusion_width
        if width:
            if ehr is None:
                raise ValueError(f"model fuses {width} EHR features but none were given")
            ehr = ehr if isinstance(ehr, ad.Tensor) else ad.Tensor(ehr)
            if ehr.shape != (x.shape[0], width):
                raise ValueError(f"EHR batch shape {ehr.shape} != {(x.shape[0], width)}")
            features = ad.concat([features, ehr], axis=1)
        elif ehr is not None and np.size(ehr.data if isinstance(ehr, ad.Tensor) else ehr):
            raise ValueError("accel-only model given EHR features")
        return self.head(features)


def build(spec: ModelSpec, input_length: int) -> AcuityNet:
    rng = np.random.default_rng(spec.seed)
    if spec.family == "vgg1d":
        backbone = VGG1d(spec.depth, spec.width_scale, rng)
    elif spec.family == "resnet1d":
        backbone = ResNet1d(spec.depth, spec.width_scale, rng)
    elif spec.family == "senet1d":
        backbone = ResNet1d(spec.depth, spec.width_scale, rng, squeeze_excite=True)
    elif spec.family == "mobilenet1d":
        backbone = MobileNet1d(spec.depth, spec.width_scale, rng)
    else:
        backbone = Transformer1d(spec.depth, spec.width_scale, rng, input_length)
    model = AcuityNet(spec, input_length, backbone, rng)
    with ad.no_grad():
        try:
            backbone(ad.Tensor(np.zeros((1, IN_CHANNELS, input_length))))
        except ValueError as exc:
            raise IncompatibleLength(f"{spec.family}/{spec.depth} cannot take L={input_length}: {exc}") from None
    return model


def forward_fused(model: AcuityNet, window, ehr=None) -> float:
    """Logit for one window (SampleWindow or 3 x L array) and optional fused EHR vector."""
    data = getattr(window, "data", window)
    batch_ehr = None if ehr is None else np.asarray(ehr, dtype=np.float64)[None, :]
    if batch_ehr is not None and batch_ehr.shape[1] != model.spec.fusion_width:
        raise ValueError(f"EHR vector length {batch_ehr.shape[1]} != {model.spec.fusion_width}")
    with ad.no_grad():
        return float(model(np.asarray(data, dtype=np.float64)[None], batch_ehr).data[0, 0])


def count_params(model: Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))
