"""Residual autoencoder generator for visible/infrared fusion.

Two weight-independent encoder branches downsample the visible and
infrared inputs through bottleneck stages; the per-stage latent maps are
merged by elementwise adders, decoded through residual upsampling stages,
and re-injected via agant-projected skip connections.  The final
transposed-conv layer plus sigmoid produces a fused image in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, ParamStore
from .tensor import ConfigError, ShapeError, Tensor, add, clamp, relu, scale, sigmoid

# Keeps saturated float32 sigmoids strictly inside (0, 1).
PIXEL_EPS = 1e-6

__all__ = [
    "BottleneckBlock",
    "AgantLayer",
    "Generator",
    "GeneratorConfig",
    "TransBasicBlock",
    "build_generator",
    "fuse_latents",
]

FUSE_MODES = ("sum", "average")


@dataclass
class GeneratorConfig:
    stem_channels: int = 16
    stage_widths: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_stage: tuple[int, ...] = (2, 2, 2, 2)
    decoder_widths: tuple[int, ...] = field(default=None)  # defaults to mirrored encoder widths
    fuse_mode: str = "sum"
    feed_fused_forward: bool = False

    def __post_init__(self):
        self.stage_widths = tuple(self.stage_widths)
        self.blocks_per_stage = tuple(self.blocks_per_stage)
        if self.decoder_widths is None:
            self.decoder_widths = tuple(reversed(self.stage_widths))
        else:
            self.decoder_widths = tuple(self.decoder_widths)
        self.validate()

    @property
    def num_stages(self) -> int:
        return len(self.stage_widths)

    @property
    def input_multiple(self) -> int:
        """Spatial extents must be divisible by 2^(number of stages)."""
        return 2 ** self.num_stages

    def validate(self) -> None:
        if self.stem_channels < 1:
            raise ConfigError(f"stem_channels must be positive, got {self.stem_channels}")
        if not self.stage_widths:
            raise ConfigError("stage_widths must be non-empty")
        if len(self.blocks_per_stage) != self.num_stages:
            raise ConfigError(
                f"blocks_per_stage has {len(self.blocks_per_stage)} entries for "
                f"{self.num_stages} stages")
        if any(w < 1 for w in self.stage_widths):
            raise ConfigError(f"stage widths must be positive, got {self.stage_widths}")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError(f"block counts must be positive, got {self.blocks_per_stage}")
        if self.decoder_widths != tuple(reversed(self.stage_widths)):
            raise ConfigError(
                f"decoder_widths {self.decoder_widths} must mirror stage_widths "
                f"{self.stage_widths} in reverse")
        if self.fuse_mode not in FUSE_MODES:
            raise ConfigError(f"fuse_mode must be one of {FUSE_MODES}, got {self.fuse_mode!r}")


def fuse_latents(feat_a: Tensor, feat_b: Tensor, mode: str = "sum") -> Tensor:
    """Merge two same-shape latent maps with an elementwise adder."""
    if feat_a.shape != feat_b.shape:
        raise ShapeError(
            f"fuse_latents: latent shapes differ, {feat_a.shape} vs {feat_b.shape}")
    fused = add(feat_a, feat_b)
    if mode == "average":
        fused = scale(fused, 0.5)
    elif mode != "sum":
        raise ConfigError(f"fuse mode must be one of {FUSE_MODES}, got {mode!r}")
    return fused


class BottleneckBlock:
    """Residual encoder unit: 1x1 reduce, 3x3 (stride 2 when downsampling),
    1x1 expand, each followed by batchnorm; relu between; agant shortcut
    when the shapes change."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 downsample: bool):
        mid = max(c_out // 4, 1)
        stride = 2 if downsample else 1
        self.conv1 = Conv2d(store, f"{name}.conv1", c_in, mid, 1)
        self.bn1 = BatchNorm2d(store, f"{name}.bn1", mid)
        self.conv2 = Conv2d(store, f"{name}.conv2", mid, mid, 3,
                            stride=stride, padding=1)
        self.bn2 = BatchNorm2d(store, f"{name}.bn2", mid)
        self.conv3 = Conv2d(store, f"{name}.conv3", mid, c_out, 1)
        # residual path starts silent so a fresh block is its shortcut
        self.bn3 = BatchNorm2d(store, f"{name}.bn3", c_out, zero_gamma=True)
        if downsample or c_in != c_out:
            self.shortcut = AgantLayer(store, f"{name}.shortcut", c_in, c_out,
                                       stride=stride)
        else:
            self.shortcut = None

    def __call__(self, x: Tensor, bn_mode: str = "eval") -> Tensor:
        h = relu(self.bn1(self.conv1(x), bn_mode))
        h = relu(self.bn2(self.conv2(h), bn_mode))
        h = self.bn3(self.conv3(h), bn_mode)
        sc = x if self.shortcut is None else self.shortcut(x, bn_mode)
        return relu(add(h, sc))


class TransBasicBlock:
    """Residual decoder unit; the spatial resize sits at the end of the
    block (inverse of the encoder ordering), done by a stride-2 transposed
    convolution in both the residual path and the shortcut."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 upsample: bool):
        self.conv1 = Conv2d(store, f"{name}.conv1", c_in, c_in, 3, padding=1)
        self.bn1 = BatchNorm2d(store, f"{name}.bn1", c_in)
        if upsample:
            # kernel 4 gives even overlap at stride 2 (no checkerboard)
            self.conv2 = ConvTranspose2d(store, f"{name}.conv2", c_in, c_out, 4,
                                         stride=2, padding=1)
        else:
            self.conv2 = Conv2d(store, f"{name}.conv2", c_in, c_out, 3, padding=1)
        self.bn2 = BatchNorm2d(store, f"{name}.bn2", c_out, zero_gamma=True)
        if upsample:
            self.shortcut_conv = ConvTranspose2d(store, f"{name}.shortcut.conv",
                                                 c_in, c_out, 2, stride=2)
            self.shortcut_bn = BatchNorm2d(store, f"{name}.shortcut.bn", c_out)
        elif c_in != c_out:
            self.shortcut_conv = Conv2d(store, f"{name}.shortcut.conv", c_in, c_out, 1)
            self.shortcut_bn = BatchNorm2d(store, f"{name}.shortcut.bn", c_out)
        else:
            self.shortcut_conv = None
            self.shortcut_bn = None

    def __call__(self, x: Tensor, bn_mode: str = "eval") -> Tensor:
        h = relu(self.bn1(self.conv1(x), bn_mode))
        h = self.bn2(self.conv2(h), bn_mode)
        if self.shortcut_conv is None:
            sc = x
        else:
            sc = self.shortcut_bn(self.shortcut_conv(x), bn_mode)
        return relu(add(h, sc))


class AgantLayer:
    """1x1 convolution plus batchnorm, used on shortcut and skip paths."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 stride: int = 1):
        self.conv = Conv2d(store, f"{name}.conv", c_in, c_out, 1, stride=stride)
        self.bn = BatchNorm2d(store, f"{name}.bn", c_out)

    def __call__(self, x: Tensor, bn_mode: str = "eval") -> Tensor:
        return self.bn(self.conv(x), bn_mode)


class _Stem:
    def __init__(self, store: ParamStore, name: str, c_out: int):
        self.conv = Conv2d(store, f"{name}.conv", 1, c_out, 3, padding=1)
        self.bn = BatchNorm2d(store, f"{name}.bn", c_out)

    def __call__(self, x: Tensor, bn_mode: str) -> Tensor:
        return relu(self.bn(self.conv(x), bn_mode))


class Generator:
    """The full residual autoencoder; parameters live under ``gen.``."""

    def __init__(self, config: GeneratorConfig, seed: int, dtype=np.float32):
        config.validate()
        self.config = config
        self.store = ParamStore("gen", seed, dtype=dtype)

        self.stems = {}
        self.encoders = {}
        for branch in ("vis", "ir"):
            self.stems[branch] = _Stem(self.store, f"{branch}.stem", config.stem_channels)
            stages = []
            c_in = config.stem_channels
            for si, (width, blocks) in enumerate(
                    zip(config.stage_widths, config.blocks_per_stage), start=1):
                stage = []
                for bi in range(blocks):
                    stage.append(BottleneckBlock(
                        self.store, f"{branch}.enc{si}.b{bi + 1}",
                        c_in if bi == 0 else width, width,
                        downsample=(bi == 0)))
                stages.append(stage)
                c_in = width
            self.encoders[branch] = stages

        n = config.num_stages
        self.agants = []
        # agant index s projects the fused output of encoder stage s; the
        # deepest one feeds the decoder input, the rest feed skip adds.
        for si in range(1, n + 1):
            width = config.stage_widths[si - 1]
            self.agants.append(AgantLayer(self.store, f"agant{si}", width, width))

        self.decoders = []
        dec_blocks = tuple(reversed(config.blocks_per_stage))
        in_widths = config.decoder_widths
        out_widths = config.decoder_widths[1:] + (config.stem_channels,)
        for di in range(n):
            c_in, c_out = in_widths[di], out_widths[di]
            stage = []
            for bi in range(dec_blocks[di]):
                last = bi == dec_blocks[di] - 1
                stage.append(TransBasicBlock(
                    self.store, f"dec{di + 1}.b{bi + 1}",
                    c_in, c_out if last else c_in, upsample=last))
            self.decoders.append(stage)

        self.head = ConvTranspose2d(self.store, "head", config.stem_channels, 1, 3,
                                    padding=1)

    # -- forward ---------------------------------------------------------

    def _check_inputs(self, visible: Tensor, infrared: Tensor) -> None:
        if visible.shape != infrared.shape:
            raise ShapeError(
                f"visible/infrared shapes differ: {visible.shape} vs {infrared.shape}")
        n, c, h, w = visible.shape
        if c != 1:
            raise ShapeError(f"inputs must be single-channel, got {c} channels")
        mult = self.config.input_multiple
        if h % mult or w % mult:
            raise ShapeError(
                f"spatial extents {h}x{w} must be divisible by {mult}")
        for name, t in (("visible", visible), ("infrared", infrared)):
            lo, hi = float(t.data.min()), float(t.data.max())
            if lo < 0.0 or hi > 1.0:
                raise ValueError(
                    f"{name} values must lie in [0, 1], got range [{lo}, {hi}]")

    def encode_branch(self, x: Tensor, branch: str, bn_mode: str = "eval") -> list[Tensor]:
        """Per-stage features of one branch (no fusion applied)."""
        h = self.stems[branch](x, bn_mode)
        feats = []
        for stage in self.encoders[branch]:
            for block in stage:
                h = block(h, bn_mode)
            feats.append(h)
        return feats

    def forward(self, visible: Tensor, infrared: Tensor,
                bn_mode: str = "eval") -> Tensor:
        """Fused image with the same shape as the inputs, entries in (0, 1)."""
        self._check_inputs(visible, infrared)
        cfg = self.config

        hv = self.stems["vis"](visible, bn_mode)
        hi = self.stems["ir"](infrared, bn_mode)
        fused_stages: list[Tensor] = []
        for sv, si_ in zip(self.encoders["vis"], self.encoders["ir"]):
            for block in sv:
                hv = block(hv, bn_mode)
            for block in si_:
                hi = block(hi, bn_mode)
            fused = fuse_latents(hv, hi, cfg.fuse_mode)
            fused_stages.append(fused)
            if cfg.feed_fused_forward:
                hv = fused
                hi = fused

        n = cfg.num_stages
        x = self.agants[n - 1](fused_stages[n - 1], bn_mode)
        for di, stage in enumerate(self.decoders):
            for block in stage:
                x = block(x, bn_mode)
            skip_stage = n - 2 - di
            if skip_stage >= 0:
                skip = self.agants[skip_stage](fused_stages[skip_stage], bn_mode)
                x = add(x, skip)
        return clamp(sigmoid(self.head(x)), PIXEL_EPS, 1.0 - PIXEL_EPS)


def build_generator(config: GeneratorConfig | None = None, seed: int = 0,
                    dtype=np.float32) -> Generator:
    """Deterministically initialized generator for a given seed."""
    return Generator(config or GeneratorConfig(), seed, dtype=dtype)
