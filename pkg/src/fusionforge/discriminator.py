"""Discriminator scoring the probability that an image is a real visible frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generator import PIXEL_EPS, BottleneckBlock, _Stem
from .nn import Linear, ParamStore
from .tensor import ConfigError, ShapeError, Tensor, clamp, relu, sigmoid

__all__ = ["Discriminator", "DiscriminatorConfig", "build_discriminator"]


@dataclass
class DiscriminatorConfig:
    """Mirrors the generator encoder stem plus its first stages, then an
    FC head ending in a sigmoid unit."""

    input_extent: int = 64
    stem_channels: int = 16
    stage_widths: tuple[int, ...] = (16, 32)
    blocks_per_stage: tuple[int, ...] = (2, 2)
    fc_width: int = 128

    def __post_init__(self):
        self.stage_widths = tuple(self.stage_widths)
        self.blocks_per_stage = tuple(self.blocks_per_stage)
        self.validate()

    @property
    def final_extent(self) -> int:
        return self.input_extent // (2 ** len(self.stage_widths))

    @property
    def fc_input_size(self) -> int:
        return self.stage_widths[-1] * self.final_extent * self.final_extent

    def validate(self) -> None:
        if not self.stage_widths:
            raise ConfigError("stage_widths must be non-empty")
        if len(self.blocks_per_stage) != len(self.stage_widths):
            raise ConfigError(
                f"blocks_per_stage has {len(self.blocks_per_stage)} entries for "
                f"{len(self.stage_widths)} stages")
        if any(w < 1 for w in self.stage_widths) or any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError("stage widths and block counts must be positive")
        if self.stem_channels < 1 or self.fc_width < 1:
            raise ConfigError("stem_channels and fc_width must be positive")
        down = 2 ** len(self.stage_widths)
        if self.input_extent % down or self.input_extent // down < 1:
            raise ConfigError(
                f"input_extent {self.input_extent} must be a positive multiple of {down}")


class Discriminator:
    """Encoder stages followed by fully connected layers; parameters live
    under ``disc.``."""

    def __init__(self, config: DiscriminatorConfig, seed: int, dtype=np.float32):
        config.validate()
        self.config = config
        self.store = ParamStore("disc", seed, dtype=dtype)

        self.stem = _Stem(self.store, "stem", config.stem_channels)
        self.stages = []
        c_in = config.stem_channels
        for si, (width, blocks) in enumerate(
                zip(config.stage_widths, config.blocks_per_stage), start=1):
            stage = []
            for bi in range(blocks):
                stage.append(BottleneckBlock(
                    self.store, f"enc{si}.b{bi + 1}",
                    c_in if bi == 0 else width, width,
                    downsample=(bi == 0)))
            self.stages.append(stage)
            c_in = width
        self.fc1 = Linear(self.store, "fc1", config.fc_input_size, config.fc_width)
        self.fc2 = Linear(self.store, "fc2", config.fc_width, 1)

    def forward(self, image: Tensor, bn_mode: str = "eval") -> Tensor:
        """One probability per batch item, shaped (N, 1, 1, 1)."""
        n, c, h, w = image.shape
        if c != 1:
            raise ShapeError(f"discriminator inputs are single-channel, got {c} channels")
        if h != self.config.input_extent or w != self.config.input_extent:
            raise ShapeError(
                f"discriminator expects {self.config.input_extent}x"
                f"{self.config.input_extent} inputs, got {h}x{w}")
        x = self.stem(image, bn_mode)
        for stage in self.stages:
            for block in stage:
                x = block(x, bn_mode)
        x = relu(self.fc1(x))
        return clamp(sigmoid(self.fc2(x)), PIXEL_EPS, 1.0 - PIXEL_EPS)


def build_discriminator(config: DiscriminatorConfig | None = None, seed: int = 0,
                        dtype=np.float32) -> Discriminator:
    """Deterministically initialized discriminator for a given seed."""
    return Discriminator(config or DiscriminatorConfig(), seed, dtype=dtype)
