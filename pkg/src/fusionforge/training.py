"""Adversarial training loop, weight grid search, fusion inference, reports.

One training step runs ``disc_steps_per_gen_step`` discriminator updates
(cross-entropy on the current fused batch versus real visible patches),
then one generator update of the content + adversarial objective.  The
trajectory is a deterministic function of (seed, config, dataset).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    DatasetError,
    DatasetManifest,
    ImagePair,
    PatchSpec,
    load_grayscale,
    sample_patches,
)
from .discriminator import Discriminator, DiscriminatorConfig, build_discriminator
from .generator import Generator, GeneratorConfig, build_generator
from .losses import (
    LossReport,
    LossWeights,
    content_loss,
    disc_loss,
    gen_adv_loss,
    generator_total,
    write_loss_log,
)
from .metrics import MetricRow, evaluate, format_markdown, write_report_csv
from .optim import AdamState, adam_step
from .tensor import ConfigError, Tensor, backward, no_grad

__all__ = [
    "GridCell",
    "GridSpec",
    "NumericsError",
    "TrainConfig",
    "TrainResult",
    "evaluate_report",
    "fuse_pair",
    "grid_search",
    "load_generator",
    "train",
]


class NumericsError(RuntimeError):
    """A loss term went non-finite; carries the step and term values."""

    def __init__(self, step: int, terms: dict[str, float]):
        self.step = step
        self.terms = terms
        detail = ", ".join(f"{k}={v!r}" for k, v in terms.items())
        super().__init__(f"non-finite loss at step {step}: {detail}")


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 200
    batch_size: int = 4
    gen_lr: float = 1e-3
    disc_lr: float = 1e-4
    disc_steps_per_gen_step: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    adv_mode: str = "saturating"
    patch_size: int = 64
    patch_stride: int = 32
    checkpoint_interval: int = 100
    holdout_fraction: float = 0.0
    data_seed: int | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig | None = None

    def __post_init__(self):
        if self.discriminator is None:
            self.discriminator = DiscriminatorConfig(input_extent=self.patch_size)
        self.validate()

    def validate(self) -> None:
        for name in ("steps", "batch_size", "disc_steps_per_gen_step",
                     "patch_size", "patch_stride", "checkpoint_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.gen_lr <= 0 or self.disc_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError(
                f"holdout_fraction must lie in [0, 1), got {self.holdout_fraction}")
        if self.patch_size % self.generator.input_multiple:
            raise ConfigError(
                f"patch_size {self.patch_size} must be a multiple of the generator "
                f"input multiple {self.generator.input_multiple}")
        if self.discriminator.input_extent != self.patch_size:
            raise ConfigError(
                f"discriminator input extent {self.discriminator.input_extent} "
                f"must equal patch_size {self.patch_size}")

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    # -- key=value round trip ---------------------------------------------

    def to_text(self) -> str:
        g, d = self.generator, self.discriminator
        pairs = [
            ("seed", self.seed),
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("gen_lr", repr(self.gen_lr)),
            ("disc_lr", repr(self.disc_lr)),
            ("disc_steps_per_gen_step", self.disc_steps_per_gen_step),
            ("alpha", repr(self.weights.alpha)),
            ("beta", repr(self.weights.beta)),
            ("adv_mode", self.adv_mode),
            ("patch_size", self.patch_size),
            ("patch_stride", self.patch_stride),
            ("checkpoint_interval", self.checkpoint_interval),
            ("holdout_fraction", repr(self.holdout_fraction)),
            ("data_seed", "none" if self.data_seed is None else self.data_seed),
            ("gen_stem_channels", g.stem_channels),
            ("gen_stage_widths", ",".join(map(str, g.stage_widths))),
            ("gen_blocks_per_stage", ",".join(map(str, g.blocks_per_stage))),
            ("gen_fuse_mode", g.fuse_mode),
            ("gen_feed_fused_forward", str(g.feed_fused_forward).lower()),
            ("disc_stem_channels", d.stem_channels),
            ("disc_stage_widths", ",".join(map(str, d.stage_widths))),
            ("disc_blocks_per_stage", ",".join(map(str, d.blocks_per_stage))),
            ("disc_fc_width", d.fc_width),
        ]
        return "\n".join(f"{k} = {v}" for k, v in pairs) + "\n"

    @staticmethod
    def from_text(text: str) -> "TrainConfig":
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"config line {lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            raw[key.strip()] = value.strip()

        def pop_int(key, default):
            return int(raw.pop(key)) if key in raw else default

        def pop_float(key, default):
            return float(raw.pop(key)) if key in raw else default

        def pop_str(key, default):
            return raw.pop(key) if key in raw else default

        def pop_ints(key, default):
            if key not in raw:
                return default
            return tuple(int(v) for v in raw.pop(key).split(","))

        def pop_bool(key, default):
            if key not in raw:
                return default
            value = raw.pop(key).lower()
            if value not in ("true", "false"):
                raise ConfigError(f"{key} must be true or false, got {value!r}")
            return value == "true"

        data_seed_raw = pop_str("data_seed", "none")
        patch_size = pop_int("patch_size", 64)
        gen_cfg = GeneratorConfig(
            stem_channels=pop_int("gen_stem_channels", 16),
            stage_widths=pop_ints("gen_stage_widths", (16, 32, 64, 128)),
            blocks_per_stage=pop_ints("gen_blocks_per_stage", (2, 2, 2, 2)),
            fuse_mode=pop_str("gen_fuse_mode", "sum"),
            feed_fused_forward=pop_bool("gen_feed_fused_forward", False),
        )
        disc_cfg = DiscriminatorConfig(
            input_extent=patch_size,
            stem_channels=pop_int("disc_stem_channels", 16),
            stage_widths=pop_ints("disc_stage_widths", (16, 32)),
            blocks_per_stage=pop_ints("disc_blocks_per_stage", (2, 2)),
            fc_width=pop_int("disc_fc_width", 128),
        )
        config = TrainConfig(
            seed=pop_int("seed", 0),
            steps=pop_int("steps", 200),
            batch_size=pop_int("batch_size", 4),
            gen_lr=pop_float("gen_lr", 1e-3),
            disc_lr=pop_float("disc_lr", 1e-4),
            disc_steps_per_gen_step=pop_int("disc_steps_per_gen_step", 1),
            weights=LossWeights(alpha=pop_float("alpha", 1.0),
                                beta=pop_float("beta", 0.5)),
            adv_mode=pop_str("adv_mode", "saturating"),
            patch_size=patch_size,
            patch_stride=pop_int("patch_stride", 32),
            checkpoint_interval=pop_int("checkpoint_interval", 100),
            holdout_fraction=pop_float("holdout_fraction", 0.0),
            data_seed=None if data_seed_raw == "none" else int(data_seed_raw),
            generator=gen_cfg,
            discriminator=disc_cfg,
        )
        if raw:
            raise ConfigError(f"unknown config keys: {sorted(raw)}")
        return config


@dataclass
class TrainResult:
    out_dir: Path
    checkpoint_path: Path
    log_path: Path
    reports: list[LossReport]
    holdout_content: float | None
    generator: Generator
    discriminator: Discriminator


# ---------------------------------------------------------------------------
# patch pipeline


def _gather_patches(manifest: DatasetManifest, config: TrainConfig
                    ) -> tuple[np.ndarray, np.ndarray]:
    entries = manifest.split_entries("train")
    if not entries:
        raise DatasetError("manifest has no train-split pairs")
    spec = PatchSpec(size=config.patch_size, stride=config.patch_stride,
                     seed=config.effective_data_seed)
    vis, ir = [], []
    for entry in entries:
        pair = manifest.load_pair(entry)
        for patch in sample_patches(pair, spec):
            vis.append(patch.visible)
            ir.append(patch.infrared)
    v = np.stack(vis)[:, None].astype(np.float32)
    i = np.stack(ir)[:, None].astype(np.float32)
    order = np.random.default_rng(config.effective_data_seed).permutation(len(v))
    return v[order], i[order]


def _split_holdout(v: np.ndarray, i: np.ndarray, fraction: float):
    n_hold = int(round(fraction * len(v)))
    if fraction > 0:
        n_hold = max(n_hold, 1)
    if n_hold >= len(v):
        raise DatasetError(
            f"holdout fraction {fraction} leaves no training patches (have {len(v)})")
    return (v[n_hold:], i[n_hold:]), (v[:n_hold], i[:n_hold])


def _batch_stream(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        perm = rng.permutation(n)
        if n < batch_size:
            yield np.resize(perm, batch_size)
            continue
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start:start + batch_size]


def _refresh_running_stats(generator: Generator, v: np.ndarray, i: np.ndarray,
                           limit: int = 64) -> None:
    """Set batchnorm running stats to the population statistics of (a cap
    of) the training patches at the final parameters, so eval-mode fusion
    sees the same normalization the network trained under."""
    v, i = v[:limit], i[:limit]
    bns = generator.store.batchnorms
    saved = [bn.momentum for bn in bns]
    for bn in bns:
        bn.momentum = 1.0
    try:
        with no_grad():
            generator.forward(Tensor(v), Tensor(i), bn_mode="train")
    finally:
        for bn, momentum in zip(bns, saved):
            bn.momentum = momentum


def _content_on(generator: Generator, v: np.ndarray, i: np.ndarray,
                weights: LossWeights, batch_size: int) -> float:
    """Eval-mode content loss over a patch set, mean over patches."""
    total = 0.0
    with no_grad():
        for start in range(0, len(v), batch_size):
            vb = Tensor(v[start:start + batch_size])
            ib = Tensor(i[start:start + batch_size])
            fb = generator.forward(vb, ib, bn_mode="eval")
            terms = content_loss(fb, vb, ib, weights)
            total += terms.total.item() * len(vb.data)
    return total / len(v)


# ---------------------------------------------------------------------------
# training


def train(config: TrainConfig, manifest: DatasetManifest,
          out_dir: str | Path) -> TrainResult:
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()

    v_all, i_all = _gather_patches(manifest, config)
    (v_train, i_train), (v_hold, i_hold) = _split_holdout(
        v_all, i_all, config.holdout_fraction)

    generator = build_generator(config.generator, seed=config.seed)
    discriminator = build_discriminator(config.discriminator, seed=config.seed + 1)
    gen_state = AdamState(lr=config.gen_lr)
    disc_state = AdamState(lr=config.disc_lr)
    batches = _batch_stream(len(v_train), config.batch_size,
                            np.random.default_rng(config.seed + 2))

    reports: list[LossReport] = []
    log_path = out_dir / "log.csv"
    final_path = out_dir / "checkpoint_final.ckpt"

    def save(path: Path) -> None:
        arrays = generator.store.state_arrays() | discriminator.store.state_arrays()
        save_checkpoint(path, arrays, config.to_text())

    try:
        for step in range(1, config.steps + 1):
            disc_value = float("nan")
            for _ in range(config.disc_steps_per_gen_step):
                idx = next(batches)
                vb = Tensor(v_train[idx])
                ib = Tensor(i_train[idx])
                with no_grad():
                    fb = generator.forward(vb, ib, bn_mode="frozen")
                d_fused = discriminator.forward(fb, bn_mode="train")
                d_vis = discriminator.forward(vb, bn_mode="train")
                loss_d = disc_loss(d_fused, d_vis)
                disc_value = loss_d.item()
                if not np.isfinite(disc_value):
                    raise NumericsError(step, {"disc": disc_value})
                discriminator.store.zero_grad()
                backward(loss_d)
                adam_step(discriminator.store.parameters(), disc_state)

            idx = next(batches)
            vb = Tensor(v_train[idx])
            ib = Tensor(i_train[idx])
            fb = generator.forward(vb, ib, bn_mode="train")
            terms = content_loss(fb, vb, ib, config.weights)
            discriminator.store.set_trainable(False)
            # Frozen batch statistics keep the scored discriminator in the
            # same normalization regime it trains under; scoring against
            # running-stat normalization turns the game into two different
            # functions and destabilizes the generator.
            d_fused = discriminator.forward(fb, bn_mode="frozen")
            adv = gen_adv_loss(d_fused, config.adv_mode)
            total = generator_total(terms.total, adv)
            generator.store.zero_grad()
            backward(total)
            adam_step(generator.store.parameters(), gen_state)
            discriminator.store.set_trainable(True)

            report = LossReport(
                step=step,
                disc=disc_value,
                content=terms.total.item(),
                mse_ir=terms.mse_ir.item(),
                mse_vis=terms.mse_vis.item(),
                tv=terms.tv.item(),
                gen_adv=adv.item(),
                generator_total=total.item(),
            )
            if not all(np.isfinite(v) for v in report.terms().values()):
                raise NumericsError(step, report.terms())
            reports.append(report)

            if step % config.checkpoint_interval == 0 and step != config.steps:
                save(out_dir / f"checkpoint_{step:06d}.ckpt")
        _refresh_running_stats(generator, v_train, i_train)
        save(final_path)
    finally:
        write_loss_log(log_path, reports)
        (out_dir / "config.txt").write_text(config.to_text(), encoding="utf-8")
        (out_dir / "meta.txt").write_text(
            f"started = {started}\nfinished = {time.time()}\n", encoding="utf-8")

    holdout_content = None
    if len(v_hold):
        holdout_content = _content_on(generator, v_hold, i_hold, config.weights,
                                      config.batch_size)

    return TrainResult(
        out_dir=out_dir,
        checkpoint_path=final_path,
        log_path=log_path,
        reports=reports,
        holdout_content=holdout_content,
        generator=generator,
        discriminator=discriminator,
    )


# ---------------------------------------------------------------------------
# grid search


@dataclass(frozen=True)
class GridSpec:
    alphas: tuple[float, ...]
    betas: tuple[float, ...]
    selection: str = "content"

    def __post_init__(self):
        if not self.alphas or not self.betas:
            raise ConfigError("grid must contain at least one alpha and one beta")
        if any(b < 0 or b > 1 for b in self.betas):
            raise ConfigError(f"betas must lie in [0, 1], got {self.betas}")
        if self.selection != "content":
            raise ConfigError(
                f"only the held-out content selection metric is supported, "
                f"got {self.selection!r}")


@dataclass(frozen=True)
class GridCell:
    alpha: float
    beta: float
    holdout_content: float


def grid_search(grid: GridSpec, base: TrainConfig, manifest: DatasetManifest,
                out_dir: str | Path) -> tuple[LossWeights, list[GridCell]]:
    """Short run per (alpha, beta) cell; argmin of held-out content loss.

    All cells share the base data seed, so they train and are scored on
    identical patch splits; only the trajectory seed varies per cell.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    holdout = base.holdout_fraction if base.holdout_fraction > 0 else 0.25
    cells: list[GridCell] = []
    for index, (alpha, beta) in enumerate(itertools.product(grid.alphas, grid.betas)):
        config = replace(
            base,
            weights=LossWeights(alpha=alpha, beta=beta),
            seed=base.seed + 101 * (index + 1),
            data_seed=base.effective_data_seed,
            holdout_fraction=holdout,
        )
        result = train(config, manifest, out_dir / f"cell{index:02d}")
        cells.append(GridCell(alpha=alpha, beta=beta,
                              holdout_content=result.holdout_content))

    lines = ["alpha,beta,holdout_content"]
    lines += [f"{c.alpha},{c.beta},{c.holdout_content}" for c in cells]
    (out_dir / "grid.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    best = min(cells, key=lambda c: c.holdout_content)
    return LossWeights(alpha=best.alpha, beta=best.beta), cells


# ---------------------------------------------------------------------------
# inference and reports


def load_generator(checkpoint_path: str | Path) -> tuple[Generator, TrainConfig]:
    """Rebuild the generator recorded in a checkpoint's config echo."""
    arrays, config_text = load_checkpoint(checkpoint_path)
    if config_text is None:
        raise CheckpointError(f"{checkpoint_path} carries no config echo")
    config = TrainConfig.from_text(config_text)
    generator = build_generator(config.generator, seed=0)
    generator.store.load_arrays(arrays)
    return generator, config


def _pad_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    h, w = img.shape
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if not pad_h and not pad_w:
        return img
    # reflect needs pad < dim; fall back to edge replication for tiny inputs
    mode = "reflect" if pad_h < h and pad_w < w else "edge"
    return np.pad(img, ((0, pad_h), (0, pad_w)), mode=mode)


def fuse_pair(generator: Generator, pair: ImagePair) -> np.ndarray:
    """Eval-mode full-image fusion; output dims equal input dims."""
    h, w = pair.shape
    multiple = generator.config.input_multiple
    v = _pad_to_multiple(pair.visible, multiple)
    i = _pad_to_multiple(pair.infrared, multiple)
    with no_grad():
        out = generator.forward(
            Tensor(v[None, None].astype(np.float32)),
            Tensor(i[None, None].astype(np.float32)),
            bn_mode="eval")
    return out.data[0, 0, :h, :w].astype(np.float64)


def evaluate_report(fused_dir: str | Path, manifest: DatasetManifest,
                    report_prefix: str | Path
                    ) -> tuple[list[MetricRow], list[str]]:
    """Score every manifest pair against its fused image.

    Missing fused images are listed and skipped; callers decide whether
    that is fatal (the CLI exits non-zero).
    """
    fused_dir = Path(fused_dir)
    rows: list[MetricRow] = []
    missing: list[str] = []
    for entry in manifest.entries:
        fused_path = None
        for suffix in (".png", ".pgm"):
            candidate = fused_dir / f"{entry.id}{suffix}"
            if candidate.is_file():
                fused_path = candidate
                break
        if fused_path is None:
            missing.append(entry.id)
            continue
        pair = manifest.load_pair(entry)
        fused = load_grayscale(fused_path)
        if fused.shape != pair.shape:
            raise DatasetError(
                f"fused image {fused_path} has shape {fused.shape}, "
                f"pair {entry.id!r} has {pair.shape}")
        rows.append(evaluate(fused, pair.visible, pair.infrared, entry.id))
    if not rows:
        raise DatasetError(f"no fused images under {fused_dir} match the manifest")

    prefix = Path(report_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_report_csv(prefix.with_suffix(".csv"), rows)
    prefix.with_suffix(".md").write_text(format_markdown(rows), encoding="utf-8")
    return rows, missing
