"""Dataset handling: registered pair loading, patch sampling, synthetic pairs.

Images are 8-bit grayscale PNG or PGM files; in memory a ``GrayImage`` is
a 2-D float64 array scaled to [0, 1].  On-disk layout for a dataset root::

    root/<pair_id>/vis.png   (or .pgm)
    root/<pair_id>/ir.png    (or .pgm)

Manifests persist as line-oriented UTF-8:
``id<TAB>vis_path<TAB>ir_path<TAB>split``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import ConfigError

__all__ = [
    "DatasetError",
    "DatasetManifest",
    "DecodeError",
    "ImagePair",
    "ManifestEntry",
    "PatchSpec",
    "build_manifest",
    "load_grayscale",
    "sample_patches",
    "save_grayscale",
    "synthesize_dataset",
    "synthesize_pair",
]

IMAGE_SUFFIXES = (".png", ".pgm")


class DatasetError(Exception):
    """Dataset layout or contents are unusable."""


class DecodeError(DatasetError):
    """An image file could not be decoded as 8-bit grayscale."""


def load_grayscale(path: str | Path) -> np.ndarray:
    """Load an 8-bit grayscale PNG/PGM as a [0, 1] float64 array."""
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise DecodeError(f"{path}: unsupported format {path.suffix!r} (need PNG or PGM)")
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise DecodeError(
                    f"{path}: expected 8-bit grayscale, got mode {img.mode!r}")
            arr = np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise DecodeError(f"{path}: cannot decode image ({exc})") from exc
    return arr.astype(np.float64) / 255.0


def save_grayscale(path: str | Path, img: np.ndarray) -> None:
    """Quantize a [0, 1] image to 8 bits and write PNG/PGM by extension."""
    path = Path(path)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    levels = np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(levels, mode="L").save(path)


@dataclass
class ImagePair:
    """A registered visible/infrared pair; both channels share dimensions."""

    visible: np.ndarray
    infrared: np.ndarray
    id: str

    def __post_init__(self):
        if self.visible.shape != self.infrared.shape:
            raise DatasetError(
                f"pair {self.id!r}: visible {self.visible.shape} and infrared "
                f"{self.infrared.shape} dimensions differ")

    @property
    def shape(self) -> tuple[int, int]:
        return self.visible.shape


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    visible_path: str
    infrared_path: str
    split: str = "train"


@dataclass
class DatasetManifest:
    root: str
    entries: list[ManifestEntry]
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def load_pair(self, entry: ManifestEntry) -> ImagePair:
        return ImagePair(
            visible=load_grayscale(entry.visible_path),
            infrared=load_grayscale(entry.infrared_path),
            id=entry.id,
        )

    def save(self, path: str | Path) -> None:
        lines = [f"{e.id}\t{e.visible_path}\t{e.infrared_path}\t{e.split}"
                 for e in self.entries]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                              encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "DatasetManifest":
        entries = []
        for lineno, line in enumerate(
                Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 tab-separated fields")
            entries.append(ManifestEntry(*parts))
        return DatasetManifest(root=str(Path(path).parent), entries=entries)


def _find_image(pair_dir: Path, stem: str) -> Path | None:
    for suffix in IMAGE_SUFFIXES:
        candidate = pair_dir / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def build_manifest(root: str | Path, split: str = "train") -> DatasetManifest:
    """Scan ``root/<id>/{vis,ir}.(png|pgm)`` into a sorted manifest.

    Pairs missing one half are skipped with a warning record; an empty
    result is a dataset error.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    entries: list[ManifestEntry] = []
    warnings: list[str] = []
    for pair_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        vis = _find_image(pair_dir, "vis")
        ir = _find_image(pair_dir, "ir")
        if vis is None or ir is None:
            missing = "vis" if vis is None else "ir"
            warnings.append(f"{pair_dir.name}: missing {missing} image, pair skipped")
            continue
        entries.append(ManifestEntry(
            id=pair_dir.name,
            visible_path=str(vis),
            infrared_path=str(ir),
            split=split,
        ))
    if not entries:
        raise DatasetError(f"no complete visible/infrared pairs under {root}")
    return DatasetManifest(root=str(root), entries=entries, warnings=warnings)


@dataclass(frozen=True)
class PatchSpec:
    """Aligned crop sampling: grid coverage by stride, then seeded shuffle."""

    size: int = 64
    stride: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.size < 1 or self.stride < 1:
            raise ConfigError(f"patch size and stride must be positive, got {self}")


def sample_patches(pair: ImagePair, spec: PatchSpec) -> list[ImagePair]:
    """Co-located crops from both modalities in seeded-shuffled grid order."""
    h, w = pair.shape
    if spec.size > h or spec.size > w:
        raise ValueError(
            f"patch size {spec.size} exceeds image dimensions {h}x{w} "
            f"of pair {pair.id!r}")
    offsets = [(y, x)
               for y in range(0, h - spec.size + 1, spec.stride)
               for x in range(0, w - spec.size + 1, spec.stride)]
    order = np.random.default_rng(spec.seed).permutation(len(offsets))
    patches = []
    for idx in order:
        y, x = offsets[idx]
        patches.append(ImagePair(
            visible=pair.visible[y:y + spec.size, x:x + spec.size],
            infrared=pair.infrared[y:y + spec.size, x:x + spec.size],
            id=f"{pair.id}@{y},{x}",
        ))
    return patches


# ---------------------------------------------------------------------------
# synthetic stand-in pairs


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Band-limited noise: a coarse random grid upsampled bilinearly."""
    coarse = rng.standard_normal((cells + 1, cells + 1))
    idx = np.linspace(0.0, cells, size)
    i0 = np.floor(idx).astype(int)
    i1 = np.minimum(i0 + 1, cells)
    frac = idx - i0
    rows = (coarse[i0][:, i0] * (1 - frac)[:, None] + coarse[i1][:, i0] * frac[:, None])
    rows1 = (coarse[i0][:, i1] * (1 - frac)[:, None] + coarse[i1][:, i1] * frac[:, None])
    return rows * (1 - frac)[None, :] + rows1 * frac[None, :]


def _shape_masks(rng: np.random.Generator, size: int) -> list[np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size]
    masks = []
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
        if rng.random() < 0.5:
            r = rng.uniform(0.06 * size, 0.18 * size)
            masks.append(((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r)
        else:
            hh = rng.uniform(0.05 * size, 0.15 * size)
            ww = rng.uniform(0.05 * size, 0.15 * size)
            masks.append((np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= ww))
    return masks


def _outline(mask: np.ndarray) -> np.ndarray:
    interior = np.zeros_like(mask)
    interior[1:-1, 1:-1] = (mask[1:-1, 1:-1] & mask[:-2, 1:-1] & mask[2:, 1:-1]
                            & mask[1:-1, :-2] & mask[1:-1, 2:])
    return mask & ~interior


def _blur(img: np.ndarray, passes: int = 3) -> np.ndarray:
    out = img.astype(np.float64)
    for _ in range(passes):
        padded = np.pad(out, 1, mode="edge")
        out = (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2]
               + padded[1:-1, 2:] + out) / 5.0
    return out


def synthesize_pair(seed: int, size: int = 64) -> ImagePair:
    """Deterministic synthetic stand-in for a registered capture pair.

    The visible channel is a textured background with outlined geometric
    shapes (broad histogram); the infrared channel renders the same
    geometry as smooth high-contrast hot blobs over a near-uniform cold
    background with only weak texture.
    """
    if size % 32:
        raise ConfigError(f"synthetic pair size must be a multiple of 32, got {size}")
    rng = np.random.default_rng(seed)
    masks = _shape_masks(rng, size)

    texture = _smooth_noise(rng, size, max(size // 8, 2))
    fine = rng.standard_normal((size, size))
    visible = 0.45 + 0.18 * texture + 0.08 * fine
    for mask in masks:
        visible[mask] += rng.uniform(-0.25, 0.25)
        visible[_outline(mask)] = rng.uniform(0.0, 0.12)
    visible = np.clip(visible, 0.0, 1.0)

    infrared = np.full((size, size), 0.12) + 0.015 * rng.standard_normal((size, size))
    hot = np.zeros((size, size))
    for mask in masks:
        hot[mask] = np.maximum(hot[mask], rng.uniform(0.55, 0.85))
    infrared += _blur(hot)
    infrared = np.clip(infrared, 0.0, 1.0)

    return ImagePair(visible=visible, infrared=infrared, id=f"synth{seed:05d}")


def synthesize_dataset(root: str | Path, count: int, size: int = 64,
                       seed: int = 0) -> DatasetManifest:
    """Write ``count`` synthetic pairs under ``root`` and return the manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for k in range(count):
        pair = synthesize_pair(seed + k, size)
        pair_dir = root / f"pair{k:03d}"
        pair_dir.mkdir(exist_ok=True)
        save_grayscale(pair_dir / "vis.png", pair.visible)
        save_grayscale(pair_dir / "ir.png", pair.infrared)
    return build_manifest(root)
