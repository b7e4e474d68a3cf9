"""Objective fusion-quality metrics: EN, MI, SSIM, VIF and Q^AB/F.

All metrics are deterministic pure functions of float64 grayscale images
with values in [0, 1] (``GrayImage``: a 2-D numpy array).  Histogram-based
metrics quantize to 8-bit levels 0..255 first.

Fusion-level conventions: MI and VIF sum the contributions of the two
source images, SSIM averages them.  These conventions are inferred from
the magnitudes reported for published fusion benchmarks (MI well above
the single-pair range, VIF above 1, SSIM below 1) and are restated in the
report footer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "MetricRow",
    "aggregate",
    "entropy",
    "evaluate",
    "format_markdown",
    "mutual_information",
    "qabf",
    "quantize_levels",
    "ssim_fusion",
    "ssim_pair",
    "vif_fusion",
    "vif_pair",
    "write_report_csv",
]

# SSIM constants (11x11 gaussian window, sigma 1.5, unit data range).
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# Pixel-domain multi-scale VIF: 4 scales on 255-scaled intensities with a
# gaussian-scale-mixture noise variance of 2.
VIF_SCALES = 4
VIF_SIGMA_N_SQ = 2.0
_VIF_EPS = 1e-10

# Edge-transfer index sigmoid constants (gradient strength / orientation).
QABF_GAMMA_G = 0.9994
QABF_K_G = -15.0
QABF_SIGMA_G = 0.5
QABF_GAMMA_A = 0.9879
QABF_K_A = -22.0
QABF_SIGMA_A = 0.8

_SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                     [-2.0, 0.0, 2.0],
                     [-1.0, 0.0, 1.0]])
_SOBEL_Y = np.array([[1.0, 2.0, 1.0],
                     [0.0, 0.0, 0.0],
                     [-1.0, -2.0, -1.0]])


def _check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range [{lo}, {hi}]")
    return arr


def _check_same_dims(*imgs: np.ndarray) -> None:
    shapes = {im.shape for im in imgs}
    if len(shapes) > 1:
        raise ValueError(f"images must share dimensions, got {sorted(shapes)}")


def quantize_levels(img: np.ndarray) -> np.ndarray:
    """View of a [0, 1] image as 8-bit levels 0..255 (round half up)."""
    levels = np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(levels, 0, 255).astype(np.intp)


# ---------------------------------------------------------------------------
# entropy and mutual information


def entropy(img: np.ndarray) -> float:
    """Shannon entropy in bits of the 256-bin intensity histogram."""
    img = _check_image(img)
    hist = np.bincount(quantize_levels(img).ravel(), minlength=256)
    p = hist[hist > 0] / img.size
    return float(-(p * np.log2(p)).sum())


def _mi_pair(a: np.ndarray, b: np.ndarray) -> float:
    qa = quantize_levels(a).ravel()
    qb = quantize_levels(b).ravel()
    joint = np.bincount(qa * 256 + qb, minlength=256 * 256).reshape(256, 256)
    p = joint / qa.size
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    nz = p > 0
    outer = px[:, None] * py[None, :]
    return float((p[nz] * np.log2(p[nz] / outer[nz])).sum())


def mutual_information(fused: np.ndarray, visible: np.ndarray,
                       infrared: np.ndarray) -> float:
    """I(F;V) + I(F;I), each from the 256x256 joint histogram, in bits."""
    fused = _check_image(fused, "fused")
    visible = _check_image(visible, "visible")
    infrared = _check_image(infrared, "infrared")
    _check_same_dims(fused, visible, infrared)
    return _mi_pair(fused, visible) + _mi_pair(fused, infrared)


# ---------------------------------------------------------------------------
# SSIM


def _gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, kernel1d: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a symmetric 1-D kernel."""
    t = sliding_window_view(img, kernel1d.size, axis=0) @ kernel1d
    return sliding_window_view(t, kernel1d.size, axis=1) @ kernel1d


def ssim_pair(x: np.ndarray, y: np.ndarray) -> float:
    """Mean structural similarity over all valid window positions."""
    x = _check_image(x, "x")
    y = _check_image(y, "y")
    _check_same_dims(x, y)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = _gaussian_kernel1d(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sxy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float((num / den).mean())


def ssim_fusion(fused: np.ndarray, visible: np.ndarray,
                infrared: np.ndarray) -> float:
    """Average of the fused image's SSIM against each source."""
    return 0.5 * (ssim_pair(fused, visible) + ssim_pair(fused, infrared))


# ---------------------------------------------------------------------------
# VIF (pixel domain, multi-scale)


def _vif_window(scale: int) -> np.ndarray:
    size = 2 ** (VIF_SCALES - scale + 1) + 1  # 17, 9, 5, 3
    return _gaussian_kernel1d(size, size / 5.0)


def vif_pair(ref: np.ndarray, dist: np.ndarray) -> float:
    """Visual information fidelity of ``dist`` with respect to ``ref``.

    Scales where the progressively downsampled maps become smaller than
    the local window contribute nothing, mirroring the reference recipe's
    empty-sum behavior on small images.
    """
    ref = _check_image(ref, "ref")
    dist = _check_image(dist, "dist")
    _check_same_dims(ref, dist)
    first = 2 ** VIF_SCALES + 1
    if min(ref.shape) < first:
        raise ValueError(
            f"image {ref.shape} is smaller than the {first}x{first} first-scale window")

    r = ref * 255.0
    d = dist * 255.0
    num = 0.0
    den = 0.0
    for scale in range(1, VIF_SCALES + 1):
        g = _vif_window(scale)
        if scale > 1:
            if min(r.shape) < g.size:
                break
            r = _filter_valid(r, g)[::2, ::2]
            d = _filter_valid(d, g)[::2, ::2]
        if min(r.shape) < g.size:
            break
        mu1 = _filter_valid(r, g)
        mu2 = _filter_valid(d, g)
        s1 = np.maximum(_filter_valid(r * r, g) - mu1 * mu1, 0.0)
        s2 = np.maximum(_filter_valid(d * d, g) - mu2 * mu2, 0.0)
        s12 = _filter_valid(r * d, g) - mu1 * mu2

        gain = s12 / (s1 + _VIF_EPS)
        sv = s2 - gain * s12

        low1 = s1 < _VIF_EPS
        gain[low1] = 0.0
        sv[low1] = s2[low1]
        s1 = np.where(low1, 0.0, s1)

        low2 = s2 < _VIF_EPS
        gain[low2] = 0.0
        sv[low2] = 0.0

        neg = gain < 0.0
        sv[neg] = s2[neg]
        gain[neg] = 0.0
        sv[sv <= _VIF_EPS] = _VIF_EPS

        num += np.log10(1.0 + gain * gain * s1 / (sv + VIF_SIGMA_N_SQ)).sum()
        den += np.log10(1.0 + s1 / VIF_SIGMA_N_SQ).sum()
    if den <= 0.0:
        return 0.0
    return float(num / den)


def vif_fusion(fused: np.ndarray, visible: np.ndarray,
               infrared: np.ndarray) -> float:
    """Sum of the information transferred from each source into the fusion."""
    return vif_pair(visible, fused) + vif_pair(infrared, fused)


# ---------------------------------------------------------------------------
# Q^AB/F edge-transfer index


def _correlate_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k = kernel.shape[0]
    pad = k // 2
    padded = np.pad(img, pad, mode="edge")  # no phantom edges at the border
    windows = sliding_window_view(padded, (k, k))
    return np.einsum("ijkl,kl->ij", windows, kernel, optimize=True)


def _edge_maps(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sx = _correlate_same(img, _SOBEL_X)
    sy = _correlate_same(img, _SOBEL_Y)
    strength = np.sqrt(sx * sx + sy * sy)
    with np.errstate(divide="ignore", invalid="ignore"):
        angle = np.where(sx == 0.0, np.pi / 2.0, np.arctan(sy / np.where(sx == 0.0, 1.0, sx)))
    return strength, angle


def _preservation(g_src: np.ndarray, a_src: np.ndarray,
                  g_fused: np.ndarray, a_fused: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(
            g_src > g_fused,
            g_fused / np.where(g_src == 0.0, 1.0, g_src),
            np.where(g_src == g_fused, g_fused,
                     g_src / np.where(g_fused == 0.0, 1.0, g_fused)))
    with np.errstate(over="ignore", under="ignore"):
        q_g = QABF_GAMMA_G / (1.0 + np.exp(QABF_K_G * (ratio - QABF_SIGMA_G)))
        align = 1.0 - np.abs(a_src - a_fused) / (np.pi / 2.0)
        q_a = QABF_GAMMA_A / (1.0 + np.exp(QABF_K_A * (align - QABF_SIGMA_A)))
    return q_g * q_a


def qabf(visible: np.ndarray, infrared: np.ndarray, fused: np.ndarray) -> float:
    """Edge-transfer index in [0, 1], weighted by source edge strength.

    Sobel gradients are taken on 255-scaled intensities with zero-padded
    same-size correlation; the ``g_src == g_fused -> ratio = g_fused``
    quirk of the reference recipe is kept so published scores reproduce.
    """
    visible = _check_image(visible, "visible")
    infrared = _check_image(infrared, "infrared")
    fused = _check_image(fused, "fused")
    _check_same_dims(visible, infrared, fused)
    if min(fused.shape) < 3:
        raise ValueError(f"images {fused.shape} are smaller than the 3x3 Sobel kernel")

    g_v, a_v = _edge_maps(visible * 255.0)
    g_i, a_i = _edge_maps(infrared * 255.0)
    g_f, a_f = _edge_maps(fused * 255.0)

    q_vf = _preservation(g_v, a_v, g_f, a_f)
    q_if = _preservation(g_i, a_i, g_f, a_f)

    weight_sum = (g_v + g_i).sum()
    if weight_sum == 0.0:
        return 0.0
    return float((q_vf * g_v + q_if * g_i).sum() / weight_sum)


# ---------------------------------------------------------------------------
# per-image rows and reports


@dataclass
class MetricRow:
    """One evaluated image (or the average row), Table-style column order."""

    image_id: str
    vif: float
    qabf: float
    ssim: float
    mi: float
    en: float

    COLUMNS = ("VIF", "Q^AB/F", "SSIM", "MI", "EN")

    def values(self) -> tuple[float, float, float, float, float]:
        return (self.vif, self.qabf, self.ssim, self.mi, self.en)


def evaluate(fused: np.ndarray, visible: np.ndarray, infrared: np.ndarray,
             image_id: str) -> MetricRow:
    """Score one fused image against its registered source pair."""
    return MetricRow(
        image_id=image_id,
        vif=vif_fusion(fused, visible, infrared),
        qabf=qabf(visible, infrared, fused),
        ssim=ssim_fusion(fused, visible, infrared),
        mi=mutual_information(fused, visible, infrared),
        en=entropy(fused),
    )


def aggregate(rows: list[MetricRow]) -> MetricRow:
    """Arithmetic per-metric mean, labeled "Average"."""
    if not rows:
        raise ValueError("aggregate requires at least one metric row")
    stacked = np.array([row.values() for row in rows], dtype=np.float64)
    means = stacked.mean(axis=0)
    return MetricRow("Average", *map(float, means))


_FOOTER = (
    "MI and VIF sum the two source contributions; SSIM averages them. "
    "These aggregation conventions are inferred from published score "
    "magnitudes, not prescribed by the metric definitions."
)


def write_report_csv(path: str | Path, rows: list[MetricRow],
                     include_average: bool = True) -> None:
    out_rows = list(rows)
    if include_average:
        out_rows.append(aggregate(rows))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("image",) + MetricRow.COLUMNS)
        for row in out_rows:
            writer.writerow([row.image_id] + [f"{v:.4f}" for v in row.values()])
        fh.write(f"# {_FOOTER}\n")


def format_markdown(rows: list[MetricRow], include_average: bool = True) -> str:
    out_rows = list(rows)
    if include_average:
        out_rows.append(aggregate(rows))
    header = ("image",) + MetricRow.COLUMNS
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(["---"] * len(header)) + "|"]
    for row in out_rows:
        cells = [row.image_id] + [f"{v:.4f}" for v in row.values()]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    lines.append(f"_{_FOOTER}_")
    return "\n".join(lines) + "\n"
