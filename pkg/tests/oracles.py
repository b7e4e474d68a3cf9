"""Independent brute-force oracles used to pin expected values.

Everything here is written definitionally (explicit loops, explicit
matrices) and stays independent of the library's vectorized paths.
"""

from __future__ import annotations

import numpy as np

# ---------------------------------------------------------------------------
# network ops


def conv2d_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  stride: int, padding: int) -> np.ndarray:
    """Sliding-window cross-correlation with explicit loops."""
    n, c_in, h, wdt = x.shape
    c_out, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wdt + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, c_out, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oc in range(c_out):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(c_in):
                        for ky in range(k):
                            for kx in range(k):
                                acc += xp[ni, ic, oy * stride + ky, ox * stride + kx] \
                                    * w[oc, ic, ky, kx]
                    out[ni, oc, oy, ox] = acc + b.reshape(-1)[oc]
    return out


def conv_matrix_oracle(w: np.ndarray, in_shape: tuple[int, ...],
                       stride: int, padding: int) -> np.ndarray:
    """Explicit matrix of the convolution map, one basis vector at a time."""
    c_out = w.shape[0]
    _, c_in, h, wdt = in_shape
    k = w.shape[2]
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wdt + 2 * padding - k) // stride + 1
    b = np.zeros(c_out)
    n_in = c_in * h * wdt
    n_out = c_out * ho * wo
    mat = np.zeros((n_out, n_in))
    for j in range(n_in):
        e = np.zeros(n_in)
        e[j] = 1.0
        y = conv2d_oracle(e.reshape(1, c_in, h, wdt), w, b, stride, padding)
        mat[:, j] = y.reshape(-1)
    return mat


def batchnorm_train_oracle(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                           eps: float) -> np.ndarray:
    """Definitional per-channel normalization with biased variance."""
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for ci in range(c):
        vals = x[:, ci, :, :]
        mu = vals.mean()
        var = ((vals - mu) ** 2).mean()
        out[:, ci, :, :] = gamma.reshape(-1)[ci] * (vals - mu) / np.sqrt(var + eps) \
            + beta.reshape(-1)[ci]
    return out


def fully_connected_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    x2 = x.reshape(n, -1)
    d, m = w.reshape(w.shape[-2], w.shape[-1]).shape
    out = np.zeros((n, m))
    for ni in range(n):
        for mi in range(m):
            acc = 0.0
            for di in range(d):
                acc += x2[ni, di] * w.reshape(d, m)[di, mi]
            out[ni, mi] = acc + b.reshape(-1)[mi]
    return out


def tv_oracle(d: np.ndarray) -> float:
    """Direct difference-sum anisotropic TV, normalized by pixel count."""
    n, _, h, w = d.shape
    total = 0.0
    for ni in range(n):
        img = d[ni, 0]
        for y in range(h):
            for x in range(w - 1):
                total += abs(img[y, x + 1] - img[y, x])
        for y in range(h - 1):
            for x in range(w):
                total += abs(img[y + 1, x] - img[y, x])
    return total / (n * h * w)


def adam_scalar_oracle(x0: float, grad_fn, steps: int, lr: float,
                       beta1: float = 0.9, beta2: float = 0.999,
                       eps: float = 1e-8) -> list[float]:
    """Reference scalar Adam recurrence; returns the iterates."""
    x, m, v = x0, 0.0, 0.0
    history = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        history.append(x)
    return history


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_grad(f, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function over every entry."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        hi = f()
        flat[idx] = orig - step
        lo = f()
        flat[idx] = orig
        out[idx] = (hi - lo) / (2.0 * step)
    return grad


def finite_difference_grad_at(f, arr: np.ndarray, indices: np.ndarray,
                              step: float = 1e-5) -> np.ndarray:
    """Central finite differences at a subset of flat indices."""
    flat = arr.reshape(-1)
    out = np.zeros(len(indices), dtype=np.float64)
    for row, idx in enumerate(indices):
        orig = flat[idx]
        flat[idx] = orig + step
        hi = f()
        flat[idx] = orig - step
        lo = f()
        flat[idx] = orig
        out[row] = (hi - lo) / (2.0 * step)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Relative error with a unit floor, so near-zero gradients compare
    absolutely."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())


# ---------------------------------------------------------------------------
# metric oracles


def quantize_oracle(img: np.ndarray) -> np.ndarray:
    out = np.zeros(img.shape, dtype=int)
    h, w = img.shape
    for y in range(h):
        for x in range(w):
            level = int(np.floor(img[y, x] * 255.0 + 0.5))
            out[y, x] = min(max(level, 0), 255)
    return out


def entropy_oracle(img: np.ndarray) -> float:
    counts = [0] * 256
    q = quantize_oracle(img)
    for value in q.reshape(-1):
        counts[value] += 1
    total = img.size
    result = 0.0
    for count in counts:
        if count:
            p = count / total
            result -= p * np.log2(p)
    return result


def mi_pair_oracle(a: np.ndarray, b: np.ndarray) -> float:
    qa, qb = quantize_oracle(a), quantize_oracle(b)
    joint = np.zeros((256, 256))
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            joint[qa[y, x], qb[y, x]] += 1
    joint /= a.size
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    result = 0.0
    for i in range(256):
        for j in range(256):
            if joint[i, j] > 0:
                result += joint[i, j] * np.log2(joint[i, j] / (pa[i] * pb[j]))
    return result


def mutual_information_oracle(f: np.ndarray, v: np.ndarray, i: np.ndarray) -> float:
    return mi_pair_oracle(f, v) + mi_pair_oracle(f, i)


def _gaussian2d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.zeros((size, size))
    for y in range(size):
        for x in range(size):
            g[y, x] = np.exp(-((y - half) ** 2 + (x - half) ** 2) / (2 * sigma * sigma))
    return g / g.sum()


def ssim_oracle(x: np.ndarray, y: np.ndarray, window: int = 11,
                sigma: float = 1.5, c1: float = 0.01 ** 2,
                c2: float = 0.03 ** 2) -> float:
    """Per-window SSIM with explicit weighted statistics."""
    g = _gaussian2d(window, sigma)
    h, w = x.shape
    values = []
    for oy in range(h - window + 1):
        for ox in range(w - window + 1):
            px = x[oy:oy + window, ox:ox + window]
            py = y[oy:oy + window, ox:ox + window]
            mx = (g * px).sum()
            my = (g * py).sum()
            sxx = (g * px * px).sum() - mx * mx
            syy = (g * py * py).sum() - my * my
            sxy = (g * px * py).sum() - mx * my
            values.append(((2 * mx * my + c1) * (2 * sxy + c2))
                          / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return float(np.mean(values))


def _filter_valid_oracle(img: np.ndarray, g2d: np.ndarray) -> np.ndarray:
    k = g2d.shape[0]
    h, w = img.shape
    out = np.zeros((h - k + 1, w - k + 1))
    for oy in range(out.shape[0]):
        for ox in range(out.shape[1]):
            out[oy, ox] = (img[oy:oy + k, ox:ox + k] * g2d).sum()
    return out


def vif_pair_oracle(ref: np.ndarray, dist: np.ndarray,
                    sigma_n_sq: float = 2.0) -> float:
    """Pixel-domain multi-scale VIF, loop-filtered, on 255-scaled images."""
    eps = 1e-10
    r = ref * 255.0
    d = dist * 255.0
    num = den = 0.0
    for scale in range(1, 5):
        size = 2 ** (4 - scale + 1) + 1
        g = _gaussian2d(size, size / 5.0)
        if scale > 1:
            if min(r.shape) < size:
                break
            r = _filter_valid_oracle(r, g)[::2, ::2]
            d = _filter_valid_oracle(d, g)[::2, ::2]
        if min(r.shape) < size:
            break
        mu1 = _filter_valid_oracle(r, g)
        mu2 = _filter_valid_oracle(d, g)
        s1 = _filter_valid_oracle(r * r, g) - mu1 * mu1
        s2 = _filter_valid_oracle(d * d, g) - mu2 * mu2
        s12 = _filter_valid_oracle(r * d, g) - mu1 * mu2
        s1[s1 < 0] = 0.0
        s2[s2 < 0] = 0.0
        for y in range(s1.shape[0]):
            for x in range(s1.shape[1]):
                v1, v2, v12 = s1[y, x], s2[y, x], s12[y, x]
                gain = v12 / (v1 + eps)
                sv = v2 - gain * v12
                if v1 < eps:
                    gain, sv, v1 = 0.0, v2, 0.0
                if v2 < eps:
                    gain, sv = 0.0, 0.0
                if gain < 0:
                    sv, gain = v2, 0.0
                if sv <= eps:
                    sv = eps
                num += np.log10(1.0 + gain * gain * v1 / (sv + sigma_n_sq))
                den += np.log10(1.0 + v1 / sigma_n_sq)
    if den <= 0.0:
        return 0.0
    return num / den


_SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                     [-2.0, 0.0, 2.0],
                     [-1.0, 0.0, 1.0]])
_SOBEL_Y = np.array([[1.0, 2.0, 1.0],
                     [0.0, 0.0, 0.0],
                     [-1.0, -2.0, -1.0]])


def _sobel_oracle(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replicate-padded 3x3 correlation, explicit loops."""
    h, w = img.shape
    padded = np.pad(img, 1, mode="edge")
    sx = np.zeros((h, w))
    sy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            win = padded[y:y + 3, x:x + 3]
            sx[y, x] = (win * _SOBEL_X).sum()
            sy[y, x] = (win * _SOBEL_Y).sum()
    return sx, sy


def qabf_oracle(visible: np.ndarray, infrared: np.ndarray,
                fused: np.ndarray) -> float:
    """Per-pixel edge-transfer index with the published sigmoid constants."""
    tg, kg, dg = 0.9994, -15.0, 0.5
    ta, ka, da = 0.9879, -22.0, 0.8

    def edge(img):
        sx, sy = _sobel_oracle(img * 255.0)
        strength = np.sqrt(sx * sx + sy * sy)
        angle = np.zeros_like(sx)
        for y in range(sx.shape[0]):
            for x in range(sx.shape[1]):
                angle[y, x] = np.pi / 2 if sx[y, x] == 0 else np.arctan(sy[y, x] / sx[y, x])
        return strength, angle

    g_v, a_v = edge(visible)
    g_i, a_i = edge(infrared)
    g_f, a_f = edge(fused)

    def q(gs, as_, y, x):
        if gs[y, x] > g_f[y, x]:
            ratio = g_f[y, x] / gs[y, x]
        elif gs[y, x] == g_f[y, x]:
            ratio = g_f[y, x]
        else:
            ratio = gs[y, x] / g_f[y, x]
        qg = tg / (1 + np.exp(kg * (ratio - dg)))
        align = 1 - abs(as_[y, x] - a_f[y, x]) / (np.pi / 2)
        qa = ta / (1 + np.exp(ka * (align - da)))
        return qg * qa

    nume = deno = 0.0
    for y in range(fused.shape[0]):
        for x in range(fused.shape[1]):
            nume += q(g_v, a_v, y, x) * g_v[y, x] + q(g_i, a_i, y, x) * g_i[y, x]
            deno += g_v[y, x] + g_i[y, x]
    if deno == 0.0:
        return 0.0
    return nume / deno
