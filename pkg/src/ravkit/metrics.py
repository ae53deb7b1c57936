"""Pure metric kernels: edit distance / CER, binarized SSIM, perceptual
hash, Laplacian sharpness, ANLS, and rank correlations.

Everything here is a pure function over its inputs; safe for unrestricted
parallel use.
"""

from __future__ import annotations

import unicodedata

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.fft import dctn
from scipy.stats import t as t_dist


class UndefinedCorrelationError(ValueError):
    """Raised when a correlation is undefined (constant input)."""


# ---------------------------------------------------------------------------
# text kernels


def normalize_text(s: str) -> str:
    """Canonical text form: Unicode NFC, whitespace runs collapsed to one
    space, trimmed. Case is preserved."""
    return " ".join(unicodedata.normalize("NFC", s).split())


def levenshtein(a: str, b: str) -> int:
    """Minimum edit distance (insert/delete/substitute, unit costs) over
    Unicode scalar values."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    # Row-wise DP vectorized over the second string. Deletion/substitution
    # terms depend only on the previous row; the within-row insertion chain
    # cur[j] = min(e[j], cur[j-1] + 1) is resolved exactly by a prefix-min:
    # cur[j] = j + min_{k<=j} (e[k] - k).
    bp = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    n = bp.size
    j = np.arange(n + 1, dtype=np.int64)
    prev = j.copy()
    e = np.empty(n + 1, dtype=np.int64)
    for i, ch in enumerate(a, 1):
        e[0] = i
        e[1:] = np.minimum(prev[1:] + 1, prev[:-1] + (bp != ord(ch)))
        prev = j + np.minimum.accumulate(e - j)
    return int(prev[-1])


def cer(hypothesis: str, reference: str) -> float:
    """Character error rate of a hypothesis against a reference.

    Both strings are normalized first (NFC, whitespace collapse). The
    result is edit distance over max(len(reference), 1); it may exceed 1
    when the hypothesis is much longer than the reference.
    """
    h = normalize_text(hypothesis)
    r = normalize_text(reference)
    return levenshtein(h, r) / max(len(r), 1)


def anls(predicted: str, golds, tau: float = 0.5) -> float:
    """Normalized Levenshtein similarity against the best-matching gold.

    Comparison is case-insensitive and whitespace-collapsed. A normalized
    distance at or above ``tau`` scores 0 (standard document-QA cutoff).
    """
    golds = list(golds)
    if not golds:
        raise ValueError("golds must be non-empty")
    p = normalize_text(predicted).lower()
    best = 0.0
    for gold in golds:
        g = normalize_text(gold).lower()
        denom = max(len(p), len(g))
        if denom == 0:
            best = max(best, 1.0)
            continue
        nl = levenshtein(p, g) / denom
        if nl < tau:
            best = max(best, 1.0 - nl)
    return best


# ---------------------------------------------------------------------------
# image kernels


def to_gray(img: np.ndarray) -> np.ndarray:
    """Collapse an H×W or H×W×C raster to float64 grayscale."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[2] >= 3:
            a = 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]
        else:
            a = a[:, :, 0]
    return a


def otsu_threshold(gray: np.ndarray) -> float:
    """Otsu's threshold over a 256-bin histogram of a grayscale image."""
    hist, edges = np.histogram(np.clip(gray, 0, 255), bins=256, range=(0, 256))
    hist = hist.astype(np.float64)
    total = hist.sum()
    if total == 0:
        return 127.5
    levels = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(hist)
    w1 = total - w0
    sum0 = np.cumsum(hist * levels)
    mu0 = np.divide(sum0, w0, out=np.zeros_like(sum0), where=w0 > 0)
    mu1 = np.divide(sum0[-1] - sum0, w1, out=np.zeros_like(sum0), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    return float(levels[int(np.argmax(between))])


def binarize(gray: np.ndarray) -> np.ndarray:
    """Otsu-binarize to {0, 255}. Constant images map to all-background."""
    if float(gray.max()) == float(gray.min()):
        return np.zeros_like(gray, dtype=np.float64)
    thr = otsu_threshold(gray)
    return np.where(gray > thr, 255.0, 0.0)


def _resize(gray: np.ndarray, size, resample) -> np.ndarray:
    im = Image.fromarray(np.clip(gray, 0, 255).astype(np.uint8), mode="L")
    return np.asarray(im.resize(size, resample), dtype=np.float64)


def ssim(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Standard SSIM mean-map value: 11×11 Gaussian window (sigma 1.5),
    K1=0.01, K2=0.03, dynamic range 255. Inputs must be same-size grayscale."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    sigma, truncate = 1.5, 3.5  # 11x11 kernel: radius = int(1.5 * 3.5) = 5
    k1, k2, drange = 0.01, 0.03, 255.0
    c1 = (k1 * drange) ** 2
    c2 = (k2 * drange) ** 2

    def blur(x):
        return ndimage.gaussian_filter(x, sigma=sigma, truncate=truncate, mode="reflect")

    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_binarized(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """SSIM between Otsu-binarized grayscales, clamped to [0, 1].

    The first image is bilinearly resized to the second's dimensions before
    binarization, so reconstructions of any size compare against the anchor.
    """
    a = to_gray(img_a)
    b = to_gray(img_b)
    if a.shape != b.shape:
        a = _resize(a, (b.shape[1], b.shape[0]), Image.Resampling.BILINEAR)
    value = ssim(binarize(a), binarize(b))
    return float(min(1.0, max(0.0, value)))


# pHash bit layout (fixed so hashes are portable): the 64 coefficients are
# the top-left 8x8 DCT block in row-major order with the DC term removed,
# followed by coefficient (0, 8). Bit i is 1 iff coefficient i exceeds the
# median of the 64; bit 0 is the most significant bit of the hash.


def phash64(img: np.ndarray) -> int:
    """64-bit DCT perceptual hash of a raster."""
    gray = to_gray(img)
    if gray.size == 0:
        raise ValueError("empty raster")
    small = _resize(gray, (32, 32), Image.Resampling.BOX)
    coeffs = dctn(small, type=2, norm="ortho")
    block = coeffs[:8, :8].flatten()
    selected = np.concatenate([block[1:], [coeffs[0, 8]]])
    med = np.median(selected)
    bits = selected > med
    value = 0
    for bit in bits:
        value = (value << 1) | int(bit)
    return value


def hamming64(h1: int, h2: int) -> int:
    return bin((h1 ^ h2) & ((1 << 64) - 1)).count("1")


def phash_similarity(h1: int, h2: int) -> float:
    """1 − normalized Hamming distance between two 64-bit hashes."""
    return 1.0 - hamming64(h1, h2) / 64.0


def laplacian_variance(img: np.ndarray) -> float:
    """Variance of the 3×3 discrete Laplacian response (replicate border)."""
    gray = to_gray(img)
    if gray.size == 0:
        raise ValueError("empty raster")
    kernel = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)
    response = ndimage.convolve(gray, kernel, mode="nearest")
    return float(response.var())


# ---------------------------------------------------------------------------
# correlations


def _ranks(xs: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mean rank."""
    order = np.argsort(xs, kind="stable")
    ranks = np.empty(len(xs), dtype=np.float64)
    i = 0
    sorted_vals = xs[order]
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson_r(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length sequences of length >= 2")
    xd = x - x.mean()
    yd = y - y.mean()
    denom = np.sqrt((xd**2).sum() * (yd**2).sum())
    if denom == 0:
        raise UndefinedCorrelationError("zero variance input")
    return float(np.clip((xd * yd).sum() / denom, -1.0, 1.0))


def spearman_rho(xs, ys):
    """Spearman rank correlation with average-rank ties.

    Returns (rho, p_two_sided). The p-value uses the t approximation
    t = rho * sqrt((n-2) / (1-rho^2)) with n-2 degrees of freedom; it
    saturates to 0 for |rho| near 1, so extremely small p-values are not
    resolved beyond floating-point underflow.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size != y.size or x.size < 3:
        raise ValueError("need two equal-length sequences of length >= 3")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("constant input")
    rho = pearson_r(_ranks(x), _ranks(y))
    n = x.size
    if abs(rho) >= 1.0:
        return float(np.sign(rho)), 0.0
    t_stat = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(t_dist.sf(abs(t_stat), n - 2))
    return float(rho), min(1.0, p)
