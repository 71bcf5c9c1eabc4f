"""Evaluation metrics: paired Frechet feature distance, FID, PSNR, SSIM, SD.

The paired Frechet distance treats each image's feature vector as a discrete
scalar curve (its components in fixed index order) and averages the discrete
Frechet distance over index-aligned real/generated pairs, so it is defined
per pair rather than per distribution and has no minimum-sample requirement.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import tensor_of
from .errors import NumericError, ValidationError

PSNR_CAP_DB = 100.0
_MSE_FLOOR = 1e-12

FEATURE_MAGIC = b"CGANFEAT"
FEATURE_VERSION = 1


@dataclass
class FeatureMatrix:
    """N feature vectors of dimension d, one row per image."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ValidationError(f"feature matrix must be N x d with N >= 1, got {self.rows.shape}")
        if not np.isfinite(self.rows).all():
            raise ValidationError("feature matrix contains non-finite values")


@dataclass
class GaussianStats:
    """Mean vector and positive-semidefinite covariance of one feature set."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ValidationError(f"covariance shape {self.sigma.shape} does not match dim {d}")
        if np.abs(self.sigma - self.sigma.T).max() > 1e-8:
            raise ValidationError("covariance is not symmetric within 1e-8")
        if np.linalg.eigvalsh(self.sigma).min() < -1e-8:
            raise ValidationError("covariance has eigenvalues below -1e-8")


def gaussian_stats(features) -> GaussianStats:
    rows = features.rows if isinstance(features, FeatureMatrix) else FeatureMatrix(features).rows
    mu = rows.mean(axis=0)
    if rows.shape[0] < 2:
        sigma = np.zeros((rows.shape[1], rows.shape[1]))
    else:
        sigma = np.cov(rows, rowvar=False)
        sigma = (sigma + sigma.T) / 2.0
    return GaussianStats(mu=mu, sigma=np.atleast_2d(sigma))


# ---------------------------------------------------------------------------
# Discrete Frechet distance
# ---------------------------------------------------------------------------


def discrete_frechet(a, b, d=None) -> float:
    """Discrete Frechet distance between two point sequences.

    Dynamic program over monotone couplings:
    dfd(i, j) = max(d(a_i, b_j), min(dfd(i-1, j), dfd(i, j-1), dfd(i-1, j-1))).
    ``d`` defaults to absolute difference for scalar sequences.
    """
    a, b = list(a), list(b)
    if not a or not b:
        raise ValidationError("sequences must be nonempty")
    if d is None:
        d = lambda p, q: abs(p - q)
    n, m = len(a), len(b)
    prev = None
    for i in range(n):
        cur = [0.0] * m
        for j in range(m):
            cost = d(a[i], b[j])
            if i == 0 and j == 0:
                cur[j] = cost
            elif i == 0:
                cur[j] = max(cost, cur[j - 1])
            elif j == 0:
                cur[j] = max(cost, prev[j])
            else:
                cur[j] = max(cost, min(prev[j], cur[j - 1], prev[j - 1]))
        prev = cur
    return float(prev[m - 1])


def pooled_feature_vectors(images, extractor, layer_id=None) -> FeatureMatrix:
    """Embed a stack of images into per-image feature vectors.

    Taps ``layer_id`` (deepest by default) and global-average-pools the map, so
    the vector dimension equals the tapped layer's channel count.
    """
    if layer_id is None:
        layer_id = extractor.layer_ids[-1]
    rows = []
    with torch.no_grad():
        for img in images:
            values = tensor_of(img)
            if values.ndim == 3:
                values = values.unsqueeze(0)
            feat = extractor.extract(values, layer_id)
            rows.append(feat.mean(dim=(2, 3)).squeeze(0).numpy())
    return FeatureMatrix(np.stack(rows))


def frd_from_features(real: FeatureMatrix, gen: FeatureMatrix) -> float:
    """Mean discrete Frechet distance over index-aligned feature-vector pairs."""
    r = np.asarray(real.rows if isinstance(real, FeatureMatrix) else real, dtype=np.float64)
    g = np.asarray(gen.rows if isinstance(gen, FeatureMatrix) else gen, dtype=np.float64)
    if r.shape != g.shape:
        raise ValidationError(f"feature counts/dims differ: {r.shape} vs {g.shape}")
    return float(np.mean([discrete_frechet(r[i], g[i]) for i in range(r.shape[0])]))


def frd(real_images, gen_images, extractor, layer_id=None) -> float:
    """Paired Frechet feature distance between aligned real/generated images."""
    if len(real_images) != len(gen_images):
        raise ValidationError(
            f"image counts differ: {len(real_images)} real vs {len(gen_images)} generated"
        )
    return frd_from_features(
        pooled_feature_vectors(real_images, extractor, layer_id),
        pooled_feature_vectors(gen_images, extractor, layer_id),
    )


# ---------------------------------------------------------------------------
# FID
# ---------------------------------------------------------------------------


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    scale = max(1.0, float(vals.max(initial=0.0)))
    if vals.min() < -(1e-10 + 1e-10 * scale):
        raise NumericError(f"matrix not PSD within tolerance (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(stats_real: GaussianStats, stats_gen: GaussianStats) -> float:
    """Frechet distance between two Gaussian feature fits:
    ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}).

    The cross term is computed as Tr of the PSD square root of the symmetrized
    product sqrt(S_g) S_r sqrt(S_g), with tiny negative eigenvalues clipped.
    """
    if stats_real.mu.shape != stats_gen.mu.shape:
        raise ValidationError("feature dimensions differ between the two stats")
    root_g = _sqrtm_psd(stats_gen.sigma)
    inner = root_g @ stats_real.sigma @ root_g
    vals = np.linalg.eigh((inner + inner.T) / 2.0)[0]
    scale = max(1.0, float(vals.max(initial=0.0)))
    if vals.min() < -(1e-10 + 1e-10 * scale):
        raise NumericError(f"product matrix not PSD within tolerance (min eigenvalue {vals.min():.3e})")
    trace_cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = stats_real.mu - stats_gen.mu
    return float(diff @ diff + np.trace(stats_real.sigma + stats_gen.sigma) - 2.0 * trace_cross)


# ---------------------------------------------------------------------------
# Pixel metrics
# ---------------------------------------------------------------------------


def _check_pair(a, b, data_range):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if data_range not in (255, 2):
        raise ValidationError(f"data_range must be 255 or 2, got {data_range}")
    return a, b


def _psnr_from_mse(mse: float, data_range) -> float:
    if mse < _MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(data_range**2 / mse))


def psnr(a, b, data_range=255) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 dB for (near-)identical inputs."""
    a, b = _check_pair(a, b, data_range)
    return _psnr_from_mse(float(np.mean((a - b) ** 2)), data_range)


def _gaussian_kernel(size=11, sigma=1.5) -> np.ndarray:
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords**2) / (2 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Valid-mode 2-d correlation: output covers only fully supported windows.
    kh, kw = kernel.shape
    h, w = img.shape
    out = np.zeros((h - kh + 1, w - kw + 1))
    for dy in range(kh):
        for dx in range(kw):
            out += kernel[dy, dx] * img[dy : dy + h - kh + 1, dx : dx + w - kw + 1]
    return out


def ssim(a, b, data_range=255) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5),
    K1=0.01, K2=0.03, averaged over valid windows and channels."""
    a, b = _check_pair(a, b, data_range)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValidationError("images must be at least 11x11 for SSIM")
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    kernel = _gaussian_kernel()
    scores = []
    for c in range(a.shape[2]):
        pa, pb = a[:, :, c], b[:, :, c]
        mu_a, mu_b = _windowed(pa, kernel), _windowed(pb, kernel)
        var_a = _windowed(pa * pa, kernel) - mu_a**2
        var_b = _windowed(pb * pb, kernel) - mu_b**2
        cov = _windowed(pa * pb, kernel) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def _gradient_maps(img: np.ndarray):
    gh = np.abs(img[:, 1:] - img[:, :-1])
    gv = np.abs(img[1:, :] - img[:-1, :])
    return gh, gv


def sharpness_difference(a, b, data_range=255) -> float:
    """PSNR-style score over absolute forward-gradient maps; identical
    gradients (e.g. a constant offset) hit the cap."""
    a, b = _check_pair(a, b, data_range)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    sq_err, count = 0.0, 0
    for c in range(a.shape[2]):
        for ga, gb in zip(_gradient_maps(a[:, :, c]), _gradient_maps(b[:, :, c])):
            sq_err += float(((ga - gb) ** 2).sum())
            count += ga.size
    return _psnr_from_mse(sq_err / count, data_range)


# ---------------------------------------------------------------------------
# Dataset-level evaluation
# ---------------------------------------------------------------------------

KNOWN_METRICS = ("psnr", "ssim", "sd", "fid", "frd")


def evaluate_pairs(samples, generate_fn, extractor=None, metric_names=KNOWN_METRICS):
    """Run the selected metrics over a split.

    ``generate_fn(x, c_y)`` maps a conditional image tensor plus target
    structure tensor to a generated image tensor. Pixel metrics run on the
    denormalized 0-255 scale; feature metrics use ``extractor``. Returns
    ``(summary, per_pair)`` dicts keyed by metric name.
    """
    from .data import denormalize  # local import to keep module load light

    unknown = set(metric_names) - set(KNOWN_METRICS)
    if unknown:
        raise ValidationError(f"unknown metrics: {sorted(unknown)}; known: {list(KNOWN_METRICS)}")
    need_features = bool({"fid", "frd"} & set(metric_names))
    if need_features and extractor is None:
        raise ValidationError("fid/frd require a feature extractor")

    per_pair = {name: [] for name in metric_names if name in ("psnr", "ssim", "sd", "frd")}
    reals, fakes = [], []
    for sample in samples:
        y = sample.y.values
        y_fake = generate_fn(sample.x.values, sample.c_y.values)
        if need_features:
            reals.append(y)
            fakes.append(y_fake)
        ref = denormalize(y).astype(np.float64)
        out = denormalize(y_fake).astype(np.float64)
        if "psnr" in per_pair:
            per_pair["psnr"].append(psnr(ref, out))
        if "ssim" in per_pair:
            per_pair["ssim"].append(ssim(ref, out))
        if "sd" in per_pair:
            per_pair["sd"].append(sharpness_difference(ref, out))

    summary = {}
    feats_real = feats_fake = None
    if need_features:
        feats_real = pooled_feature_vectors(reals, extractor)
        feats_fake = pooled_feature_vectors(fakes, extractor)
    for name in metric_names:
        if name == "fid":
            n, d = feats_real.rows.shape
            if n < d:
                warnings.warn(
                    f"FID computed from {n} samples in a {d}-dim feature space; "
                    "the Gaussian fit is rank-deficient",
                    RuntimeWarning,
                    stacklevel=2,
                )
            summary["fid"] = fid(gaussian_stats(feats_real), gaussian_stats(feats_fake))
        elif name == "frd":
            vals = [
                discrete_frechet(feats_real.rows[i], feats_fake.rows[i])
                for i in range(feats_real.rows.shape[0])
            ]
            per_pair["frd"] = vals
            summary["frd"] = float(np.mean(vals))
        else:
            summary[name] = float(np.mean(per_pair[name]))
    return summary, per_pair


def write_metric_csv(path, summary: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in summary.items():
            writer.writerow([name, f"{value:.10g}"])


# ---------------------------------------------------------------------------
# Feature file format
# ---------------------------------------------------------------------------


def write_features(path, features) -> None:
    """Persist a feature matrix: magic, version, N, d header then row-major
    little-endian float32 payload."""
    rows = features.rows if isinstance(features, FeatureMatrix) else FeatureMatrix(features).rows
    n, d = rows.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IQQ", FEATURE_VERSION, n, d))
        fh.write(rows.astype("<f4").tobytes(order="C"))


def read_features(path) -> FeatureMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(FEATURE_MAGIC))
        if magic != FEATURE_MAGIC:
            raise ValidationError(f"{path}: not a feature file (bad magic)")
        version, n, d = struct.unpack("<IQQ", fh.read(20))
        if version != FEATURE_VERSION:
            raise ValidationError(f"{path}: unsupported feature file version {version}")
        payload = fh.read(n * d * 4)
        if len(payload) != n * d * 4:
            raise ValidationError(f"{path}: truncated payload")
        rows = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    return FeatureMatrix(rows.astype(np.float64))
