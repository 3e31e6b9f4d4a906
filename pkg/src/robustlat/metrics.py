"""Fréchet-distance engine: feature extraction, Gaussian moments, PSD sqrt.

The Fréchet distance between two image sets is computed on features, as

    ||mu_a - mu_b||^2 + Tr(Sig_a + Sig_b - 2 (Sig_a Sig_b)^(1/2)),

with the cross term evaluated on the symmetrized product
Sig_a^(1/2) Sig_b Sig_a^(1/2), whose trace is identical but whose square
root is a well-posed PSD problem.

The default extractor is a seeded random projection (downsample to 16x16,
flatten, affine project, tanh), which makes absolute values extractor-
relative: only comparisons under a fixed extractor are meaningful.
Externally computed features (e.g. from a pretrained network) enter through
the "RFEA" feature file and the external_features extractor kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import binio, rng

FEATURES_MAGIC = b"RFEA"

EXTRACTOR_KINDS = ("random_projection", "external_features")


@dataclass(frozen=True)
class FeatureExtractorSpec:
    kind: str
    out_dim: int
    seed: int = 0
    source_path: str | None = None

    def __post_init__(self):
        if self.kind not in EXTRACTOR_KINDS:
            raise ValueError(f"kind must be one of {EXTRACTOR_KINDS}, got {self.kind!r}")
        if self.out_dim < 2:
            raise ValueError(f"out_dim must be >= 2, got {self.out_dim}")
        if self.kind == "external_features" and not self.source_path:
            raise ValueError("external_features requires source_path")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "out_dim": self.out_dim, "seed": self.seed}
        if self.source_path is not None:
            out["source_path"] = self.source_path
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureExtractorSpec":
        return cls(
            kind=str(obj["kind"]),
            out_dim=int(obj["out_dim"]),
            seed=int(obj.get("seed", 0)),
            source_path=obj.get("source_path"),
        )


@dataclass(frozen=True)
class FeatureStats:
    """Sample mean and unbiased covariance of a feature set."""

    n: int
    mean: np.ndarray  # (d,)
    cov: np.ndarray  # (d, d), symmetric PSD

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if self.n < 2:
            raise ValueError(f"stats need n >= 2 samples, got {self.n}")
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean must be (d,) and cov (d, d)")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("stats contain non-finite entries")
        if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance is not symmetric")
        eigs = np.linalg.eigvalsh(cov)
        if eigs.min() < -1e-8 * max(1.0, eigs.max(), 0.0):
            raise ValueError(f"covariance is not PSD (min eigenvalue {eigs.min():g})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return self.mean.size


def _downsample16(images: np.ndarray) -> np.ndarray:
    """Average-pool each channel onto a 16x16 grid (nearest row/col when the
    source is smaller than 16)."""
    n, h, w, c = images.shape

    def axis_pool(arr, size, axis):
        bounds = [(i * size) // 16 for i in range(17)]
        pieces = []
        for i in range(16):
            lo, hi = bounds[i], bounds[i + 1]
            if hi > lo:
                pieces.append(arr.take(range(lo, hi), axis=axis).mean(axis=axis, keepdims=True))
            else:
                pieces.append(arr.take([min(lo, size - 1)], axis=axis))
        return np.concatenate(pieces, axis=axis)

    out = axis_pool(images.astype(np.float64), h, axis=1)
    out = axis_pool(out, w, axis=2)
    return out


def extract_features(images: np.ndarray, spec: FeatureExtractorSpec) -> np.ndarray:
    """Turn an (n, h, w, c) image batch into an (n, out_dim) feature matrix.

    random_projection: downsample to 16x16, flatten, apply the seeded affine
    projection, tanh. Fully determined by (spec.seed, out_dim, channels).
    external_features: pass through the rows of the RFEA file at source_path
    (row count must match n).
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ValueError(f"image batch must be (n, h, w, c), got shape {images.shape}")
    n, h, w, c = images.shape
    if spec.kind == "external_features":
        feats = load_features(spec.source_path)
        if feats.shape[0] != n:
            raise ValueError(
                f"feature file {spec.source_path} has {feats.shape[0]} rows "
                f"for {n} images"
            )
        if feats.shape[1] != spec.out_dim:
            raise ValueError(
                f"feature file dimension {feats.shape[1]} does not match "
                f"out_dim {spec.out_dim}"
            )
        return feats

    flat = _downsample16(images).reshape(n, 16 * 16 * c)
    gen = rng.stream(spec.seed, "feature-projection", spec.out_dim, c)
    in_dim = flat.shape[1]
    weights = gen.standard_normal((spec.out_dim, in_dim)) / np.sqrt(in_dim)
    bias = gen.standard_normal(spec.out_dim)
    return np.tanh(flat @ weights.T + bias)


def fit_stats(features: np.ndarray) -> FeatureStats:
    """Column mean and unbiased (n-1) covariance, symmetrized exactly."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {feats.shape}")
    n = feats.shape[0]
    if n < 2:
        raise ValueError(f"covariance needs n >= 2 rows, got {n}")
    if not np.all(np.isfinite(feats)):
        raise ValueError("feature matrix contains non-finite entries")
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return FeatureStats(n=n, mean=mean, cov=cov)


def matrix_sqrt_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below 1e-8 times the largest are clamped to zero, which keeps
    rank-deficient covariances (small sample counts) well behaved. The result
    satisfies ||S S - A||_F <= 1e-6 * max(1, ||A||_F) for PSD input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if np.any(np.isnan(a)):
        raise ValueError("matrix contains NaN entries")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if np.max(np.abs(a - a.T)) > 1e-8 * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    sym = (a + a.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    clamp = 1e-8 * max(float(eigvals[-1]), 0.0)
    eigvals = np.where(eigvals < clamp, 0.0, eigvals)
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    return (root + root.T) / 2.0


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Fréchet distance between two Gaussian moment pairs (clamped at 0)."""
    if a.d != b.d:
        raise ValueError(f"stats dimensions differ: {a.d} vs {b.d}")
    diff = a.mean - b.mean
    root_a = matrix_sqrt_psd(a.cov)
    inner = root_a @ b.cov @ root_a
    cross = matrix_sqrt_psd((inner + inner.T) / 2.0)
    val = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def fid_between(
    images_a: np.ndarray, images_b: np.ndarray, extractor: FeatureExtractorSpec
) -> float:
    """Fréchet distance between two image sets under one extractor."""
    stats_a = fit_stats(extract_features(images_a, extractor))
    stats_b = fit_stats(extract_features(images_b, extractor))
    return frechet_distance(stats_a, stats_b)


def save_features(features: np.ndarray, path) -> None:
    """Write the feature interchange format (magic RFEA, f32 rows)."""
    feats = np.asarray(features)
    if feats.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {feats.shape}")
    with open(path, "wb") as f:
        binio.write_magic(f, FEATURES_MAGIC)
        binio.write_u32(f, binio.FORMAT_VERSION, feats.shape[0], feats.shape[1])
        binio.write_f32(f, feats)


def load_features(path) -> np.ndarray:
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise ValueError(f"cannot open feature file {path}: {exc}") from exc
    with f:
        binio.read_magic(f, FEATURES_MAGIC, "feature file")
        version, n, d = binio.read_u32(f, 3, "feature file")
        binio.check_version(version, "feature file")
        vals = binio.read_f32(f, n * d, "feature file").reshape(n, d)
        binio.expect_eof(f, "feature file")
    return vals.astype(np.float64)
