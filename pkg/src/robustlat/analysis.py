"""Diagnostics: token usage, decoder smoothness, k-means elbows, 2-D views.

These are the measurement tools used to inspect a trained tokenizer's
latent space: how concentrated token usage is (summarized by a Gini
coefficient), how violently the decoder reacts to single perturbations
(empirical Lipschitz ratios), and how clustered the codeword / feature
geometry is (k-means elbow curves, PCA projection).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .codebook import Codebook, NeighborTable, TokenGrid, dequantize, quantize
from .perturbation import PerturbationSpec, perturb_grid
from .tokenizer import ToyTokenizerParams, decode, encode


@dataclass
class UsageHistogram:
    counts: np.ndarray  # (K,) non-negative
    total: int
    thresholds: list[int] = field(default_factory=list)
    truncations: dict[int, np.ndarray] = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["token", "count"])
            for k, c in enumerate(self.counts):
                w.writerow([k, int(c)])


@dataclass
class LipschitzReport:
    samples: int
    ratios: np.ndarray
    zero_delta_skipped: int
    max: float
    mean: float
    p95: float

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "zero_delta_skipped": self.zero_delta_skipped,
            "max": self.max,
            "mean": self.mean,
            "p95": self.p95,
            "ratios": [float(r) for r in self.ratios],
        }


@dataclass
class ElbowTable:
    rows: list[tuple[int, float, float]]  # (k, sse, delta_sse vs previous)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["k", "sse", "delta_sse"])
            for k, sse, delta in self.rows:
                w.writerow([k, repr(sse), repr(delta)])


def usage_histogram(
    grids: list[TokenGrid], K: int, thresholds: list[int] | None = None
) -> UsageHistogram:
    """Count occurrences of every token index across the grids.

    For each threshold, the truncation view lists the token indices whose
    count reaches it (the "key token" sets at increasing usage cutoffs).
    """
    counts = np.zeros(K, dtype=np.int64)
    for g in grids:
        if g.K > K:
            raise ValueError(f"grid indexes codebook of size {g.K} > {K}")
        counts += np.bincount(g.indices.reshape(-1), minlength=K)
    thresholds = list(thresholds or [])
    truncations = {t: np.nonzero(counts >= t)[0] for t in thresholds}
    return UsageHistogram(
        counts=counts, total=int(counts.sum()), thresholds=thresholds,
        truncations=truncations,
    )


def gini(counts: np.ndarray) -> float:
    """Gini coefficient of a usage histogram (0 uniform, -> 1 concentrated)."""
    c = np.sort(np.asarray(counts, dtype=np.float64))
    n = len(c)
    total = c.sum()
    if n == 0 or total == 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float(2.0 * np.sum(ranks * c) / (n * total) - (n + 1) / n)


def empirical_lipschitz(
    params: ToyTokenizerParams,
    nt: NeighborTable,
    spec: PerturbationSpec,
    images: np.ndarray,
    samples: int,
    *,
    decode_fn=None,
) -> LipschitzReport:
    """Ratio of decoder-output change to codeword-space change per draw.

    Each sample encodes and quantizes one image, applies one perturbation
    draw, and measures ||decode(perturbed) - decode(original)|| over the
    flattened codeword-space displacement norm. Draws whose displacement is
    zero (duplicate-codeword replacements) are skipped and counted.
    ``decode_fn(tokens) -> array`` overrides the model decoder in tests.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if spec.alpha <= 0:
        raise ValueError("lipschitz probing needs alpha > 0")
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("no images to probe")
    if decode_fn is None:
        decode_fn = lambda tokens: decode(tokens, params)  # noqa: E731
    cb = Codebook(params.codebook.astype(np.float64))

    ratios = []
    skipped = 0
    for s in range(samples):
        image = images[s % len(images)]
        tokens = quantize(encode(image, params), cb)
        stream = rng.stream(spec.seed, "lipschitz", s)
        perturbed, _ = perturb_grid(tokens, spec, nt, stream)
        delta = (dequantize(perturbed, cb).values - dequantize(tokens, cb).values).ravel()
        dnorm = float(np.linalg.norm(delta))
        if dnorm == 0.0:
            skipped += 1
            continue
        change = np.asarray(decode_fn(perturbed), dtype=np.float64) - np.asarray(
            decode_fn(tokens), dtype=np.float64
        )
        ratios.append(float(np.linalg.norm(change.ravel()) / dnorm))
    if not ratios:
        raise ValueError(
            "every perturbation draw had zero displacement: codebook is degenerate"
        )
    arr = np.asarray(ratios)
    return LipschitzReport(
        samples=samples,
        ratios=arr,
        zero_delta_skipped=skipped,
        max=float(arr.max()),
        mean=float(arr.mean()),
        p95=float(np.percentile(arr, 95)),
    )


def _sse_of(points: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    return float(np.sum((points - centroids[assign]) ** 2))


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    from .codebook import nearest_indices

    return nearest_indices(points, centroids)


def _kmeans_pp_seed(
    points: np.ndarray, k: int, gen: np.random.Generator, base: np.ndarray | None = None
) -> np.ndarray:
    """k-means++ seeding, optionally on top of already-fixed centroids."""
    n = len(points)
    centroids = [] if base is None else [c for c in base]
    if not centroids:
        centroids.append(points[int(gen.integers(0, n))])
    while len(centroids) < k:
        d2 = np.min(
            ((points[:, None, :] - np.asarray(centroids)[None, :, :]) ** 2).sum(-1),
            axis=1,
        )
        total = d2.sum()
        if total <= 0:
            centroids.append(points[int(gen.integers(0, n))])
            continue
        u = gen.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
        centroids.append(points[min(idx, n - 1)])
    return np.asarray(centroids, dtype=np.float64)


def _lloyd(
    points: np.ndarray, centroids: np.ndarray, max_iters: int
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    k = len(centroids)
    assign = _assign(points, centroids)
    history = [_sse_of(points, centroids, assign)]
    for _ in range(max_iters):
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[assign == j]
            if len(members) > 0:
                new_centroids[j] = members.mean(axis=0)
            else:
                # re-seed empty cluster at the point farthest from its centroid
                far = np.argmax(np.sum((points - new_centroids[assign]) ** 2, axis=1))
                new_centroids[j] = points[far]
        new_assign = _assign(points, new_centroids)
        new_sse = _sse_of(points, new_centroids, new_assign)
        if new_sse > history[-1]:  # defensive: accept only non-increasing moves
            break
        centroids, assign = new_centroids, new_assign
        history.append(new_sse)
        if new_sse == history[-2]:
            break
    return centroids, assign, history[-1], history


def kmeans(
    points: np.ndarray,
    k: int,
    restarts: int = 8,
    max_iters: int = 100,
    seed: int = 0,
    *,
    init: np.ndarray | None = None,
    return_history: bool = False,
):
    """Best-of-restarts Lloyd's algorithm with k-means++ seeding.

    ``init`` adds one extra restart started from the given centroids (used
    by the elbow's restart inheritance). Returns (centroids, assignment,
    sse); with return_history also the per-iteration SSE of the winner.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be (n, d), got shape {pts.shape}")
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, n] = [1, {n}], got {k}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    candidates: list[np.ndarray] = []
    for r in range(restarts):
        gen = rng.stream(seed, "kmeans", k, r)
        candidates.append(_kmeans_pp_seed(pts, k, gen))
    if init is not None:
        base = np.asarray(init, dtype=np.float64)
        if base.shape[1] != pts.shape[1] or len(base) > k:
            raise ValueError("init centroids must be (m <= k, d)")
        gen = rng.stream(seed, "kmeans-inherit", k)
        candidates.append(_kmeans_pp_seed(pts, k, gen, base=base))

    best = None
    for cand in candidates:
        centroids, assign, sse, history = _lloyd(pts, cand, max_iters)
        if best is None or sse < best[2]:
            best = (centroids, assign, sse, history)
    centroids, assign, sse, history = best
    if return_history:
        return centroids, assign, sse, history
    return centroids, assign, sse


def elbow_curve(
    points: np.ndarray, ks: list[int], restarts: int = 8, seed: int = 0
) -> ElbowTable:
    """k-means SSE for ascending k with restart inheritance.

    Each k's restart pool includes the previous k's best centroids extended
    by k-means++ seeding, which guarantees SSE never increases in k.
    """
    ks = list(ks)
    if ks != sorted(ks) or len(set(ks)) != len(ks):
        raise ValueError(f"ks must be strictly ascending, got {ks}")
    rows = []
    prev_centroids = None
    prev_sse = None
    for k in ks:
        centroids, _, sse = kmeans(
            points, k, restarts=restarts, seed=seed, init=prev_centroids
        )
        delta = 0.0 if prev_sse is None else sse - prev_sse
        rows.append((k, sse, delta))
        prev_centroids, prev_sse = centroids, sse
    return ElbowTable(rows=rows)


def project_2d(cb: Codebook) -> np.ndarray:
    """Top-2 principal components of the codewords, deterministic signs.

    Each component is flipped so its largest-magnitude loading is positive.
    """
    centered = cb.vectors - cb.vectors.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = np.zeros((2, cb.D))
    comps[: min(2, vt.shape[0])] = vt[:2]
    for i in range(2):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def write_projection_csv(path, coords: np.ndarray, counts: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["token", "x", "y", "count"])
        for k, ((x, y), c) in enumerate(zip(coords, counts)):
            w.writerow([k, repr(float(x)), repr(float(y)), int(c)])
