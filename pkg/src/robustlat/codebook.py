"""Discrete codeword dictionary: quantization, neighbor tables, file formats.

The codebook is a K x D matrix of codewords; a token is a row index. All
distance computations are squared Euclidean in float64 regardless of storage
precision, with ties broken by the smallest index, so results are bit-stable
across runs. Nearest-neighbor search is exhaustive; at the scales this
toolkit targets (K up to tens of thousands) exactness is cheap and it keeps
every result checkable against a brute-force sort.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import binio

CODEBOOK_MAGIC = b"RTOK"
TOKENGRID_MAGIC = b"RTKG"

# cap on per-chunk float64 scratch elements for exhaustive search
_CHUNK_ELEMS = 2_000_000


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Codebook:
    """K codewords of dimension D, identified uniquely by row index."""

    vectors: np.ndarray  # (K, D) float64, read-only

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"codebook vectors must be 2-D, got shape {v.shape}")
        if v.shape[0] < 2:
            raise ValueError(f"codebook needs K >= 2 codewords, got K={v.shape[0]}")
        if v.shape[1] < 1:
            raise ValueError("codebook needs D >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("codebook contains non-finite entries")
        object.__setattr__(self, "vectors", _freeze(v.copy()))

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def D(self) -> int:
        return self.vectors.shape[1]

    def duplicate_count(self) -> int:
        """Number of codewords identical to an earlier row (collapse diagnostic)."""
        _, first = np.unique(self.vectors, axis=0, return_index=True)
        return self.K - len(first)


@dataclass(frozen=True)
class LatentGrid:
    """H x W grid of continuous D-dimensional latent vectors."""

    values: np.ndarray  # (H, W, D) float64

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"latent grid must be (H, W, D), got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1 or v.shape[2] < 1:
            raise ValueError(f"latent grid has empty dimension: {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent grid contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def H(self) -> int:
        return self.values.shape[0]

    @property
    def W(self) -> int:
        return self.values.shape[1]

    @property
    def D(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class TokenGrid:
    """H x W grid of codebook indices, each in [0, K)."""

    indices: np.ndarray  # (H, W) int64
    K: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 2:
            raise ValueError(f"token grid must be (H, W), got shape {idx.shape}")
        if idx.shape[0] < 1 or idx.shape[1] < 1:
            raise ValueError(f"token grid has empty dimension: {idx.shape}")
        if self.K < 2:
            raise ValueError(f"token grid K must be >= 2, got {self.K}")
        if idx.min() < 0 or idx.max() >= self.K:
            raise ValueError(
                f"token grid holds index outside [0, {self.K}) "
                f"(min {idx.min()}, max {idx.max()}): corrupt grid"
            )
        object.__setattr__(self, "indices", idx)

    @property
    def H(self) -> int:
        return self.indices.shape[0]

    @property
    def W(self) -> int:
        return self.indices.shape[1]


@dataclass(frozen=True)
class NeighborTable:
    """Per-codeword nearest neighbors, self excluded.

    Row k lists the delta_max nearest codeword indices to codeword k,
    ascending by squared distance, distance ties broken by smaller index.
    The first ``delta`` entries of row k are the candidate set a
    strength-``delta`` perturbation draws from.
    """

    neighbors: np.ndarray  # (K, delta_max) int64
    distances: np.ndarray  # (K, delta_max) float64, squared Euclidean

    def __post_init__(self):
        nb = np.asarray(self.neighbors, dtype=np.int64)
        ds = np.asarray(self.distances, dtype=np.float64)
        if nb.ndim != 2 or nb.shape != ds.shape:
            raise ValueError("neighbor/distance arrays must share a (K, delta_max) shape")
        k, dmax = nb.shape
        if not 1 <= dmax <= k - 1:
            raise ValueError(f"delta_max must be in [1, K-1], got {dmax} for K={k}")
        if nb.min() < 0 or nb.max() >= k:
            raise ValueError("neighbor table holds out-of-range index")
        if np.any(nb == np.arange(k)[:, None]):
            raise ValueError("neighbor table row contains its own index")
        if np.any(np.diff(ds, axis=1) < 0):
            raise ValueError("neighbor distances must be non-decreasing within a row")
        object.__setattr__(self, "neighbors", _freeze(nb.copy()))
        object.__setattr__(self, "distances", _freeze(ds.copy()))

    @property
    def K(self) -> int:
        return self.neighbors.shape[0]

    @property
    def delta_max(self) -> int:
        return self.neighbors.shape[1]


def exact_sq_distances(points: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances via explicit differences in float64.

    Identical inputs produce bitwise-identical distance values, which is what
    makes smallest-index tie-breaking reproducible. Quadratic memory; use for
    modest sizes or chunked.
    """
    diff = points[:, None, :] - vectors[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def nearest_indices(points: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Exact nearest row of ``vectors`` for each row of ``points``.

    Uses the fast expansion |p|^2 - 2 p.v + |v|^2 to find candidates, then
    recomputes near-ties with exact differences so that equal true distances
    resolve to the smallest index, bit-stably across runs.
    """
    pts = np.asarray(points, dtype=np.float64)
    vecs = np.asarray(vectors, dtype=np.float64)
    n, d = pts.shape
    k = vecs.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    v2 = np.einsum("kd,kd->k", vecs, vecs)
    chunk = max(1, (4 * _CHUNK_ELEMS) // max(1, k))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        p = pts[start:stop]
        p2 = np.einsum("nd,nd->n", p, p)
        dist = p2[:, None] - 2.0 * (p @ vecs.T) + v2[None, :]
        best = np.argmin(dist, axis=1)
        # expansion rounding can mis-order near-equal distances; recheck any
        # cell whose top-two gap is inside the error margin, exactly
        if k >= 2:
            two = np.partition(dist, 1, axis=1)[:, :2]
            margin = 1e-9 * (1.0 + p2 + v2.max())
            close = np.nonzero(two[:, 1] - two[:, 0] <= 4.0 * margin)[0]
            if len(close) > 0:
                exact = exact_sq_distances(p[close], vecs)
                best[close] = np.argmin(exact, axis=1)
        out[start:stop] = best
    return out


def quantize(latent: LatentGrid, cb: Codebook) -> TokenGrid:
    """Map each latent cell to the index of its closest codeword.

    Ties are broken toward the smallest index; rerunning on identical inputs
    yields a bit-identical grid.
    """
    if latent.D != cb.D:
        raise ValueError(
            f"latent dimension {latent.D} does not match codebook dimension {cb.D}"
        )
    flat = latent.values.reshape(-1, latent.D)
    idx = nearest_indices(flat, cb.vectors)
    return TokenGrid(indices=idx.reshape(latent.H, latent.W), K=cb.K)


def dequantize(tokens: TokenGrid, cb: Codebook) -> LatentGrid:
    """Replace each index with its codeword."""
    if tokens.K != cb.K:
        raise ValueError(
            f"token grid indexes a codebook of size {tokens.K}, got size {cb.K}"
        )
    return LatentGrid(values=cb.vectors[tokens.indices])


def build_neighbor_table(cb: Codebook, delta_max: int) -> NeighborTable:
    """Sort, for every codeword, all other codewords by squared distance.

    delta_max must leave room to exclude the codeword itself, so it is capped
    at K-1. Duplicate codewords are legal: a distance-0 neighbor is a valid
    perturbation target.
    """
    if not 1 <= delta_max <= cb.K - 1:
        raise ValueError(
            f"delta_max must be in [1, K-1] = [1, {cb.K - 1}], got {delta_max}"
        )
    k, d = cb.K, cb.D
    neighbors = np.empty((k, delta_max), dtype=np.int64)
    distances = np.empty((k, delta_max), dtype=np.float64)
    chunk = max(1, _CHUNK_ELEMS // max(1, k * d))
    for start in range(0, k, chunk):
        stop = min(start + chunk, k)
        diff = cb.vectors[start:stop, None, :] - cb.vectors[None, :, :]
        dist = np.einsum("nkd,nkd->nk", diff, diff)
        rows = np.arange(start, stop)
        dist[rows - start, rows] = np.inf  # exclude self
        order = np.argsort(dist, axis=1, kind="stable")[:, :delta_max]
        neighbors[start:stop] = order
        distances[start:stop] = np.take_along_axis(dist, order, axis=1)
    return NeighborTable(neighbors=neighbors, distances=distances)


def save_codebook(cb: Codebook, path) -> None:
    """Write the bit-exact binary codebook format (magic RTOK, f32 rows)."""
    with open(path, "wb") as f:
        binio.write_magic(f, CODEBOOK_MAGIC)
        binio.write_u32(f, binio.FORMAT_VERSION, cb.K, cb.D)
        binio.write_f32(f, cb.vectors)


def load_codebook(path) -> Codebook:
    with open(path, "rb") as f:
        binio.read_magic(f, CODEBOOK_MAGIC, "codebook file")
        version, k, d = binio.read_u32(f, 3, "codebook file")
        binio.check_version(version, "codebook file")
        vals = binio.read_f32(f, k * d, "codebook file").reshape(k, d)
        binio.expect_eof(f, "codebook file")
    return Codebook(vectors=vals.astype(np.float64))


def save_token_grid(tokens: TokenGrid, path) -> None:
    """Write the token grid format (magic RTKG, u32 indices row-major)."""
    with open(path, "wb") as f:
        binio.write_magic(f, TOKENGRID_MAGIC)
        binio.write_u32(f, binio.FORMAT_VERSION, tokens.H, tokens.W, tokens.K)
        binio.write_u32_array(f, tokens.indices)


def load_token_grid(path) -> TokenGrid:
    with open(path, "rb") as f:
        binio.read_magic(f, TOKENGRID_MAGIC, "token grid file")
        version, h, w, k = binio.read_u32(f, 4, "token grid file")
        binio.check_version(version, "token grid file")
        idx = binio.read_u32_array(f, h * w, "token grid file").reshape(h, w)
        binio.expect_eof(f, "token grid file")
    return TokenGrid(indices=idx.astype(np.int64), K=k)
