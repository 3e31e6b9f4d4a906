"""Latent perturbation: the sampling-error simulator and its annealing schedule.

A perturbation is parameterized by (alpha, beta, delta, seed):

* alpha  - fraction of token positions replaced within a perturbed image,
* beta   - fraction of images in a batch that get perturbed,
* delta  - size of the nearest-neighbor candidate set a replacement is
           drawn from (the codeword itself is never a candidate),
* seed   - root of the named PRNG streams.

Counts are round-half-up so alpha = 1 replaces every position exactly.
Per-image streams are derived from (seed, batch index, image index), which
makes results independent of iteration order and worker count.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import rng
from .codebook import NeighborTable, TokenGrid

SHAPES = ("linear", "cosine", "constant")
WEIGHTINGS = ("uniform", "inverse_distance")


def round_half_up(x: float) -> int:
    """Symmetric nearest-integer with .5 rounding up (banker-free)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class PerturbationSpec:
    """One perturbation setting. delta is validated against the neighbor
    table at application time (it must not exceed the table depth)."""

    alpha: float
    beta: float
    delta: int
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.delta < 1:
            raise ValueError(f"delta must be >= 1, got {self.delta}")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "delta": self.delta,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PerturbationSpec":
        return cls(
            alpha=float(obj["alpha"]),
            beta=float(obj["beta"]),
            delta=int(obj["delta"]),
            seed=int(obj.get("seed", 0)),
        )


@dataclass(frozen=True)
class AnnealSchedule:
    """Decay of perturbation intensity over training steps.

    At step s with progress t = min(s / total_steps, 1):

        factor(t) = 1 - (1 - final_scale) * f(t)
        alpha(s)  = alpha0 * factor(t)
        delta(s)  = max(1, round(delta0 * factor(t)))

    where f is t (linear), (1 - cos(pi t)) / 2 (cosine) or 0 (constant).
    final_scale = 0.5 halves both parameters by the end of training;
    final_scale = 0 anneals them away; shape "constant" never decays.
    Per-parameter scales may override final_scale when only one of the two
    should decay.
    """

    initial: PerturbationSpec
    final_scale: float
    total_steps: int
    shape: str = "linear"
    alpha_final_scale: float | None = None
    delta_final_scale: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.final_scale <= 1.0:
            raise ValueError(f"final_scale must be in [0, 1], got {self.final_scale}")
        for name in ("alpha_final_scale", "delta_final_scale"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")

    def to_json(self) -> dict:
        out = self.initial.to_json()
        out.update(
            final_scale=self.final_scale,
            total_steps=self.total_steps,
            shape=self.shape,
        )
        if self.alpha_final_scale is not None:
            out["alpha_final_scale"] = self.alpha_final_scale
        if self.delta_final_scale is not None:
            out["delta_final_scale"] = self.delta_final_scale
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "AnnealSchedule":
        spec = PerturbationSpec.from_json(obj)
        return cls(
            initial=spec,
            final_scale=float(obj["final_scale"]),
            total_steps=int(obj["total_steps"]),
            shape=str(obj.get("shape", "linear")),
            alpha_final_scale=(
                float(obj["alpha_final_scale"]) if "alpha_final_scale" in obj else None
            ),
            delta_final_scale=(
                float(obj["delta_final_scale"]) if "delta_final_scale" in obj else None
            ),
        )


class Replacement(NamedTuple):
    image: int
    h: int
    w: int
    old: int
    new: int


@dataclass
class PerturbationReport:
    images_perturbed: int = 0
    tokens_replaced: int = 0
    replacement_log: list[Replacement] | None = None

    def merge(self, other: "PerturbationReport") -> None:
        self.images_perturbed += other.images_perturbed
        self.tokens_replaced += other.tokens_replaced
        if other.replacement_log is not None:
            if self.replacement_log is None:
                self.replacement_log = []
            self.replacement_log.extend(other.replacement_log)

    def write_log_csv(self, path) -> None:
        if self.replacement_log is None:
            raise ValueError("replacement logging was not enabled for this report")
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["image", "h", "w", "old", "new"])
            w.writerows(self.replacement_log)


def _draw_replacements(
    old: np.ndarray,
    spec: PerturbationSpec,
    nt: NeighborTable,
    stream: np.random.Generator,
    weighting: str,
) -> np.ndarray:
    cands = nt.neighbors[old, : spec.delta]  # (P, delta)
    if weighting == "uniform":
        j = stream.integers(0, spec.delta, size=len(old))
    else:
        # weight candidates by inverse Euclidean distance; distance-0
        # duplicates soak up nearly all mass, which is the intended behavior
        d = np.sqrt(nt.distances[old, : spec.delta])
        wts = 1.0 / (d + 1e-9)
        cum = np.cumsum(wts, axis=1)
        u = stream.random(len(old)) * cum[:, -1]
        j = (u[:, None] >= cum).sum(axis=1)
    return cands[np.arange(len(old)), j]


def perturb_grid(
    tokens: TokenGrid,
    spec: PerturbationSpec,
    nt: NeighborTable,
    stream: np.random.Generator,
    *,
    log_replacements: bool = False,
    image_index: int = 0,
    weighting: str = "uniform",
) -> tuple[TokenGrid, PerturbationReport]:
    """Replace round(alpha * H * W) tokens with near neighbors.

    Positions are drawn uniformly without replacement; each selected token k
    is replaced by a draw from the first ``spec.delta`` entries of the
    neighbor table row k. The input grid is never mutated. A zero position
    count is not an error: the grid comes back unchanged with a zero report.
    """
    if tokens.K != nt.K:
        raise ValueError(f"token grid K={tokens.K} does not match table K={nt.K}")
    if spec.delta > nt.delta_max:
        raise ValueError(
            f"delta={spec.delta} exceeds neighbor table depth {nt.delta_max}"
        )
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")

    hw = tokens.H * tokens.W
    p = round_half_up(spec.alpha * hw)
    log: list[Replacement] | None = [] if log_replacements else None
    if p == 0:
        out = TokenGrid(indices=tokens.indices.copy(), K=tokens.K)
        return out, PerturbationReport(0, 0, log)

    pos = stream.choice(hw, size=p, replace=False)
    flat = tokens.indices.ravel().copy()
    old = flat[pos]
    new = _draw_replacements(old, spec, nt, stream, weighting)
    flat[pos] = new
    out = TokenGrid(indices=flat.reshape(tokens.H, tokens.W), K=tokens.K)

    if log is not None:
        ws = tokens.W
        for q, o, n in zip(pos.tolist(), old.tolist(), new.tolist()):
            log.append(Replacement(image_index, q // ws, q % ws, o, n))
    return out, PerturbationReport(1, int(p), log)


def perturb_batch(
    batch: list[TokenGrid],
    spec: PerturbationSpec,
    nt: NeighborTable,
    *,
    batch_index: int = 0,
    log_replacements: bool = False,
    weighting: str = "uniform",
) -> tuple[list[TokenGrid], PerturbationReport]:
    """Perturb round(beta * len(batch)) images, leave the rest untouched.

    Image selection draws from stream(seed, "select", batch_index); image i
    perturbs under stream(seed, "image", batch_index, i). Both are fixed by
    (seed, batch counter, image position) alone, so a parallel map over
    images reproduces the sequential result bit for bit.
    """
    n = len(batch)
    log: list[Replacement] | None = [] if log_replacements else None
    if n == 0:
        return [], PerturbationReport(0, 0, log)
    if any(g.K != nt.K for g in batch):
        raise ValueError("all token grids in a batch must share the table's K")

    m = round_half_up(spec.beta * n)
    if m == 0:
        return list(batch), PerturbationReport(0, 0, log)
    selected = rng.stream(spec.seed, "select", batch_index).choice(n, size=m, replace=False)
    chosen = set(selected.tolist())

    out: list[TokenGrid] = []
    report = PerturbationReport(0, 0, log)
    for i, grid in enumerate(batch):
        if i not in chosen:
            out.append(grid)
            continue
        g, rep = perturb_grid(
            grid,
            spec,
            nt,
            rng.stream(spec.seed, "image", batch_index, i),
            log_replacements=log_replacements,
            image_index=i,
            weighting=weighting,
        )
        out.append(g)
        report.tokens_replaced += rep.tokens_replaced
        if log_replacements and rep.replacement_log:
            report.replacement_log.extend(rep.replacement_log)
    report.images_perturbed = m
    return out, report


def anneal_at(sched: AnnealSchedule, step: int) -> PerturbationSpec:
    """Evaluate the schedule at a step (clamped beyond total_steps)."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    t = min(step / sched.total_steps, 1.0)
    if sched.shape == "linear":
        f = t
    elif sched.shape == "cosine":
        f = (1.0 - math.cos(math.pi * t)) / 2.0
    else:
        f = 0.0
    a_scale = sched.alpha_final_scale if sched.alpha_final_scale is not None else sched.final_scale
    d_scale = sched.delta_final_scale if sched.delta_final_scale is not None else sched.final_scale
    alpha = sched.initial.alpha * (1.0 - (1.0 - a_scale) * f)
    alpha = min(max(alpha, 0.0), 1.0)
    delta = max(1, round_half_up(sched.initial.delta * (1.0 - (1.0 - d_scale) * f)))
    return replace(sched.initial, alpha=alpha, delta=delta)
