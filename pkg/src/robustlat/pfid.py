"""Perturbed-FID protocol: the fixed (alpha, delta) grid and its average.

rFID is the Fréchet distance between clean reconstructions and the source
images. pFID perturbs every image's tokens (beta = 1) under each setting of
a 5 x 3 grid of perturbation rates and strengths, computes one FID per
setting, and averages the 15 values. Nominal strengths are anchored to a
reference codebook size and scaled linearly to the codebook under test.

A tokenizer here is any object with:

    encode_tokens(images) -> list[TokenGrid]
    decode_tokens(list[TokenGrid]) -> images
    reconstruct(images) -> images
    codebook -> Codebook

Determinism contract (what an independent re-execution must reproduce):
setting ``s`` (row-major over alphas x deltas) perturbs with a
PerturbationSpec seeded by ``derive_seed(eval_seed, "pfid", s)`` applied via
``perturb_batch(..., batch_index=0)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .codebook import NeighborTable
from .metrics import FeatureExtractorSpec, extract_features, fit_stats, frechet_distance
from .perturbation import PerturbationSpec, perturb_batch, round_half_up

DEFAULT_ALPHAS = (0.9, 0.8, 0.7, 0.6, 0.5)
DEFAULT_DELTAS = (200, 280, 360)
DEFAULT_K_REF = 16384


@dataclass(frozen=True)
class PfidConfig:
    extractor: FeatureExtractorSpec
    eval_seed: int
    alphas: tuple = DEFAULT_ALPHAS
    deltas: tuple = DEFAULT_DELTAS
    beta: float = 1.0
    k_ref: int = DEFAULT_K_REF
    sample_count: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "deltas", tuple(int(d) for d in self.deltas))
        if self.beta != 1.0:
            raise ValueError(f"the protocol perturbs every image; beta must be 1.0, got {self.beta}")
        if not self.alphas or any(not 0.0 < a <= 1.0 for a in self.alphas):
            raise ValueError(f"alphas must be non-empty and within (0, 1], got {self.alphas}")
        if not self.deltas or any(d < 1 for d in self.deltas):
            raise ValueError(f"deltas must be non-empty positive integers, got {self.deltas}")
        if self.k_ref < 2:
            raise ValueError(f"k_ref must be >= 2, got {self.k_ref}")
        if self.sample_count is not None and self.sample_count < 2:
            raise ValueError("sample_count must be >= 2 when set")

    def settings(self, K: int) -> list[tuple[float, int, int]]:
        """Row-major (alpha, delta_nominal, delta_scaled) list; the position
        in this list is the setting index used for stream derivation."""
        return [
            (a, d, scale_delta(d, K, self.k_ref))
            for a in self.alphas
            for d in self.deltas
        ]

    def to_json(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "deltas": list(self.deltas),
            "beta": self.beta,
            "k_ref": self.k_ref,
            "eval_seed": self.eval_seed,
            "sample_count": self.sample_count,
            "extractor": self.extractor.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PfidConfig":
        return cls(
            extractor=FeatureExtractorSpec.from_json(obj["extractor"]),
            eval_seed=int(obj["eval_seed"]),
            alphas=tuple(obj.get("alphas", DEFAULT_ALPHAS)),
            deltas=tuple(obj.get("deltas", DEFAULT_DELTAS)),
            beta=float(obj.get("beta", 1.0)),
            k_ref=int(obj.get("k_ref", DEFAULT_K_REF)),
            sample_count=obj.get("sample_count"),
        )


@dataclass(frozen=True)
class PfidRow:
    alpha: float
    delta_nominal: int
    delta_scaled: int
    beta: float
    fid: float


@dataclass
class PfidReport:
    per_setting: list[PfidRow]
    pfid: float
    rfid: float
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.per_setting:
            mean = float(np.mean([r.fid for r in self.per_setting]))
            if abs(mean - self.pfid) > 1e-12 * max(1.0, abs(mean)):
                raise ValueError("pfid does not equal the mean of the per-setting fids")

    def to_json(self) -> dict:
        return {
            "version": 1,
            "rfid": self.rfid,
            "pfid": self.pfid,
            "per_setting": [
                {
                    "alpha": r.alpha,
                    "delta_nominal": r.delta_nominal,
                    "delta_scaled": r.delta_scaled,
                    "beta": r.beta,
                    "fid": r.fid,
                }
                for r in self.per_setting
            ],
            "config": self.config,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PfidReport":
        rows = [
            PfidRow(
                alpha=float(r["alpha"]),
                delta_nominal=int(r["delta_nominal"]),
                delta_scaled=int(r["delta_scaled"]),
                beta=float(r["beta"]),
                fid=float(r["fid"]),
            )
            for r in obj["per_setting"]
        ]
        return cls(
            per_setting=rows,
            pfid=float(obj["pfid"]),
            rfid=float(obj["rfid"]),
            config=obj.get("config", {}),
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["alpha", "delta_nominal", "delta_scaled", "beta", "fid"])
            for r in self.per_setting:
                w.writerow(
                    [r.alpha, r.delta_nominal, r.delta_scaled, r.beta, repr(r.fid)]
                )

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")


def scale_delta(delta_nominal: int, K: int, k_ref: int) -> int:
    """Scale a nominal strength to codebook size K, clamped into [1, K-1]."""
    if K < 2 or k_ref < 2:
        raise ValueError("K and k_ref must be >= 2")
    return max(1, min(K - 1, round_half_up(delta_nominal * K / k_ref)))


def setting_seed(eval_seed: int, setting_index: int) -> int:
    """Seed of the perturbation spec for one grid setting."""
    return rng.derive_seed(eval_seed, "pfid", setting_index)


def _select(images: np.ndarray, cfg: PfidConfig) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if cfg.sample_count is not None:
        images = images[: cfg.sample_count]
    if len(images) < 2:
        raise ValueError(f"evaluation needs at least 2 images, got {len(images)}")
    return images


def compute_rfid(tokenizer, images: np.ndarray, extractor: FeatureExtractorSpec) -> float:
    """FID between clean reconstructions and the source images."""
    images = np.asarray(images, dtype=np.float64)
    if len(images) < 2:
        raise ValueError(f"evaluation needs at least 2 images, got {len(images)}")
    recon = tokenizer.reconstruct(images)
    ref = fit_stats(extract_features(images, extractor))
    got = fit_stats(extract_features(recon, extractor))
    return frechet_distance(got, ref)


def setting_fid(
    tokenizer,
    images: np.ndarray,
    cfg: PfidConfig,
    nt: NeighborTable,
    setting_index: int,
) -> PfidRow:
    """One grid setting: encode, perturb every image, decode, FID vs source."""
    settings = cfg.settings(tokenizer.codebook.K)
    alpha, d_nom, d_scaled = settings[setting_index]
    if d_scaled > nt.delta_max:
        raise ValueError(
            f"neighbor table depth {nt.delta_max} is too shallow for "
            f"scaled delta {d_scaled}"
        )
    spec = PerturbationSpec(
        alpha=alpha, beta=1.0, delta=d_scaled, seed=setting_seed(cfg.eval_seed, setting_index)
    )
    grids = tokenizer.encode_tokens(images)
    perturbed, _ = perturb_batch(grids, spec, nt, batch_index=0)
    recon = tokenizer.decode_tokens(perturbed)
    ref = fit_stats(extract_features(images, cfg.extractor))
    got = fit_stats(extract_features(recon, cfg.extractor))
    return PfidRow(
        alpha=alpha,
        delta_nominal=d_nom,
        delta_scaled=d_scaled,
        beta=1.0,
        fid=frechet_distance(got, ref),
    )


def compute_pfid(
    tokenizer, images: np.ndarray, cfg: PfidConfig, nt: NeighborTable
) -> PfidReport:
    """Evaluate every grid setting and average; also reports rFID."""
    images = _select(images, cfg)
    settings = cfg.settings(tokenizer.codebook.K)
    max_delta = max(s[2] for s in settings)
    if max_delta > nt.delta_max:
        raise ValueError(
            f"neighbor table depth {nt.delta_max} is too shallow for "
            f"scaled delta {max_delta}"
        )
    rows = [
        setting_fid(tokenizer, images, cfg, nt, s) for s in range(len(settings))
    ]
    rfid = compute_rfid(tokenizer, images, cfg.extractor)
    return PfidReport(
        per_setting=rows,
        pfid=float(np.mean([r.fid for r in rows])),
        rfid=rfid,
        config=cfg.to_json(),
    )
