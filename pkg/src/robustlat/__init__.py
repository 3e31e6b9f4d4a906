"""Discrete-latent robustness toolkit.

Vector-quantized codebooks, the latent-perturbation operator that simulates
autoregressive sampling error, perturbed-FID evaluation, and a desk-scale
patch tokenizer trained with plug-in perturbation.
"""

__version__ = "0.1.0"

from .codebook import (
    Codebook,
    LatentGrid,
    NeighborTable,
    TokenGrid,
    build_neighbor_table,
    dequantize,
    load_codebook,
    load_token_grid,
    quantize,
    save_codebook,
    save_token_grid,
)
from .dataset import Corpus, SyntheticSpec, generate, load_images, save_images
from .metrics import (
    FeatureExtractorSpec,
    FeatureStats,
    extract_features,
    fid_between,
    fit_stats,
    frechet_distance,
    load_features,
    matrix_sqrt_psd,
    save_features,
)
from .perturbation import (
    AnnealSchedule,
    PerturbationReport,
    PerturbationSpec,
    anneal_at,
    perturb_batch,
    perturb_grid,
    round_half_up,
)
from .pfid import PfidConfig, PfidReport, compute_pfid, compute_rfid, scale_delta
from .tokenizer import (
    ToyTokenizer,
    ToyTokenizerParams,
    TrainConfig,
    TrainReport,
    TrainingDiverged,
    decode,
    encode,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
    vq_losses,
)

__all__ = [
    "AnnealSchedule",
    "Codebook",
    "Corpus",
    "FeatureExtractorSpec",
    "FeatureStats",
    "LatentGrid",
    "NeighborTable",
    "PerturbationReport",
    "PerturbationSpec",
    "PfidConfig",
    "PfidReport",
    "SyntheticSpec",
    "TokenGrid",
    "ToyTokenizer",
    "ToyTokenizerParams",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "anneal_at",
    "build_neighbor_table",
    "compute_pfid",
    "compute_rfid",
    "decode",
    "dequantize",
    "encode",
    "extract_features",
    "fid_between",
    "fit_stats",
    "frechet_distance",
    "generate",
    "init_params",
    "load_checkpoint",
    "load_codebook",
    "load_features",
    "load_images",
    "load_token_grid",
    "matrix_sqrt_psd",
    "perturb_batch",
    "perturb_grid",
    "quantize",
    "round_half_up",
    "save_checkpoint",
    "save_codebook",
    "save_features",
    "save_images",
    "save_token_grid",
    "scale_delta",
    "train",
    "train_step",
    "vq_losses",
]
