"""Config-driven CLI: data generation, training, evaluation, ablations.

One JSON config describes an experiment end to end; a single root seed
determines every derived seed, so identical configs reproduce identical
output trees. Each command writes into a run directory named by the config
hash and records a manifest of content hashes. Wall-clock timings live only
in manifests and are excluded from the determinism digest.

Exit codes: 0 success, 2 config error, 3 input error, 4 numerical abort.
ROBUSTLAT_THREADS caps parallelism across ablation cells.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis, dataset, svg
from .codebook import Codebook, build_neighbor_table, save_codebook
from .metrics import FeatureExtractorSpec
from .perturbation import AnnealSchedule, PerturbationSpec
from .pfid import PfidConfig, compute_pfid, scale_delta
from .rng import derive_seed, stream
from .tokenizer import (
    ToyTokenizer,
    TrainConfig,
    TrainState,
    TrainingDiverged,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)

TOOL_VERSION = "0.1.0"


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


class InputError(RuntimeError):
    """Missing or corrupt input artifact (exit code 3)."""


_SEED = {"type": ["integer", "null"], "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "seed"],
    "properties": {
        "version": {"const": 1},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "side": {"type": "integer", "minimum": 4},
                "channels": {"const": 3},
                "num_classes": {"type": "integer", "minimum": 2},
                "per_class": {"type": "integer", "minimum": 1},
                "seed": _SEED,
                "noise": {"type": "number", "minimum": 0},
                "min_scale": {"type": "number"},
                "max_scale": {"type": "number"},
            },
        },
        "tokenizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "patch": {"type": "integer", "minimum": 1},
                "latent_dim": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 1},
                "codebook_size": {"type": "integer", "minimum": 2},
                "init_seed": _SEED,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "lambda_rec": {"type": "number", "minimum": 0},
                "lambda_vq": {"type": "number", "minimum": 0},
                "commitment_weight": {"type": "number", "minimum": 0},
                "eval_every": {"type": "integer", "minimum": 1},
                "dead_code_steps": {"type": "integer", "minimum": 1},
                "seed": _SEED,
                "final_eval": {"type": "boolean"},
                "perturbation": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "alpha": {"type": "number", "minimum": 0, "maximum": 1},
                        "beta": {"type": "number", "minimum": 0, "maximum": 1},
                        "delta": {"type": ["integer", "null"], "minimum": 1},
                        "seed": _SEED,
                        "final_scale": {"type": "number", "minimum": 0, "maximum": 1},
                        "alpha_final_scale": {
                            "type": ["number", "null"], "minimum": 0, "maximum": 1,
                        },
                        "delta_final_scale": {
                            "type": ["number", "null"], "minimum": 0, "maximum": 1,
                        },
                        "total_steps": {"type": ["integer", "null"], "minimum": 1},
                        "shape": {"enum": ["linear", "cosine", "constant"]},
                    },
                },
            },
        },
        "pfid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alphas": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                },
                "deltas": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "integer", "minimum": 1},
                },
                "k_ref": {"type": "integer", "minimum": 2},
                "eval_seed": _SEED,
                "sample_count": {"type": ["integer", "null"], "minimum": 2},
                "extractor": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["random_projection", "external_features"]},
                        "out_dim": {"type": "integer", "minimum": 2},
                        "seed": _SEED,
                        "source_path": {"type": ["string", "null"]},
                    },
                },
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "usage_thresholds": {
                    "type": "array", "items": {"type": "integer", "minimum": 1},
                },
                "elbow_ks": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "integer", "minimum": 1},
                },
                "kmeans_restarts": {"type": "integer", "minimum": 1},
                "elbow_sample": {"type": "integer", "minimum": 2},
                "lipschitz_samples": {"type": "integer", "minimum": 1},
                "lipschitz_alpha": {
                    "type": "number", "exclusiveMinimum": 0, "maximum": 1,
                },
                "lipschitz_delta": {"type": ["integer", "null"], "minimum": 1},
                "svg": {"type": "boolean"},
            },
        },
        "ablate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variants": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["name"],
                        "properties": {
                            "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                            "perturbation": {"type": "object"},
                        },
                    },
                },
                "seeds": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}

EVAL_REPORT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "rfid", "pfid", "per_setting", "config"],
    "properties": {
        "version": {"const": 1},
        "rfid": {"type": "number", "minimum": 0},
        "pfid": {"type": "number", "minimum": 0},
        "per_setting": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["alpha", "delta_nominal", "delta_scaled", "beta", "fid"],
                "properties": {
                    "alpha": {"type": "number"},
                    "delta_nominal": {"type": "integer"},
                    "delta_scaled": {"type": "integer"},
                    "beta": {"const": 1.0},
                    "fid": {"type": "number", "minimum": 0},
                },
            },
        },
        "config": {"type": "object"},
    },
}

TRAIN_REPORT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "steps", "curve", "usage_counts",
                 "tokens_replaced_total", "images_perturbed_total",
                 "reseeded_codewords"],
    "properties": {
        "version": {"const": 1},
        "steps": {"type": "integer", "minimum": 0},
        "curve": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["step", "rec_loss", "vq_loss", "total_loss"],
                "properties": {
                    "step": {"type": "integer", "minimum": 0},
                    "rec_loss": {"type": "number"},
                    "vq_loss": {"type": "number"},
                    "total_loss": {"type": "number"},
                },
            },
        },
        "usage_counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "tokens_replaced_total": {"type": "integer", "minimum": 0},
        "images_perturbed_total": {"type": "integer", "minimum": 0},
        "reseeded_codewords": {"type": "integer", "minimum": 0},
        "final_eval": {"type": ["object", "null"]},
    },
}

ANALYSIS_SUMMARY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "tokens_observed", "usage_gini", "threshold_survivors",
                 "duplicate_codewords", "lipschitz"],
    "properties": {
        "version": {"const": 1},
        "tokens_observed": {"type": "integer", "minimum": 0},
        "usage_gini": {"type": "number", "minimum": 0, "maximum": 1},
        "threshold_survivors": {
            "type": "object",
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
        "duplicate_codewords": {"type": "integer", "minimum": 0},
        "lipschitz": {
            "type": "object",
            "additionalProperties": False,
            "required": ["samples", "zero_delta_skipped", "max", "mean", "p95"],
            "properties": {
                "samples": {"type": "integer", "minimum": 1},
                "zero_delta_skipped": {"type": "integer", "minimum": 0},
                "max": {"type": "number", "minimum": 0},
                "mean": {"type": "number", "minimum": 0},
                "p95": {"type": "number", "minimum": 0},
            },
        },
    },
}

SCHEMAS = {
    "config": CONFIG_SCHEMA,
    "eval_report": EVAL_REPORT_SCHEMA,
    "train_report": TRAIN_REPORT_SCHEMA,
    "analysis_summary": ANALYSIS_SUMMARY_SCHEMA,
}

DEFAULT_ABLATE_VARIANTS = [
    {"name": "baseline", "perturbation": {"alpha": 0.0, "beta": 0.0, "shape": "constant"}},
    {"name": "lp_beta_0.1", "perturbation": {"beta": 0.1, "final_scale": 0.5}},
    {"name": "lp_beta_0.5", "perturbation": {"beta": 0.5, "final_scale": 0.5}},
    {"name": "anneal_to_zero", "perturbation": {"beta": 0.1, "final_scale": 0.0}},
]

DEFAULTS = {
    "output_dir": "runs",
    "dataset": {
        "side": 32, "channels": 3, "num_classes": 6, "per_class": 86,
        "seed": None, "noise": 0.04, "min_scale": 0.25, "max_scale": 0.45,
    },
    "tokenizer": {
        "patch": 4, "latent_dim": 8, "hidden": 48, "codebook_size": 256,
        "init_seed": None,
    },
    "train": {
        "steps": 600, "batch_size": 16, "learning_rate": 0.05,
        "lambda_rec": 1.0, "lambda_vq": 1.0, "commitment_weight": 0.25,
        "eval_every": 50, "dead_code_steps": 500, "seed": None,
        "final_eval": True,
        "perturbation": {
            "alpha": 1.0, "beta": 0.1, "delta": None, "seed": None,
            "final_scale": 0.5, "alpha_final_scale": None,
            "delta_final_scale": None, "total_steps": None, "shape": "linear",
        },
    },
    "pfid": {
        "alphas": [0.9, 0.8, 0.7, 0.6, 0.5],
        "deltas": [200, 280, 360],
        "k_ref": 16384,
        "eval_seed": None,
        "sample_count": 256,
        "extractor": {
            "kind": "random_projection", "out_dim": 64, "seed": None,
            "source_path": None,
        },
    },
    "analysis": {
        "usage_thresholds": [1, 5, 25],
        "elbow_ks": [2, 4, 8, 16, 32],
        "kmeans_restarts": 4,
        "elbow_sample": 4096,
        "lipschitz_samples": 64,
        "lipschitz_alpha": 0.5,
        "lipschitz_delta": None,
        "svg": False,
    },
    "ablate": {"variants": DEFAULT_ABLATE_VARIANTS, "seeds": [1, 2, 3]},
}


def _merge_defaults(defaults, given):
    if not isinstance(given, dict):
        return copy.deepcopy(given)
    out = {}
    for key, dval in defaults.items():
        if key in given and isinstance(dval, dict):
            out[key] = _merge_defaults(dval, given[key])
        elif key in given:
            out[key] = copy.deepcopy(given[key])
        else:
            out[key] = copy.deepcopy(dval)
    for key in given:
        if key not in defaults:
            out[key] = copy.deepcopy(given[key])
    return out


def resolve_config(raw: dict) -> dict:
    """Validate a raw config, fill defaults and derive all unset seeds."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config rejected: {exc.message} (at {list(exc.absolute_path)})") from exc
    cfg = _merge_defaults(DEFAULTS, raw)
    root = cfg["seed"]
    k = cfg["tokenizer"]["codebook_size"]
    k_ref = cfg["pfid"]["k_ref"]

    if cfg["dataset"]["seed"] is None:
        cfg["dataset"]["seed"] = derive_seed(root, "dataset")
    if cfg["tokenizer"]["init_seed"] is None:
        cfg["tokenizer"]["init_seed"] = derive_seed(root, "init")
    tr = cfg["train"]
    if tr["seed"] is None:
        tr["seed"] = derive_seed(root, "train")
    pert = tr["perturbation"]
    if pert["seed"] is None:
        pert["seed"] = derive_seed(root, "train-perturb")
    if pert["delta"] is None:
        pert["delta"] = scale_delta(100, k, k_ref)
    if pert["total_steps"] is None:
        pert["total_steps"] = max(1, tr["steps"])
    pf = cfg["pfid"]
    if pf["eval_seed"] is None:
        pf["eval_seed"] = derive_seed(root, "eval")
    if pf["extractor"]["seed"] is None:
        pf["extractor"]["seed"] = derive_seed(root, "extractor")
    an = cfg["analysis"]
    if an["lipschitz_delta"] is None:
        an["lipschitz_delta"] = scale_delta(280, k, k_ref)

    if cfg["dataset"]["side"] % cfg["tokenizer"]["patch"] != 0:
        raise ConfigError(
            f"dataset side {cfg['dataset']['side']} is not divisible by "
            f"tokenizer patch {cfg['tokenizer']['patch']}"
        )
    if pert["delta"] > k - 1:
        raise ConfigError(f"perturbation delta {pert['delta']} needs K > delta")
    ks = cfg["analysis"]["elbow_ks"]
    if ks != sorted(ks) or len(set(ks)) != len(ks):
        raise ConfigError(f"analysis elbow_ks must be strictly ascending, got {ks}")
    try:
        _dataset_spec(cfg)  # surfaces range errors early
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path, seed_override: int | None = None) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if seed_override is not None:
        raw["seed"] = seed_override
    return resolve_config(raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def run_dir_for(cfg: dict, out_base=None) -> Path:
    base = Path(out_base) if out_base is not None else Path(cfg["output_dir"])
    return base / config_hash(cfg)[:12]


def _dataset_spec(cfg) -> dataset.SyntheticSpec:
    d = cfg["dataset"]
    return dataset.SyntheticSpec(
        side=d["side"], channels=d["channels"], num_classes=d["num_classes"],
        per_class=d["per_class"], seed=d["seed"], noise=d["noise"],
        min_scale=d["min_scale"], max_scale=d["max_scale"],
    )


def _train_config(cfg) -> TrainConfig:
    tr = cfg["train"]
    p = tr["perturbation"]
    schedule = AnnealSchedule(
        initial=PerturbationSpec(
            alpha=p["alpha"], beta=p["beta"], delta=p["delta"], seed=p["seed"],
        ),
        final_scale=p["final_scale"],
        total_steps=p["total_steps"],
        shape=p["shape"],
        alpha_final_scale=p["alpha_final_scale"],
        delta_final_scale=p["delta_final_scale"],
    )
    return TrainConfig(
        steps=tr["steps"], batch_size=tr["batch_size"],
        learning_rate=tr["learning_rate"], perturbation=schedule,
        lambda_rec=tr["lambda_rec"], lambda_vq=tr["lambda_vq"],
        commitment_weight=tr["commitment_weight"], seed=tr["seed"],
        eval_every=tr["eval_every"], dead_code_steps=tr["dead_code_steps"],
    )


def _pfid_config(cfg) -> PfidConfig:
    pf = cfg["pfid"]
    ex = pf["extractor"]
    return PfidConfig(
        extractor=FeatureExtractorSpec(
            kind=ex["kind"], out_dim=ex["out_dim"], seed=ex["seed"],
            source_path=ex["source_path"],
        ),
        eval_seed=pf["eval_seed"],
        alphas=tuple(pf["alphas"]),
        deltas=tuple(pf["deltas"]),
        k_ref=pf["k_ref"],
        sample_count=pf["sample_count"],
    )


def _init_params(cfg):
    tk = cfg["tokenizer"]
    return init_params(
        patch=tk["patch"], channels=cfg["dataset"]["channels"],
        latent_dim=tk["latent_dim"], hidden=tk["hidden"],
        codebook_size=tk["codebook_size"], seed=tk["init_seed"],
    )


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def hash_tree(root: Path, rel_paths) -> dict:
    return {str(p): file_sha256(root / p) for p in sorted(str(q) for q in rel_paths)}


def write_manifest(
    run_dir: Path, command: str, cfg: dict,
    inputs: dict, outputs: dict, wall_clock_s: float,
) -> Path:
    manifest = {
        "tool_version": TOOL_VERSION,
        "command": command,
        "config_hash": config_hash(cfg),
        "seeds": {
            "root": cfg["seed"],
            "dataset": cfg["dataset"]["seed"],
            "tokenizer_init": cfg["tokenizer"]["init_seed"],
            "train": cfg["train"]["seed"],
            "train_perturbation": cfg["train"]["perturbation"]["seed"],
            "eval": cfg["pfid"]["eval_seed"],
            "extractor": cfg["pfid"]["extractor"]["seed"],
        },
        "inputs": inputs,
        "outputs": outputs,
        "wall_clock_s": wall_clock_s,
    }
    path = run_dir / f"{command}-manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def manifest_digest(manifest_path) -> str:
    """Hash of the deterministic portion of a manifest (timing excluded)."""
    with open(manifest_path) as f:
        manifest = json.load(f)
    manifest.pop("wall_clock_s", None)
    return hashlib.sha256(canonical_json(manifest).encode()).hexdigest()


def verify_manifest(run_dir, manifest_path) -> list[str]:
    """Re-hash every recorded file; returns mismatch descriptions."""
    with open(manifest_path) as f:
        manifest = json.load(f)
    run_dir = Path(run_dir)
    problems = []
    for section in ("inputs", "outputs"):
        for rel, digest in manifest.get(section, {}).items():
            path = run_dir / rel
            if not path.exists():
                problems.append(f"{rel}: missing")
            elif file_sha256(path) != digest:
                problems.append(f"{rel}: hash mismatch")
    return problems


def _corpus_paths(run_dir: Path) -> list[str]:
    corpus_dir = run_dir / "corpus"
    manifest = corpus_dir / dataset.MANIFEST_NAME
    with open(manifest) as f:
        entries = json.load(f)["images"]
    rels = [f"corpus/{e['file']}" for e in entries]
    rels.append(f"corpus/{dataset.MANIFEST_NAME}")
    return rels


def _load_corpus(run_dir: Path) -> dataset.Corpus:
    corpus_dir = run_dir / "corpus"
    if not (corpus_dir / dataset.MANIFEST_NAME).exists():
        raise InputError(
            f"no corpus at {corpus_dir}; run `robustlat gen-data` first"
        )
    try:
        return dataset.load_images(corpus_dir)
    except (FileNotFoundError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def _validated_json_dump(obj: dict, schema_name: str, path: Path) -> None:
    jsonschema.validate(obj, SCHEMAS[schema_name])
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_gen_data(cfg: dict, out_base=None) -> Path:
    """Generate the synthetic corpus and write it with a manifest."""
    t0 = time.perf_counter()
    run_dir = run_dir_for(cfg, out_base)
    run_dir.mkdir(parents=True, exist_ok=True)
    corpus = dataset.generate(_dataset_spec(cfg))
    dataset.save_images(corpus, run_dir / "corpus")
    outputs = hash_tree(run_dir, _corpus_paths(run_dir))
    write_manifest(run_dir, "gen-data", cfg, {}, outputs, time.perf_counter() - t0)
    return run_dir


def _final_eval_hook(cfg, corpus):
    pfid_cfg = _pfid_config(cfg)

    def hook(params):
        tok = ToyTokenizer(params)
        settings = pfid_cfg.settings(tok.codebook.K)
        nt = build_neighbor_table(tok.codebook, max(s[2] for s in settings))
        report = compute_pfid(tok, corpus.images, pfid_cfg, nt)
        return {"rfid": report.rfid, "pfid": report.pfid}

    return hook


def cmd_train(cfg: dict, out_base=None, resume: bool = False) -> Path:
    """Train the tokenizer; writes checkpoint, report JSON and loss CSV."""
    t0 = time.perf_counter()
    run_dir = run_dir_for(cfg, out_base)
    corpus = _load_corpus(run_dir)
    train_dir = run_dir / "train"
    train_dir.mkdir(parents=True, exist_ok=True)

    if resume:
        ck = train_dir / "checkpoint.rtck"
        st = train_dir / "state.json"
        if not (ck.exists() and st.exists()):
            raise InputError(f"cannot resume: missing {ck} or {st}")
        params0 = load_checkpoint(ck)
        with open(st) as f:
            state = TrainState.from_json(json.load(f))
    else:
        params0 = _init_params(cfg)
        state = TrainState()

    config = _train_config(cfg)
    hook = _final_eval_hook(cfg, corpus) if cfg["train"]["final_eval"] else None
    try:
        # train() advances `state` in place; it holds the final loop state after
        params, report = train(
            corpus.images, params0, config, state=state, eval_hook=hook
        )
    except TrainingDiverged as exc:
        with open(train_dir / "diagnostic.json", "w") as f:
            json.dump({"error": str(exc), "config_hash": config_hash(cfg)}, f, indent=2)
            f.write("\n")
        raise

    save_checkpoint(params, train_dir / "checkpoint.rtck")
    save_codebook(
        Codebook(params.codebook.astype(np.float64)), train_dir / "codebook.rtok"
    )
    with open(train_dir / "state.json", "w") as f:
        json.dump(state.to_json(), f, sort_keys=True)
        f.write("\n")
    _validated_json_dump(report.to_json(), "train_report", train_dir / "report.json")
    with open(train_dir / "loss.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "rec_loss", "vq_loss", "total_loss"])
        for s, rec, vq, total in report.curve:
            w.writerow([s, repr(rec), repr(vq), repr(total)])

    inputs = hash_tree(run_dir, _corpus_paths(run_dir))
    out_files = ["train/checkpoint.rtck", "train/codebook.rtok",
                 "train/report.json", "train/loss.csv", "train/state.json"]
    outputs = hash_tree(run_dir, out_files)
    write_manifest(run_dir, "train", cfg, inputs, outputs, time.perf_counter() - t0)
    return run_dir


def cmd_eval(cfg: dict, out_base=None, checkpoint=None) -> Path:
    """Compute rFID and the perturbation grid; writes JSON + CSV."""
    t0 = time.perf_counter()
    run_dir = run_dir_for(cfg, out_base)
    corpus = _load_corpus(run_dir)
    ck_path = Path(checkpoint) if checkpoint else run_dir / "train" / "checkpoint.rtck"
    if not ck_path.exists():
        raise InputError(f"missing checkpoint {ck_path}; run `robustlat train` first")
    try:
        tok = ToyTokenizer(load_checkpoint(ck_path))
    except ValueError as exc:
        raise InputError(str(exc)) from exc

    pfid_cfg = _pfid_config(cfg)
    settings = pfid_cfg.settings(tok.codebook.K)
    nt = build_neighbor_table(tok.codebook, max(s[2] for s in settings))
    report = compute_pfid(tok, corpus.images, pfid_cfg, nt)

    eval_dir = run_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    _validated_json_dump(report.to_json(), "eval_report", eval_dir / "report.json")
    report.write_csv(eval_dir / "per_setting.csv")

    inputs = hash_tree(run_dir, _corpus_paths(run_dir))
    if ck_path.is_relative_to(run_dir):
        inputs.update(hash_tree(run_dir, [ck_path.relative_to(run_dir)]))
    outputs = hash_tree(run_dir, ["eval/report.json", "eval/per_setting.csv"])
    write_manifest(run_dir, "eval", cfg, inputs, outputs, time.perf_counter() - t0)
    return run_dir


def cmd_analyze(cfg: dict, out_base=None, checkpoint=None) -> Path:
    """Usage histogram, Gini, elbow on encoder features, PCA, Lipschitz."""
    t0 = time.perf_counter()
    run_dir = run_dir_for(cfg, out_base)
    corpus = _load_corpus(run_dir)
    if len(corpus) == 0:
        raise InputError(f"corpus at {run_dir / 'corpus'} is empty")
    ck_path = Path(checkpoint) if checkpoint else run_dir / "train" / "checkpoint.rtck"
    if not ck_path.exists():
        raise InputError(f"missing checkpoint {ck_path}; run `robustlat train` first")
    try:
        params = load_checkpoint(ck_path)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    tok = ToyTokenizer(params)
    an = cfg["analysis"]
    pf = cfg["pfid"]
    images = corpus.images
    if pf["sample_count"] is not None:
        images = images[: pf["sample_count"]]

    # compute everything first so failures leave no partial files
    grids = tok.encode_tokens(images)
    usage = analysis.usage_histogram(grids, tok.codebook.K, an["usage_thresholds"])
    usage_gini = analysis.gini(usage.counts)

    from .tokenizer import encode_batch

    latents = encode_batch(images, params).reshape(-1, params.latent_dim)
    if len(latents) > an["elbow_sample"]:
        pick = stream(pf["eval_seed"], "elbow-sample").choice(
            len(latents), size=an["elbow_sample"], replace=False
        )
        latents = latents[np.sort(pick)]
    ks = [k for k in an["elbow_ks"] if k <= len(latents)]
    if not ks:
        raise InputError("elbow_ks are all larger than the available feature count")
    elbow = analysis.elbow_curve(
        latents, ks, restarts=an["kmeans_restarts"],
        seed=derive_seed(pf["eval_seed"], "elbow"),
    )

    coords = analysis.project_2d(tok.codebook)
    lip_spec = PerturbationSpec(
        alpha=an["lipschitz_alpha"], beta=1.0,
        delta=min(an["lipschitz_delta"], tok.codebook.K - 1),
        seed=derive_seed(pf["eval_seed"], "lipschitz"),
    )
    nt = build_neighbor_table(tok.codebook, lip_spec.delta)
    lip = analysis.empirical_lipschitz(
        params, nt, lip_spec, images, an["lipschitz_samples"]
    )

    out_dir = run_dir / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)
    usage.write_csv(out_dir / "usage.csv")
    elbow.write_csv(out_dir / "elbow.csv")
    analysis.write_projection_csv(out_dir / "projection.csv", coords, usage.counts)
    with open(out_dir / "lipschitz.json", "w") as f:
        json.dump(lip.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    summary = {
        "version": 1,
        "tokens_observed": usage.total,
        "usage_gini": usage_gini,
        "threshold_survivors": {
            str(t): int(len(v)) for t, v in usage.truncations.items()
        },
        "duplicate_codewords": tok.codebook.duplicate_count(),
        "lipschitz": {
            "samples": lip.samples,
            "zero_delta_skipped": lip.zero_delta_skipped,
            "max": lip.max,
            "mean": lip.mean,
            "p95": lip.p95,
        },
    }
    _validated_json_dump(summary, "analysis_summary", out_dir / "summary.json")
    out_files = ["analysis/usage.csv", "analysis/elbow.csv",
                 "analysis/projection.csv", "analysis/lipschitz.json",
                 "analysis/summary.json"]
    if an["svg"]:
        svg.line_plot(
            out_dir / "elbow.svg",
            [r[0] for r in elbow.rows], [r[1] for r in elbow.rows],
            title="k-means elbow", xlabel="k", ylabel="SSE",
        )
        svg.scatter_plot(
            out_dir / "projection.svg",
            coords[:, 0], coords[:, 1], values=usage.counts,
            title="codebook projection", xlabel="pc1", ylabel="pc2",
        )
        out_files += ["analysis/elbow.svg", "analysis/projection.svg"]

    inputs = hash_tree(run_dir, _corpus_paths(run_dir))
    if ck_path.is_relative_to(run_dir):
        inputs.update(hash_tree(run_dir, [ck_path.relative_to(run_dir)]))
    outputs = hash_tree(run_dir, out_files)
    write_manifest(run_dir, "analyze", cfg, inputs, outputs, time.perf_counter() - t0)
    return run_dir


def ablate_cell_config(cfg: dict, variant: dict, seed_label: int) -> dict:
    """The exact config one ablation cell trains and evaluates under.

    Derived from the resolved base config with the variant's perturbation
    overrides applied and per-cell train seeds; running `train` + `eval`
    with this config reproduces the cell bit for bit.
    """
    cell = copy.deepcopy(cfg)
    root = cfg["seed"]
    name = variant["name"]
    cell["train"]["seed"] = derive_seed(root, "ablate", name, seed_label)
    cell["train"]["perturbation"]["seed"] = derive_seed(
        root, "ablate-perturb", name, seed_label
    )
    cell["train"]["perturbation"].update(variant.get("perturbation", {}))
    cell["train"]["final_eval"] = False
    return resolve_config(cell)


def _run_cell(cfg, run_dir, corpus, variant, seed_label):
    cell_cfg = ablate_cell_config(cfg, variant, seed_label)
    cell_dir = run_dir / "ablate" / variant["name"] / f"seed_{seed_label}"
    cell_dir.mkdir(parents=True, exist_ok=True)
    params0 = _init_params(cell_cfg)
    config = _train_config(cell_cfg)
    params, report = train(corpus.images, params0, config)
    save_checkpoint(params, cell_dir / "checkpoint.rtck")

    tok = ToyTokenizer(params)
    pfid_cfg = _pfid_config(cell_cfg)
    settings = pfid_cfg.settings(tok.codebook.K)
    nt = build_neighbor_table(tok.codebook, max(s[2] for s in settings))
    eval_report = compute_pfid(tok, corpus.images, pfid_cfg, nt)
    _validated_json_dump(eval_report.to_json(), "eval_report", cell_dir / "eval.json")

    images = corpus.images
    if pfid_cfg.sample_count is not None:
        images = images[: pfid_cfg.sample_count]
    usage = analysis.usage_histogram(tok.encode_tokens(images), tok.codebook.K)
    return {
        "variant": variant["name"],
        "seed": seed_label,
        "rfid": eval_report.rfid,
        "pfid": eval_report.pfid,
        "usage_gini": analysis.gini(usage.counts),
        "error": "",
        "files": [
            str(Path("ablate") / variant["name"] / f"seed_{seed_label}" / n)
            for n in ("checkpoint.rtck", "eval.json")
        ],
    }


def cmd_ablate(cfg: dict, out_base=None) -> Path:
    """Train and evaluate the variant x seed grid; record-and-continue."""
    t0 = time.perf_counter()
    run_dir = run_dir_for(cfg, out_base)
    corpus = _load_corpus(run_dir)
    variants = cfg["ablate"]["variants"]
    seeds = cfg["ablate"]["seeds"]
    cells = [(v, s) for v in variants for s in seeds]

    threads = int(os.environ.get("ROBUSTLAT_THREADS", "1"))
    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_cell_guard, cfg, run_dir, corpus, v, s) for v, s in cells
            ]
            results = [f.result() for f in futures]
    else:
        results = [_cell_guard(cfg, run_dir, corpus, v, s) for v, s in cells]

    ablate_dir = run_dir / "ablate"
    ablate_dir.mkdir(parents=True, exist_ok=True)
    with open(ablate_dir / "cells.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "seed", "rfid", "pfid", "usage_gini", "error"])
        for r in results:
            w.writerow([
                r["variant"], r["seed"],
                "" if r["error"] else repr(r["rfid"]),
                "" if r["error"] else repr(r["pfid"]),
                "" if r["error"] else repr(r["usage_gini"]),
                r["error"],
            ])
    with open(ablate_dir / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "cells_ok", "mean_rfid", "mean_pfid", "mean_usage_gini"])
        for v in variants:
            ok = [r for r in results if r["variant"] == v["name"] and not r["error"]]
            if ok:
                w.writerow([
                    v["name"], len(ok),
                    repr(float(np.mean([r["rfid"] for r in ok]))),
                    repr(float(np.mean([r["pfid"] for r in ok]))),
                    repr(float(np.mean([r["usage_gini"] for r in ok]))),
                ])
            else:
                w.writerow([v["name"], 0, "", "", ""])

    out_files = ["ablate/cells.csv", "ablate/summary.csv"]
    for r in results:
        out_files.extend(r.get("files", []))
    inputs = hash_tree(run_dir, _corpus_paths(run_dir))
    outputs = hash_tree(run_dir, out_files)
    write_manifest(run_dir, "ablate", cfg, inputs, outputs, time.perf_counter() - t0)
    return run_dir


def _cell_guard(cfg, run_dir, corpus, variant, seed_label):
    try:
        return _run_cell(cfg, run_dir, corpus, variant, seed_label)
    except Exception as exc:  # record-and-continue: one bad cell must not kill the grid
        return {
            "variant": variant["name"], "seed": seed_label,
            "rfid": float("nan"), "pfid": float("nan"), "usage_gini": float("nan"),
            "error": f"{type(exc).__name__}: {exc}", "files": [],
        }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="robustlat",
        description="Discrete-latent robustness toolkit (tokenizer training, "
        "perturbation metrics, ablations).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen-data", "generate the synthetic corpus"),
        ("train", "train the tokenizer on the corpus"),
        ("eval", "compute rFID and the perturbed-FID grid"),
        ("ablate", "train and evaluate the variant grid"),
        ("analyze", "export usage/elbow/projection/Lipschitz diagnostics"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", default=None, help="output base directory")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")
        if name in ("eval", "analyze"):
            p.add_argument("--checkpoint", default=None, help="checkpoint path")
        if name == "train":
            p.add_argument(
                "--resume", action="store_true",
                help="continue from the run's saved checkpoint and state",
            )

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        if args.command == "gen-data":
            run_dir = cmd_gen_data(cfg, args.out)
        elif args.command == "train":
            run_dir = cmd_train(cfg, args.out, resume=args.resume)
        elif args.command == "eval":
            run_dir = cmd_eval(cfg, args.out, checkpoint=args.checkpoint)
        elif args.command == "ablate":
            run_dir = cmd_ablate(cfg, args.out)
        else:
            run_dir = cmd_analyze(cfg, args.out, checkpoint=args.checkpoint)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except TrainingDiverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 4
    print(f"{args.command}: outputs in {run_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
