"""Patch VQ autoencoder with hand-derived gradients and plug-in perturbation.

The model splits an image into p x p patches, runs each through a two-layer
MLP encoder (affine, tanh, affine) to a D-dimensional latent, snaps the
latent to the nearest codeword, and decodes with a mirrored two-layer MLP.

Training semantics, which the finite-difference oracle in the tests pins
down exactly:

* the decoder receives the (possibly perturbed) codeword value itself, and
  the full gradient at the decoder input flows to the encoder output
  (straight-through);
* perturbation happens after quantization on a beta-fraction of the batch,
  so gradients reach the encoder through the perturbed value while the two
  quantization losses always use the unperturbed assignment;
* codebook rows learn only from the codeword-pull term
  mean ||sg(z) - e||^2; the encoder additionally feels the commitment term
  mean ||z - sg(e)||^2.

Parameters are stored float32 (so checkpoints round-trip bit-exactly) while
all arithmetic runs in float64.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import binio, rng
from .codebook import Codebook, LatentGrid, TokenGrid, build_neighbor_table
from .perturbation import AnnealSchedule, anneal_at, perturb_batch, round_half_up

CHECKPOINT_MAGIC = b"RTCK"

WEIGHT_ORDER = (
    "enc_w1", "enc_b1", "enc_w2", "enc_b2",
    "dec_w1", "dec_b1", "dec_w2", "dec_b2",
    "codebook",
)


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite (learning rate too high)."""


@dataclass(frozen=True)
class ToyTokenizerParams:
    patch: int
    channels: int
    latent_dim: int
    hidden: int
    enc_w1: np.ndarray  # (hidden, patch*patch*channels)
    enc_b1: np.ndarray  # (hidden,)
    enc_w2: np.ndarray  # (latent_dim, hidden)
    enc_b2: np.ndarray  # (latent_dim,)
    dec_w1: np.ndarray  # (hidden, latent_dim)
    dec_b1: np.ndarray  # (hidden,)
    dec_w2: np.ndarray  # (patch*patch*channels, hidden)
    dec_b2: np.ndarray  # (patch*patch*channels,)
    codebook: np.ndarray  # (K, latent_dim)

    def __post_init__(self):
        pd = self.patch * self.patch * self.channels
        shapes = {
            "enc_w1": (self.hidden, pd),
            "enc_b1": (self.hidden,),
            "enc_w2": (self.latent_dim, self.hidden),
            "enc_b2": (self.latent_dim,),
            "dec_w1": (self.hidden, self.latent_dim),
            "dec_b1": (self.hidden,),
            "dec_w2": (pd, self.hidden),
            "dec_b2": (pd,),
            "codebook": (self.codebook.shape[0], self.latent_dim),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        if self.codebook.shape[0] < 2:
            raise ValueError("codebook must have K >= 2 rows")

    @property
    def K(self) -> int:
        return self.codebook.shape[0]

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def weights(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in WEIGHT_ORDER]


def init_params(
    patch: int,
    channels: int,
    latent_dim: int,
    hidden: int,
    codebook_size: int,
    seed: int,
) -> ToyTokenizerParams:
    gen = rng.stream(seed, "init")
    pd = patch * patch * channels

    def affine(rows, cols):
        return (gen.standard_normal((rows, cols)) / np.sqrt(cols)).astype(np.float32)

    return ToyTokenizerParams(
        patch=patch,
        channels=channels,
        latent_dim=latent_dim,
        hidden=hidden,
        enc_w1=affine(hidden, pd),
        enc_b1=np.zeros(hidden, dtype=np.float32),
        enc_w2=affine(latent_dim, hidden),
        enc_b2=np.zeros(latent_dim, dtype=np.float32),
        dec_w1=affine(hidden, latent_dim),
        dec_b1=np.zeros(hidden, dtype=np.float32),
        dec_w2=affine(pd, hidden),
        dec_b2=np.zeros(pd, dtype=np.float32),
        codebook=gen.uniform(-0.5, 0.5, size=(codebook_size, latent_dim)).astype(np.float32),
    )


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, h, w, c) -> (B, H, W, patch*patch*c) with H = h/patch, W = w/patch."""
    b, h, w, c = images.shape
    if h % patch or w % patch:
        raise ValueError(f"image sides {h}x{w} not divisible by patch {patch}")
    hh, ww = h // patch, w // patch
    x = images.reshape(b, hh, patch, ww, patch, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, hh, ww, patch * patch * c)


def unpatchify(cells: np.ndarray, patch: int, channels: int) -> np.ndarray:
    b, hh, ww, _ = cells.shape
    x = cells.reshape(b, hh, ww, patch, patch, channels)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, hh * patch, ww * patch, channels)


def _encode_cells(cells: np.ndarray, params: ToyTokenizerParams, activation=np.tanh):
    h1 = cells @ params.enc_w1.T.astype(np.float64) + params.enc_b1.astype(np.float64)
    a1 = activation(h1)
    z = a1 @ params.enc_w2.T.astype(np.float64) + params.enc_b2.astype(np.float64)
    return z, a1, h1


def _decode_cells(z: np.ndarray, params: ToyTokenizerParams, activation=np.tanh):
    h2 = z @ params.dec_w1.T.astype(np.float64) + params.dec_b1.astype(np.float64)
    a2 = activation(h2)
    y = a2 @ params.dec_w2.T.astype(np.float64) + params.dec_b2.astype(np.float64)
    return y, a2, h2


def encode_batch(images: np.ndarray, params: ToyTokenizerParams, activation=np.tanh) -> np.ndarray:
    """(B, h, w, c) images -> (B, H, W, D) latents."""
    cells = patchify(np.asarray(images, dtype=np.float64), params.patch)
    z, _, _ = _encode_cells(cells, params, activation)
    return z


def encode(image: np.ndarray, params: ToyTokenizerParams, activation=np.tanh) -> LatentGrid:
    """Per-patch MLP encoding of one image."""
    z = encode_batch(np.asarray(image, dtype=np.float64)[None], params, activation)
    return LatentGrid(values=z[0])


def decode_batch(latents: np.ndarray, params: ToyTokenizerParams, activation=np.tanh) -> np.ndarray:
    """(B, H, W, D) latents -> (B, h, w, c) images."""
    y, _, _ = _decode_cells(np.asarray(latents, dtype=np.float64), params, activation)
    return unpatchify(y, params.patch, params.channels)


def decode(grid, params: ToyTokenizerParams, activation=np.tanh) -> np.ndarray:
    """Decode a LatentGrid, or a TokenGrid (dequantized internally)."""
    if isinstance(grid, TokenGrid):
        if grid.K != params.K:
            raise ValueError(f"token grid K={grid.K} does not match model K={params.K}")
        values = params.codebook.astype(np.float64)[grid.indices]
    elif isinstance(grid, LatentGrid):
        if grid.D != params.latent_dim:
            raise ValueError(
                f"latent dimension {grid.D} does not match model D={params.latent_dim}"
            )
        values = grid.values
    else:
        raise TypeError(f"decode expects a LatentGrid or TokenGrid, got {type(grid)}")
    return decode_batch(values[None], params, activation)[0]


def vq_losses(latent: LatentGrid, cb: Codebook) -> tuple[float, float, TokenGrid]:
    """Codeword-pull and commitment losses (equal in value) plus the tokens.

    Both are the mean over cells of the squared distance to the assigned
    codeword; they differ only in which side the gradient stops on.
    """
    from .codebook import quantize

    tokens = quantize(latent, cb)
    assigned = cb.vectors[tokens.indices]
    sq = float(np.mean(np.sum((latent.values - assigned) ** 2, axis=-1)))
    return sq, sq, tokens


@dataclass
class StepMetrics:
    step: int
    rec_loss: float
    codebook_loss: float
    commitment_loss: float
    total_loss: float
    tokens_replaced: int
    images_perturbed: int
    alpha: float
    delta: int
    usage: np.ndarray  # (K,) unperturbed assignment counts for this batch
    cell_latents: np.ndarray  # (B*HW, D), used for dead-code reseeding


@dataclass
class ForwardCache:
    cells: np.ndarray  # (B, HW, P)
    a1: np.ndarray
    z: np.ndarray  # encoder output
    tokens: np.ndarray  # (B, HW) unperturbed assignment
    tokens_used: np.ndarray  # (B, HW) after perturbation
    z_used: np.ndarray  # decoder input value = codebook[tokens_used]
    e_assigned: np.ndarray  # codebook[tokens] at the forward point
    a2: np.ndarray
    recon_cells: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int
    learning_rate: float
    perturbation: AnnealSchedule
    lambda_rec: float = 1.0
    lambda_vq: float = 1.0
    commitment_weight: float = 0.25
    seed: int = 0
    eval_every: int = 50
    dead_code_steps: int = 500

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size must be >= 1 and learning_rate > 0")
        if self.lambda_rec < 0 or self.lambda_vq < 0 or self.commitment_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.eval_every < 1 or self.dead_code_steps < 1:
            raise ValueError("eval_every and dead_code_steps must be >= 1")


def _forward(
    images: np.ndarray,
    params: ToyTokenizerParams,
    spec,
    step: int,
) -> tuple[ForwardCache, int, int]:
    from .codebook import nearest_indices

    cells = patchify(np.asarray(images, dtype=np.float64), params.patch)
    b, hh, ww, pd = cells.shape
    cells = cells.reshape(b, hh * ww, pd)
    z, a1, _ = _encode_cells(cells, params)
    cb64 = params.codebook.astype(np.float64)
    tokens = nearest_indices(z.reshape(-1, params.latent_dim), cb64).reshape(b, hh * ww)

    tokens_used = tokens
    replaced = 0
    perturbed = 0
    if spec is not None and spec.beta > 0 and spec.alpha > 0:
        nt = build_neighbor_table(Codebook(cb64), min(spec.delta, params.K - 1))
        grids = [TokenGrid(indices=t.reshape(hh, ww), K=params.K) for t in tokens]
        out, report = perturb_batch(grids, spec, nt, batch_index=step)
        tokens_used = np.stack([g.indices.reshape(-1) for g in out])
        replaced = report.tokens_replaced
        perturbed = report.images_perturbed

    z_used = cb64[tokens_used]
    y, a2, _ = _decode_cells(z_used, params)
    cache = ForwardCache(cells, a1, z, tokens, tokens_used, z_used, cb64[tokens], a2, y)
    return cache, replaced, perturbed


def _losses(cache: ForwardCache, params: ToyTokenizerParams, config: TrainConfig):
    cb64 = params.codebook.astype(np.float64)
    err = cache.recon_cells - cache.cells
    rec = float(np.mean(err**2))
    resid = cache.z - cb64[cache.tokens]
    vq = float(np.mean(np.sum(resid**2, axis=-1)))
    total = config.lambda_rec * rec + config.lambda_vq * (
        vq + config.commitment_weight * vq
    )
    return rec, vq, vq, total


def _backward(
    cache: ForwardCache, params: ToyTokenizerParams, config: TrainConfig
) -> dict[str, np.ndarray]:
    b, n, pd = cache.cells.shape
    cells_total = b * n
    cb64 = params.codebook.astype(np.float64)

    # reconstruction path
    dy = config.lambda_rec * 2.0 * (cache.recon_cells - cache.cells) / (cells_total * pd)
    grads = {}
    grads["dec_w2"] = np.einsum("bnp,bnh->ph", dy, cache.a2)
    grads["dec_b2"] = dy.sum(axis=(0, 1))
    da2 = dy @ params.dec_w2.astype(np.float64)
    dh2 = da2 * (1.0 - cache.a2**2)
    grads["dec_w1"] = np.einsum("bnh,bnd->hd", dh2, cache.z_used)
    grads["dec_b1"] = dh2.sum(axis=(0, 1))

    # straight-through: the decoder-input gradient lands on the encoder output
    dz = dh2 @ params.dec_w1.astype(np.float64)

    # commitment pulls the encoder toward its assigned codeword
    resid = cache.z - cb64[cache.tokens]
    dz = dz + config.lambda_vq * config.commitment_weight * 2.0 * resid / cells_total

    # codeword pull: scatter-add over unperturbed assignments
    dcb = np.zeros_like(cb64)
    contrib = config.lambda_vq * 2.0 * (-resid) / cells_total
    np.add.at(dcb, cache.tokens.reshape(-1), contrib.reshape(-1, params.latent_dim))
    grads["codebook"] = dcb

    # encoder backprop
    grads["enc_w2"] = np.einsum("bnd,bnh->dh", dz, cache.a1)
    grads["enc_b2"] = dz.sum(axis=(0, 1))
    da1 = dz @ params.enc_w2.astype(np.float64)
    dh1 = da1 * (1.0 - cache.a1**2)
    grads["enc_w1"] = np.einsum("bnh,bnp->hp", dh1, cache.cells)
    grads["enc_b1"] = dh1.sum(axis=(0, 1))
    return grads


def train_step(
    batch: np.ndarray,
    params: ToyTokenizerParams,
    config: TrainConfig,
    step: int,
) -> tuple[ToyTokenizerParams, StepMetrics]:
    """One SGD step over a batch; returns new params (inputs untouched)."""
    live = anneal_at(config.perturbation, step)
    cache, replaced, perturbed = _forward(batch, params, live, step)
    rec, cb_loss, commit, total = _losses(cache, params, config)
    if not np.isfinite(total):
        raise TrainingDiverged(
            f"non-finite loss at step {step} "
            f"(rec={rec:g}, vq={cb_loss:g}); the learning rate is likely too high"
        )
    grads = _backward(cache, params, config)
    lr = config.learning_rate
    updates = {
        name: (getattr(params, name).astype(np.float64) - lr * grads[name]).astype(np.float32)
        for name in grads
    }
    new_params = replace(params, **updates)
    usage = np.bincount(cache.tokens.reshape(-1), minlength=params.K)
    metrics = StepMetrics(
        step=step,
        rec_loss=rec,
        codebook_loss=cb_loss,
        commitment_loss=commit,
        total_loss=total,
        tokens_replaced=replaced,
        images_perturbed=perturbed,
        alpha=live.alpha,
        delta=live.delta,
        usage=usage,
        cell_latents=cache.z.reshape(-1, params.latent_dim),
    )
    return new_params, metrics


def split_flat(flat: np.ndarray, template: ToyTokenizerParams) -> dict[str, np.ndarray]:
    """View a flat float64 parameter vector as named weight arrays."""
    arrays = {}
    pos = 0
    for name, arr in template.weights():
        size = arr.size
        arrays[name] = flat[pos : pos + size].reshape(arr.shape)
        pos += size
    if pos != flat.size:
        raise ValueError("flat parameter vector has the wrong length")
    return arrays


def straight_through_loss(
    flat_params: np.ndarray,
    template: ToyTokenizerParams,
    frozen: ForwardCache,
    config: TrainConfig,
) -> float:
    """Loss surrogate whose true derivative equals the training gradient.

    Token assignments, perturbed tokens and the base-point values of z and
    the decoder input are frozen; everything a stop-gradient treats as
    constant stays at the values recorded in ``frozen``. Evaluation is pure
    float64 so central differences of this function are a precise oracle
    for `_backward`.
    """
    w = split_flat(np.asarray(flat_params, dtype=np.float64), template)
    cells = frozen.cells
    a1 = np.tanh(cells @ w["enc_w1"].T + w["enc_b1"])
    z = a1 @ w["enc_w2"].T + w["enc_b2"]
    dec_in = z + (frozen.z_used - frozen.z)  # value = codeword, gradient = dz
    a2 = np.tanh(dec_in @ w["dec_w1"].T + w["dec_b1"])
    y = a2 @ w["dec_w2"].T + w["dec_b2"]
    rec = float(np.mean((y - cells) ** 2))
    cb_term = float(
        np.mean(np.sum((frozen.z - w["codebook"][frozen.tokens]) ** 2, axis=-1))
    )
    commit_term = float(np.mean(np.sum((z - frozen.e_assigned) ** 2, axis=-1)))
    return config.lambda_rec * rec + config.lambda_vq * (
        cb_term + config.commitment_weight * commit_term
    )


def flatten_params(params: ToyTokenizerParams) -> np.ndarray:
    return np.concatenate([arr.astype(np.float64).ravel() for _, arr in params.weights()])


def unflatten_params(flat: np.ndarray, template: ToyTokenizerParams) -> ToyTokenizerParams:
    out = {}
    pos = 0
    for name, arr in template.weights():
        size = arr.size
        out[name] = flat[pos : pos + size].reshape(arr.shape).astype(np.float32)
        pos += size
    if pos != flat.size:
        raise ValueError("flat parameter vector has the wrong length")
    return replace(template, **out)


@dataclass
class TrainState:
    """Loop state that lives outside the weights; needed for exact resume."""

    step: int = 0
    last_used: np.ndarray | None = None  # (K,) step each codeword was last assigned
    usage_total: np.ndarray | None = None  # (K,) cumulative assignment counts
    tokens_replaced_total: int = 0
    images_perturbed_total: int = 0
    reseeded_codewords: int = 0
    curve: list = field(default_factory=list)  # rows [step, rec, vq, total]

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "last_used": self.last_used.tolist(),
            "usage_total": self.usage_total.tolist(),
            "tokens_replaced_total": self.tokens_replaced_total,
            "images_perturbed_total": self.images_perturbed_total,
            "reseeded_codewords": self.reseeded_codewords,
            "curve": self.curve,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainState":
        return cls(
            step=int(obj["step"]),
            last_used=np.asarray(obj["last_used"], dtype=np.int64),
            usage_total=np.asarray(obj["usage_total"], dtype=np.int64),
            tokens_replaced_total=int(obj["tokens_replaced_total"]),
            images_perturbed_total=int(obj["images_perturbed_total"]),
            reseeded_codewords=int(obj["reseeded_codewords"]),
            curve=[list(row) for row in obj["curve"]],
        )


@dataclass
class TrainReport:
    curve: list  # rows [step, rec_loss, vq_loss, total_loss]
    usage_counts: np.ndarray
    tokens_replaced_total: int
    images_perturbed_total: int
    reseeded_codewords: int
    steps: int
    wall_clock_s: float
    final_eval: dict | None = None

    def to_json(self) -> dict:
        """Deterministic form: wall-clock is reported separately."""
        return {
            "version": 1,
            "steps": self.steps,
            "curve": [
                {"step": int(s), "rec_loss": r, "vq_loss": v, "total_loss": t}
                for s, r, v, t in self.curve
            ],
            "usage_counts": [int(c) for c in self.usage_counts],
            "tokens_replaced_total": self.tokens_replaced_total,
            "images_perturbed_total": self.images_perturbed_total,
            "reseeded_codewords": self.reseeded_codewords,
            "final_eval": self.final_eval,
        }


def train(
    dataset: np.ndarray,
    params_init: ToyTokenizerParams,
    config: TrainConfig,
    *,
    state: TrainState | None = None,
    eval_hook=None,
) -> tuple[ToyTokenizerParams, TrainReport]:
    """Run the step loop with seeded shuffling and dead-code reseeding.

    ``state`` continues a previous run exactly: all PRNG streams are keyed by
    the absolute step, so (train to s, save, resume to S) equals an
    uninterrupted run to S bit for bit. ``eval_hook(params)`` may return a
    dict merged into the report (e.g. final rFID/pFID).
    """
    images = np.asarray(dataset, dtype=np.float64)
    n = len(images)
    if n == 0:
        raise ValueError("training dataset is empty")
    params = params_init
    st = state if state is not None else TrainState()
    if st.last_used is None:
        st.last_used = np.zeros(params.K, dtype=np.int64)
    if st.usage_total is None:
        st.usage_total = np.zeros(params.K, dtype=np.int64)

    t0 = time.perf_counter()
    for step in range(st.step, config.steps):
        picker = rng.stream(config.seed, "batch", step)
        if n >= config.batch_size:
            idx = picker.choice(n, size=config.batch_size, replace=False)
        else:
            idx = picker.integers(0, n, size=config.batch_size)
        params, m = train_step(images[idx], params, config, step)

        st.usage_total += m.usage
        st.last_used[m.usage > 0] = step
        st.tokens_replaced_total += m.tokens_replaced
        st.images_perturbed_total += m.images_perturbed

        stale = np.nonzero(step - st.last_used >= config.dead_code_steps)[0]
        if len(stale) > 0:
            reseeder = rng.stream(config.seed, "dead", step)
            source = m.cell_latents
            rows = reseeder.integers(0, len(source), size=len(stale))
            cb = params.codebook.copy()
            cb[stale] = source[rows].astype(np.float32)
            params = replace(params, codebook=cb)
            st.last_used[stale] = step
            st.reseeded_codewords += len(stale)

        if step % config.eval_every == 0 or step == config.steps - 1:
            st.curve.append([step, m.rec_loss, m.codebook_loss, m.total_loss])
        st.step = step + 1

    final_eval = eval_hook(params) if eval_hook is not None else None
    report = TrainReport(
        curve=list(st.curve),
        usage_counts=st.usage_total.copy(),
        tokens_replaced_total=st.tokens_replaced_total,
        images_perturbed_total=st.images_perturbed_total,
        reseeded_codewords=st.reseeded_codewords,
        steps=config.steps,
        wall_clock_s=time.perf_counter() - t0,
        final_eval=final_eval,
    )
    return params, report


class ToyTokenizer:
    """Reconstruction interface over trained parameters (used by the
    evaluation protocols): encode to tokens, decode from tokens."""

    def __init__(self, params: ToyTokenizerParams):
        self.params = params
        self._cb = Codebook(params.codebook.astype(np.float64))

    @property
    def codebook(self) -> Codebook:
        return self._cb

    def encode_tokens(self, images: np.ndarray) -> list[TokenGrid]:
        from .codebook import nearest_indices

        z = encode_batch(images, self.params)
        b, hh, ww, d = z.shape
        idx = nearest_indices(z.reshape(-1, d), self._cb.vectors).reshape(b, hh, ww)
        return [TokenGrid(indices=idx[i], K=self._cb.K) for i in range(b)]

    def decode_tokens(self, grids: list[TokenGrid]) -> np.ndarray:
        latents = np.stack([self._cb.vectors[g.indices] for g in grids])
        return decode_batch(latents, self.params)

    def reconstruct(self, images: np.ndarray) -> np.ndarray:
        return self.decode_tokens(self.encode_tokens(images))


def save_checkpoint(params: ToyTokenizerParams, path) -> None:
    """Write the checkpoint format: magic RTCK, version, hyperparameters
    (patch, channels, latent_dim, hidden, K), then every weight tensor in
    declared order as f32 little-endian."""
    with open(path, "wb") as f:
        binio.write_magic(f, CHECKPOINT_MAGIC)
        binio.write_u32(
            f,
            binio.FORMAT_VERSION,
            params.patch,
            params.channels,
            params.latent_dim,
            params.hidden,
            params.K,
        )
        for _, arr in params.weights():
            binio.write_f32(f, arr)


def load_checkpoint(path) -> ToyTokenizerParams:
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise ValueError(f"cannot open checkpoint {path}: {exc}") from exc
    with f:
        binio.read_magic(f, CHECKPOINT_MAGIC, "checkpoint file")
        version, patch, channels, latent_dim, hidden, k = binio.read_u32(
            f, 6, "checkpoint file"
        )
        binio.check_version(version, "checkpoint file")
        pd = patch * patch * channels
        shapes = [
            (hidden, pd), (hidden,), (latent_dim, hidden), (latent_dim,),
            (hidden, latent_dim), (hidden,), (pd, hidden), (pd,),
            (k, latent_dim),
        ]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            arrays.append(binio.read_f32(f, count, "checkpoint file").reshape(shape))
        binio.expect_eof(f, "checkpoint file")
    names = dict(zip(WEIGHT_ORDER, arrays))
    return ToyTokenizerParams(
        patch=patch, channels=channels, latent_dim=latent_dim, hidden=hidden, **names
    )
