import numpy as np
import pytest

from robustlat import tokenizer as tok
from robustlat.codebook import Codebook, LatentGrid, TokenGrid
from robustlat.perturbation import AnnealSchedule, PerturbationSpec, anneal_at
from robustlat.tokenizer import (
    ToyTokenizer,
    ToyTokenizerParams,
    TrainConfig,
    TrainingDiverged,
    TrainState,
    decode,
    encode,
    flatten_params,
    init_params,
    load_checkpoint,
    save_checkpoint,
    straight_through_loss,
    train,
    train_step,
    vq_losses,
)


def no_perturbation(total_steps=10):
    return AnnealSchedule(
        initial=PerturbationSpec(alpha=0.0, beta=0.0, delta=1, seed=0),
        final_scale=0.5, total_steps=total_steps, shape="constant",
    )


def tiny_params(seed=1, codebook_size=4):
    return init_params(
        patch=2, channels=1, latent_dim=2, hidden=3,
        codebook_size=codebook_size, seed=seed,
    )


def tiny_config(**kw):
    defaults = dict(
        steps=1, batch_size=2, learning_rate=0.1,
        perturbation=no_perturbation(), seed=5,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestEncode:
    def test_zero_image_zero_weights(self):
        p = tiny_params()
        zeros = {name: np.zeros_like(arr) for name, arr in p.weights()}
        zeros["codebook"] = p.codebook  # codebook must stay valid
        p = ToyTokenizerParams(
            patch=2, channels=1, latent_dim=2, hidden=3, **zeros
        )
        out = encode(np.zeros((2, 4, 1)), p)
        assert np.all(out.values == 0.0)

    def test_identical_patches_identical_cells(self):
        p = tiny_params()
        patch = np.arange(4.0).reshape(2, 2, 1) / 4.0
        image = np.tile(patch, (1, 3, 1))  # (2, 6, 1): three identical patches
        out = encode(image, p)
        assert np.array_equal(out.values[0, 0], out.values[0, 1])
        assert np.array_equal(out.values[0, 0], out.values[0, 2])

    def test_scalar_hand_computation(self):
        # 1x1 patch, every width 1: y = w2 * tanh(w1 * x + b1) + b2
        p = ToyTokenizerParams(
            patch=1, channels=1, latent_dim=1, hidden=1,
            enc_w1=np.array([[0.7]]), enc_b1=np.array([0.2]),
            enc_w2=np.array([[-1.3]]), enc_b2=np.array([0.4]),
            dec_w1=np.array([[1.0]]), dec_b1=np.array([0.0]),
            dec_w2=np.array([[1.0]]), dec_b2=np.array([0.0]),
            codebook=np.array([[0.0], [1.0]]),
        )
        x = 0.35
        out = encode(np.array([[[x]]]), p)
        w1 = float(np.float32(0.7)); b1 = float(np.float32(0.2))
        w2 = float(np.float32(-1.3)); b2 = float(np.float32(0.4))
        want = w2 * np.tanh(w1 * x + b1) + b2
        assert out.values[0, 0, 0] == pytest.approx(want, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        p = tiny_params()
        with pytest.raises(ValueError, match="divisible"):
            encode(np.zeros((3, 4, 1)), p)


class TestDecode:
    def test_decode_encode_shape_contract(self):
        p = tiny_params()
        image = np.random.default_rng(0).random((4, 6, 1))
        out = decode(encode(image, p), p)
        assert out.shape == image.shape
        assert np.all(np.isfinite(out))

    def test_constant_token_grid_tiles(self):
        p = tiny_params()
        tokens = TokenGrid(np.full((2, 3), 1, dtype=np.int64), K=p.K)
        out = decode(tokens, p)
        tiles = out.reshape(2, 2, 3, 2, 1)  # (H, p, W, p, c)
        first = tiles[0, :, 0]
        for h in range(2):
            for w in range(3):
                assert np.array_equal(tiles[h, :, w], first)

    def test_linear_decoder_matches_matrix_product(self):
        p = tiny_params(seed=3)
        latent = LatentGrid(np.random.default_rng(1).normal(size=(1, 2, 2)))
        out = decode(latent, p, activation=lambda x: x)
        w1 = p.dec_w1.astype(np.float64)
        w2 = p.dec_w2.astype(np.float64)
        b1 = p.dec_b1.astype(np.float64)
        b2 = p.dec_b2.astype(np.float64)
        for cell in range(2):
            z = latent.values[0, cell]
            want = w2 @ (w1 @ z + b1) + b2
            got = out[0:2, 2 * cell : 2 * cell + 2, 0].reshape(-1)
            assert np.allclose(got, want, atol=1e-12)

    def test_token_grid_k_mismatch(self):
        p = tiny_params()
        with pytest.raises(ValueError, match="K"):
            decode(TokenGrid(np.zeros((1, 1), dtype=np.int64), K=9), p)


class TestVqLosses:
    def test_exact_codeword_hits_zero(self):
        cb = Codebook(np.array([[0.0, 0.0], [1.0, 2.0]]))
        latent = LatentGrid(np.array([[[1.0, 2.0], [0.0, 0.0]]]))
        cb_loss, commit, tokens = vq_losses(latent, cb)
        assert cb_loss == 0.0 and commit == 0.0
        assert tokens.indices.tolist() == [[1, 0]]

    def test_one_dimensional_hand_value(self):
        cb = Codebook(np.array([[0.0], [10.0]]))
        latent = LatentGrid(np.array([[[0.5]]]))
        cb_loss, commit, _ = vq_losses(latent, cb)
        assert cb_loss == pytest.approx(0.25)
        assert commit == pytest.approx(0.25)

    def test_forward_values_equal(self):
        gen = np.random.default_rng(2)
        cb = Codebook(gen.normal(size=(6, 3)))
        latent = LatentGrid(gen.normal(size=(4, 5, 3)))
        cb_loss, commit, _ = vq_losses(latent, cb)
        assert cb_loss == commit

    def test_commitment_gradient_finite_difference(self):
        # d/dz mean_cells ||z - e||^2 = 2 (z - e) / cells at 1e-5 step
        gen = np.random.default_rng(3)
        cb = Codebook(gen.normal(size=(5, 2)))
        values = gen.normal(size=(2, 3, 2))
        _, _, tokens = vq_losses(LatentGrid(values), cb)
        e = cb.vectors[tokens.indices]
        cells = 6

        def commit_of(v):
            return float(np.mean(np.sum((v - e) ** 2, axis=-1)))

        analytic = 2.0 * (values - e) / cells
        h = 1e-5
        for idx in np.ndindex(values.shape):
            vp = values.copy(); vp[idx] += h
            vm = values.copy(); vm[idx] -= h
            fd = (commit_of(vp) - commit_of(vm)) / (2 * h)
            assert fd == pytest.approx(analytic[idx], abs=1e-7)


class TestTrainStep:
    def perturbing_config(self, **kw):
        sched = AnnealSchedule(
            initial=PerturbationSpec(alpha=0.5, beta=1.0, delta=2, seed=99),
            final_scale=0.5, total_steps=10,
        )
        defaults = dict(
            steps=1, batch_size=2, learning_rate=0.1, perturbation=sched,
            lambda_rec=1.3, lambda_vq=0.7, commitment_weight=0.25, seed=5,
        )
        defaults.update(kw)
        return TrainConfig(**defaults)

    def test_zero_objective_leaves_params_unchanged(self):
        p = tiny_params()
        batch = np.random.default_rng(1).random((2, 2, 4, 1))
        config = self.perturbing_config(lambda_rec=0.0, lambda_vq=0.0)
        p2, metrics = train_step(batch, p, config, 0)
        for name, arr in p.weights():
            assert np.array_equal(arr, getattr(p2, name)), name
        assert metrics.total_loss == 0.0

    def test_all_gradients_match_finite_differences(self):
        # 2-patch / K=4 / D=2 model, perturbed straight-through path included
        p = tiny_params(seed=11)
        batch = np.random.default_rng(3).random((2, 2, 4, 1))
        config = self.perturbing_config()
        live = anneal_at(config.perturbation, 0)
        cache, replaced, _ = tok._forward(batch, p, live, 0)
        assert replaced > 0  # the perturbed path must actually be exercised
        assert not np.array_equal(cache.tokens, cache.tokens_used)
        grads = tok._backward(cache, p, config)
        flat0 = flatten_params(p)
        analytic = np.concatenate([grads[n].ravel() for n in tok.WEIGHT_ORDER])
        h = 1e-5
        for i in range(len(flat0)):
            fp = flat0.copy(); fp[i] += h
            fm = flat0.copy(); fm[i] -= h
            fd = (
                straight_through_loss(fp, p, cache, config)
                - straight_through_loss(fm, p, cache, config)
            ) / (2 * h)
            tol = 1e-6 + 1e-4 * max(abs(fd), abs(analytic[i]))
            assert abs(fd - analytic[i]) <= tol, f"param {i}"

    def test_straight_through_value_is_exact_codeword(self):
        p = tiny_params(seed=2)
        batch = np.random.default_rng(4).random((2, 2, 4, 1))
        live = anneal_at(self.perturbing_config().perturbation, 0)
        cache, _, _ = tok._forward(batch, p, live, 0)
        want = p.codebook.astype(np.float64)[cache.tokens_used]
        assert np.array_equal(cache.z_used, want)

    def test_surrogate_value_equals_training_loss(self):
        p = tiny_params(seed=7)
        batch = np.random.default_rng(5).random((2, 2, 4, 1))
        config = self.perturbing_config()
        live = anneal_at(config.perturbation, 0)
        cache, _, _ = tok._forward(batch, p, live, 0)
        _, _, _, total = tok._losses(cache, p, config)
        assert straight_through_loss(flatten_params(p), p, cache, config) == pytest.approx(
            total, abs=1e-12
        )

    def test_beta_selects_exact_image_count(self):
        p = init_params(patch=2, channels=1, latent_dim=2, hidden=3,
                        codebook_size=8, seed=1)
        batch = np.random.default_rng(6).random((10, 2, 4, 1))
        sched = AnnealSchedule(
            initial=PerturbationSpec(alpha=1.0, beta=0.1, delta=2, seed=21),
            final_scale=0.5, total_steps=10,
        )
        config = tiny_config(batch_size=10, perturbation=sched)
        _, metrics = train_step(batch, p, config, 0)
        assert metrics.images_perturbed == 1
        assert metrics.tokens_replaced == 2  # alpha=1 on a 1x2 grid

    def test_nan_loss_aborts_with_diagnostics(self):
        p = tiny_params()
        batch = np.random.default_rng(7).random((2, 2, 4, 1))
        config = tiny_config(learning_rate=1e12, steps=40)
        with pytest.raises(TrainingDiverged, match="learning rate"):
            train(batch, p, config)

    def test_codebook_moves_only_through_pull_term(self):
        p = tiny_params(seed=9)
        batch = np.random.default_rng(8).random((2, 2, 4, 1))
        config = self.perturbing_config(lambda_vq=0.0)
        p2, _ = train_step(batch, p, config, 0)
        assert np.array_equal(p.codebook, p2.codebook)


class TestTrain:
    def test_zero_steps_returns_init(self):
        p = tiny_params()
        images = np.random.default_rng(1).random((4, 2, 4, 1))
        config = tiny_config(steps=0)
        p2, report = train(images, p, config)
        for name, arr in p.weights():
            assert np.array_equal(arr, getattr(p2, name))
        assert report.curve == []

    def test_overfit_shrinks_reconstruction_error(self):
        gen = np.random.default_rng(2)
        images = gen.random((8, 8, 8, 1))
        p = init_params(patch=2, channels=1, latent_dim=4, hidden=16,
                        codebook_size=16, seed=3)
        config = TrainConfig(
            steps=2000, batch_size=8, learning_rate=0.2,
            perturbation=no_perturbation(2000), seed=4, eval_every=100,
        )
        _, report = train(images, p, config)
        assert report.curve[-1][1] < 0.25 * report.curve[0][1]

    def test_trailing_loss_mean_decreases(self):
        gen = np.random.default_rng(12)
        images = gen.random((8, 8, 8, 1))
        for seed in (0, 1, 2):
            p = init_params(patch=2, channels=1, latent_dim=4, hidden=16,
                            codebook_size=16, seed=seed)
            config = TrainConfig(
                steps=800, batch_size=8, learning_rate=0.2,
                perturbation=no_perturbation(800), seed=seed, eval_every=1,
            )
            _, report = train(images, p, config)
            totals = [row[3] for row in report.curve]
            assert np.mean(totals[-100:]) < np.mean(totals[:100])

    def test_bit_identical_reports_across_runs(self):
        gen = np.random.default_rng(3)
        images = gen.random((6, 2, 4, 1))
        def run():
            p = tiny_params(seed=8, codebook_size=8)
            sched = AnnealSchedule(
                initial=PerturbationSpec(alpha=1.0, beta=0.5, delta=2, seed=31),
                final_scale=0.5, total_steps=30,
            )
            config = tiny_config(steps=30, batch_size=4, perturbation=sched)
            return train(images, p, config)
        p_a, rep_a = run()
        p_b, rep_b = run()
        for name, arr in p_a.weights():
            assert np.array_equal(arr, getattr(p_b, name))
        assert rep_a.to_json() == rep_b.to_json()

    def test_perturbation_count_plumbing(self):
        gen = np.random.default_rng(4)
        images = gen.random((12, 4, 4, 1))
        sched = AnnealSchedule(
            initial=PerturbationSpec(alpha=0.7, beta=0.4, delta=2, seed=77),
            final_scale=0.5, total_steps=50,
        )
        config = tiny_config(steps=50, batch_size=6, perturbation=sched)
        p = init_params(patch=2, channels=1, latent_dim=2, hidden=3,
                        codebook_size=6, seed=5)
        _, report = train(images, p, config)
        hw = 4  # (4/2) * (4/2) tokens per image
        expect = 0
        for step in range(50):
            live = anneal_at(sched, step)
            per_image = int(np.floor(live.alpha * hw + 0.5))
            expect += round(live.beta * 6) * per_image
        assert report.tokens_replaced_total == expect

    def test_resume_equals_uninterrupted(self):
        gen = np.random.default_rng(5)
        images = gen.random((6, 2, 4, 1))
        p0 = tiny_params(seed=13, codebook_size=8)
        sched = AnnealSchedule(
            initial=PerturbationSpec(alpha=1.0, beta=0.5, delta=2, seed=41),
            final_scale=0.5, total_steps=40,
        )
        full_cfg = tiny_config(steps=40, batch_size=4, perturbation=sched)
        p_full, rep_full = train(images, p0, full_cfg)

        half_cfg = tiny_config(steps=20, batch_size=4, perturbation=sched)
        state = TrainState()
        p_half, _ = train(images, p0, half_cfg, state=state)
        p_resumed, rep_resumed = train(images, p_half, full_cfg, state=state)
        for name, arr in p_full.weights():
            assert np.array_equal(arr, getattr(p_resumed, name)), name
        assert rep_full.to_json() == rep_resumed.to_json()

    def test_dead_codewords_reseeded_and_counted(self):
        gen = np.random.default_rng(6)
        images = np.tile(gen.random((1, 2, 4, 1)), (4, 1, 1, 1))  # one repeated image
        p = tiny_params(seed=14, codebook_size=16)
        config = tiny_config(
            steps=30, batch_size=4, dead_code_steps=10,
            perturbation=no_perturbation(30),
        )
        _, report = train(images, p, config)
        assert report.reseeded_codewords > 0

    def test_no_out_of_range_index_reaches_decode(self):
        gen = np.random.default_rng(7)
        images = gen.random((6, 2, 4, 1))
        p = tiny_params(seed=15, codebook_size=4)
        sched = AnnealSchedule(
            initial=PerturbationSpec(alpha=1.0, beta=1.0, delta=3, seed=51),
            final_scale=0.5, total_steps=25,
        )
        config = tiny_config(steps=25, batch_size=4, perturbation=sched)
        live = anneal_at(sched, 0)
        cache, _, _ = tok._forward(images, p, live, 0)
        assert cache.tokens_used.min() >= 0
        assert cache.tokens_used.max() < p.K


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = init_params(patch=3, channels=3, latent_dim=5, hidden=7,
                        codebook_size=9, seed=21)
        save_checkpoint(p, tmp_path / "model.rtck")
        q = load_checkpoint(tmp_path / "model.rtck")
        assert (q.patch, q.channels, q.latent_dim, q.hidden, q.K) == (3, 3, 5, 7, 9)
        for name, arr in p.weights():
            assert np.array_equal(arr, getattr(q, name))
        raw = (tmp_path / "model.rtck").read_bytes()
        assert raw[:4] == b"RTCK"

    def test_trained_params_survive_round_trip(self, tmp_path):
        images = np.random.default_rng(8).random((4, 2, 4, 1))
        p = tiny_params(seed=22)
        p2, _ = train(images, p, tiny_config(steps=10, batch_size=4))
        save_checkpoint(p2, tmp_path / "m.rtck")
        q = load_checkpoint(tmp_path / "m.rtck")
        for name, arr in p2.weights():
            assert np.array_equal(arr, getattr(q, name))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.rtck").write_bytes(b"JUNK" + b"\x00" * 40)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(tmp_path / "m.rtck")


class TestToyTokenizerInterface:
    def test_reconstruct_round_trip_shapes(self):
        images = np.random.default_rng(9).random((3, 4, 4, 1))
        p = tiny_params(seed=23)
        wrapper = ToyTokenizer(p)
        grids = wrapper.encode_tokens(images)
        assert len(grids) == 3
        assert all(g.K == p.K for g in grids)
        out = wrapper.decode_tokens(grids)
        assert out.shape == images.shape
        assert np.array_equal(wrapper.reconstruct(images), out)
