import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from robustlat.metrics import (
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


def random_psd(gen, d):
    m = gen.normal(size=(d, d))
    return m @ m.T


def random_stats(gen, d):
    return FeatureStats(n=10, mean=gen.normal(size=d), cov=random_psd(gen, d))


def reference_fid(mean_a, cov_a, mean_b, cov_b):
    """Independent brute-force route: scipy sqrtm of the raw product."""
    cross = scipy.linalg.sqrtm(cov_a @ cov_b)
    fid = np.sum((mean_a - mean_b) ** 2) + np.trace(cov_a + cov_b - 2 * cross)
    return float(np.real(fid))


class TestFitStats:
    def test_two_point_hand_case(self):
        stats = fit_stats(np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert np.allclose(stats.mean, [1.0, 0.0])
        assert np.allclose(stats.cov, [[2.0, 0.0], [0.0, 0.0]])

    def test_degenerate_repeated_row(self):
        stats = fit_stats(np.tile([3.0, -1.0], (5, 1)))
        assert np.allclose(stats.cov, 0.0)

    def test_anticorrelated_hand_case(self):
        stats = fit_stats(np.array([[1.0, 1.0], [-1.0, -1.0]]))
        assert np.allclose(stats.mean, [0.0, 0.0])
        assert np.allclose(stats.cov, [[2.0, 2.0], [2.0, 2.0]])

    def test_rejects_single_row(self):
        with pytest.raises(ValueError, match="n >= 2"):
            fit_stats(np.array([[1.0, 2.0]]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 20), st.integers(2, 6))
    def test_matches_two_pass_textbook(self, seed, n, d):
        gen = np.random.default_rng(seed)
        x = gen.normal(size=(n, d))
        stats = fit_stats(x)
        mean = x.sum(axis=0) / n
        cov = np.zeros((d, d))
        for row in x:
            ctr = row - mean
            cov += np.outer(ctr, ctr)
        cov /= n - 1
        assert np.max(np.abs(stats.mean - mean)) < 1e-12
        assert np.max(np.abs(stats.cov - cov)) < 1e-12

    def test_stats_type_rejects_asymmetric_cov(self):
        with pytest.raises(ValueError, match="symmetric"):
            FeatureStats(n=3, mean=np.zeros(2), cov=np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestMatrixSqrt:
    def test_identity(self):
        assert np.allclose(matrix_sqrt_psd(np.eye(4)), np.eye(4))

    def test_diagonal(self):
        assert np.allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_two_by_two_eigendecomposition(self):
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        s = matrix_sqrt_psd(a)
        # eigenvalues 1 and 3 with +/- eigenvectors
        want = np.array(
            [[(np.sqrt(3) + 1) / 2, (np.sqrt(3) - 1) / 2],
             [(np.sqrt(3) - 1) / 2, (np.sqrt(3) + 1) / 2]]
        )
        assert np.allclose(s, want, atol=1e-12)
        assert np.allclose(s @ s, a, atol=1e-12)

    def test_residual_bound_on_random_psd(self):
        gen = np.random.default_rng(11)
        for _ in range(100):
            d = int(gen.integers(1, 65))
            a = random_psd(gen, d)
            s = matrix_sqrt_psd(a)
            assert np.allclose(s, s.T)
            resid = np.linalg.norm(s @ s - a)
            assert resid <= 1e-6 * max(1.0, np.linalg.norm(a))

    def test_rank_deficient_clamped(self):
        v = np.array([[1.0], [2.0]])
        a = v @ v.T  # rank 1
        s = matrix_sqrt_psd(a)
        assert np.allclose(s @ s, a, atol=1e-9)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            matrix_sqrt_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="NaN"):
            matrix_sqrt_psd(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestFrechetDistance:
    def test_one_dimensional_closed_form(self):
        a = FeatureStats(n=5, mean=np.array([0.0]), cov=np.array([[1.0]]))
        b = FeatureStats(n=5, mean=np.array([1.0]), cov=np.array([[4.0]]))
        # (mu1-mu2)^2 + (sigma1-sigma2)^2 = 1 + 1 = 2
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-9)

    def test_identical_stats_zero(self):
        gen = np.random.default_rng(1)
        s = random_stats(gen, 6)
        assert frechet_distance(s, s) <= 1e-9

    def test_diagonal_case_separates(self):
        a = FeatureStats(n=4, mean=np.array([0.0, 2.0]), cov=np.diag([1.0, 9.0]))
        b = FeatureStats(n=4, mean=np.array([1.0, 0.0]), cov=np.diag([4.0, 1.0]))
        want = (0 - 1) ** 2 + (1 - 2) ** 2 + (2 - 0) ** 2 + (3 - 1) ** 2
        assert frechet_distance(a, b) == pytest.approx(want, abs=1e-9)

    def test_symmetry_on_random_pairs(self):
        gen = np.random.default_rng(2)
        for _ in range(100):
            d = int(gen.integers(1, 65))
            a, b = random_stats(gen, d), random_stats(gen, d)
            ab = frechet_distance(a, b)
            ba = frechet_distance(b, a)
            assert abs(ab - ba) <= 1e-9 * max(1.0, ab)
            assert ab >= 0.0

    def test_dimension_mismatch_rejected(self):
        gen = np.random.default_rng(3)
        with pytest.raises(ValueError, match="dimensions"):
            frechet_distance(random_stats(gen, 3), random_stats(gen, 4))

    def test_matches_independent_scipy_route(self):
        gen = np.random.default_rng(4)
        for _ in range(20):
            d = int(gen.integers(2, 32))
            feats_a = gen.normal(size=(40, d))
            feats_b = gen.normal(size=(40, d)) + 0.3
            ours = frechet_distance(fit_stats(feats_a), fit_stats(feats_b))
            want = reference_fid(
                feats_a.mean(axis=0), np.cov(feats_a, rowvar=False),
                feats_b.mean(axis=0), np.cov(feats_b, rowvar=False),
            )
            assert ours == pytest.approx(want, rel=1e-4)


class TestExtractFeatures:
    def images(self, gen, n=6, side=32):
        return gen.random((n, side, side, 3))

    def spec(self, **kw):
        defaults = dict(kind="random_projection", out_dim=16, seed=5)
        defaults.update(kw)
        return FeatureExtractorSpec(**defaults)

    def test_identical_images_identical_rows(self):
        gen = np.random.default_rng(0)
        img = gen.random((32, 32, 3))
        feats = extract_features(np.stack([img, img]), self.spec())
        assert np.array_equal(feats[0], feats[1])

    def test_black_vs_white_distinct(self):
        black = np.zeros((1, 32, 32, 3))
        white = np.ones((1, 32, 32, 3))
        feats = extract_features(np.concatenate([black, white]), self.spec())
        assert not np.allclose(feats[0], feats[1])

    def test_deterministic_given_seed(self):
        gen = np.random.default_rng(1)
        imgs = self.images(gen)
        a = extract_features(imgs, self.spec())
        b = extract_features(imgs, self.spec())
        assert np.array_equal(a, b)
        c = extract_features(imgs, self.spec(seed=6))
        assert not np.allclose(a, c)

    def test_values_bounded_by_tanh(self):
        gen = np.random.default_rng(2)
        feats = extract_features(self.images(gen), self.spec())
        assert np.all(np.abs(feats) < 1.0)

    def test_small_images_supported(self):
        gen = np.random.default_rng(3)
        feats = extract_features(gen.random((4, 8, 8, 3)), self.spec())
        assert feats.shape == (4, 16)

    def test_external_passthrough(self, tmp_path):
        gen = np.random.default_rng(4)
        stored = gen.normal(size=(100, 64)).astype(np.float32)
        path = tmp_path / "features.rfea"
        save_features(stored, path)
        spec = FeatureExtractorSpec(
            kind="external_features", out_dim=64, source_path=str(path)
        )
        images = gen.random((100, 8, 8, 3))
        feats = extract_features(images, spec)
        assert np.array_equal(feats, stored.astype(np.float64))

    def test_external_row_count_mismatch(self, tmp_path):
        gen = np.random.default_rng(5)
        save_features(gen.normal(size=(3, 8)), tmp_path / "f.rfea")
        spec = FeatureExtractorSpec(
            kind="external_features", out_dim=8, source_path=str(tmp_path / "f.rfea")
        )
        with pytest.raises(ValueError, match="rows"):
            extract_features(gen.random((4, 8, 8, 3)), spec)

    def test_missing_external_file(self):
        spec = FeatureExtractorSpec(
            kind="external_features", out_dim=8, source_path="/nonexistent/f.rfea"
        )
        with pytest.raises(ValueError, match="cannot open"):
            extract_features(np.zeros((2, 8, 8, 3)), spec)


class TestFeatureFile:
    def test_round_trip_bit_exact(self, tmp_path):
        gen = np.random.default_rng(6)
        feats = gen.normal(size=(7, 5)).astype(np.float32)
        save_features(feats, tmp_path / "f.rfea")
        again = load_features(tmp_path / "f.rfea")
        assert np.array_equal(again, feats.astype(np.float64))
        raw = (tmp_path / "f.rfea").read_bytes()
        assert raw[:4] == b"RFEA"
        assert int.from_bytes(raw[8:12], "little") == 7
        assert int.from_bytes(raw[12:16], "little") == 5

    def test_bad_magic(self, tmp_path):
        (tmp_path / "f.rfea").write_bytes(b"WHAT" + b"\x00" * 12)
        with pytest.raises(ValueError, match="magic"):
            load_features(tmp_path / "f.rfea")


class TestFidBetween:
    def test_set_against_itself_is_zero(self):
        gen = np.random.default_rng(7)
        imgs = gen.random((8, 16, 16, 3))
        spec = FeatureExtractorSpec(kind="random_projection", out_dim=8, seed=1)
        assert fid_between(imgs, imgs, spec) <= 1e-6

    def test_disjoint_constant_sets_positive(self):
        dark = np.full((4, 16, 16, 3), 0.1)
        light = np.full((4, 16, 16, 3), 0.9)
        spec = FeatureExtractorSpec(kind="random_projection", out_dim=8, seed=2)
        assert fid_between(dark, light, spec) > 0.0

    def test_pipeline_deterministic(self):
        gen = np.random.default_rng(8)
        a, b = gen.random((6, 16, 16, 3)), gen.random((6, 16, 16, 3))
        spec = FeatureExtractorSpec(kind="random_projection", out_dim=12, seed=3)
        assert fid_between(a, b, spec) == fid_between(a, b, spec)
