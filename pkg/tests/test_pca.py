import numpy as np
import pytest

from drumbench import pca
from drumbench.pca import PcaFitError


def subspace_frames(n=500, d=32, rank=16, seed=0, mean_scale=2.0):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, rank)))
    coeffs = rng.standard_normal((n, rank)) * np.linspace(3.0, 0.5, rank)
    return coeffs @ basis.T + mean_scale * rng.standard_normal(d), basis


class TestFit:
    def test_line_fully_explained_by_one_component(self):
        t = np.linspace(-1, 1, 100)[:, None]
        frames = t * np.array([1.0, 2.0, -0.5]) + np.array([4.0, 0.0, 1.0])
        basis = pca.fit(frames, 1)
        assert basis.explained_variance == pytest.approx(1.0)

    def test_rank16_subspace_k16(self):
        frames, _ = subspace_frames()
        basis = pca.fit(frames, 16)
        assert basis.explained_variance >= 1 - 1e-6

    def test_orthonormal_directions(self):
        frames, _ = subspace_frames(seed=1)
        basis = pca.fit(frames, 8)
        np.testing.assert_allclose(
            basis.directions.T @ basis.directions, np.eye(8), atol=1e-5
        )

    def test_singular_values_nonincreasing(self):
        frames, _ = subspace_frames(seed=2)
        basis = pca.fit(frames, 10)
        assert np.all(np.diff(basis.singular_values) <= 1e-9)

    def test_degenerate_identical_frames_error(self):
        frames = np.ones((50, 8)) * 3.0
        with pytest.raises(PcaFitError):
            pca.fit(frames, 2)

    def test_tiny_std_error(self):
        rng = np.random.default_rng(3)
        frames = rng.standard_normal((100, 4))
        frames[:, 3] = 1e-13 * rng.standard_normal(100)  # near-constant direction
        frames[:, :3] *= 10
        with pytest.raises(PcaFitError):
            pca.fit(frames, 4)

    def test_refit_identical(self):
        frames, _ = subspace_frames(seed=4)
        a = pca.fit(frames, 6)
        b = pca.fit(frames, 6)
        np.testing.assert_array_equal(a.directions, b.directions)
        np.testing.assert_array_equal(a.coeff_mean, b.coeff_mean)

    def test_sharding_does_not_change_fit(self):
        frames, _ = subspace_frames(seed=5)
        a = pca.fit(frames, 6, shard_size=64)
        b = pca.fit(frames, 6, shard_size=10_000)
        np.testing.assert_allclose(a.directions, b.directions, atol=1e-9)


class TestMaps:
    @pytest.fixture()
    def basis(self):
        frames, _ = subspace_frames(seed=6)
        return pca.fit(frames, 16)

    def test_mean_projects_to_zero(self, basis):
        np.testing.assert_allclose(pca.project(basis, basis.mean), 0.0, atol=1e-9)

    def test_unit_direction_projects_to_unit_vector(self, basis):
        y = basis.mean + basis.directions[:, 3]
        z = pca.project(basis, y)
        expected = np.zeros(16)
        expected[3] = 1.0
        np.testing.assert_allclose(z, expected, atol=1e-9)

    def test_in_subspace_round_trip(self, basis):
        rng = np.random.default_rng(7)
        z = rng.standard_normal((20, 16))
        y = pca.reconstruct(basis, z)
        np.testing.assert_allclose(pca.reconstruct(basis, pca.project(basis, y)), y, atol=1e-6)

    def test_projector_idempotent(self, basis):
        rng = np.random.default_rng(8)
        y = rng.standard_normal((10, len(basis.mean)))
        once = pca.reconstruct(basis, pca.project(basis, y))
        twice = pca.reconstruct(basis, pca.project(basis, once))
        np.testing.assert_allclose(once, twice, atol=1e-6)

    def test_standardize_inverse(self, basis):
        rng = np.random.default_rng(9)
        z = rng.standard_normal((30, 16)) * 5
        np.testing.assert_allclose(
            pca.destandardize(basis, pca.standardize(basis, z)), z, atol=1e-6
        )
        np.testing.assert_allclose(pca.standardize(basis, basis.coeff_mean), 0.0, atol=1e-12)

    def test_training_coeffs_standardized_moments(self):
        frames, _ = subspace_frames(seed=10)
        basis = pca.fit(frames, 16)
        z_norm = pca.standardize(basis, pca.project(basis, frames))
        assert np.abs(z_norm.mean(axis=0)).max() <= 1e-6
        np.testing.assert_allclose(z_norm.std(axis=0), 1.0, atol=1e-4)


class TestDiagnostics:
    def test_heldout_in_subspace_mse_tiny(self):
        frames, basis_mat = subspace_frames(n=800, seed=11)
        fitted = pca.fit(frames[:600], 16)
        report = pca.diagnostics(fitted, frames[600:])
        assert report["mse"] <= 1e-10 * report["frame_variance"]

    def test_k0_mse_is_distance_to_mean(self):
        rng = np.random.default_rng(12)
        frames = rng.standard_normal((200, 6))
        fitted = pca.fit(frames, 0)
        report = pca.diagnostics(fitted, frames)
        expected = float(np.mean((frames - fitted.mean) ** 2))
        assert report["mse"] == pytest.approx(expected)

    def test_explained_variance_matches_residual_recomputation(self):
        frames, _ = subspace_frames(n=600, d=24, rank=12, seed=13)
        fitted = pca.fit(frames, 8)
        recon = pca.reconstruct(fitted, pca.project(fitted, frames))
        resid_var = np.mean(np.sum((frames - recon) ** 2, axis=1))
        total_var = np.mean(np.sum((frames - frames.mean(axis=0)) ** 2, axis=1))
        assert fitted.explained_variance == pytest.approx(1 - resid_var / total_var, abs=1e-6)


def test_save_load_round_trip(tmp_path):
    frames, _ = subspace_frames(seed=14)
    basis = pca.fit(frames, 5)
    path = tmp_path / "basis.npz"
    pca.save_basis(path, basis)
    loaded = pca.load_basis(path)
    np.testing.assert_array_equal(loaded.directions, basis.directions)
    assert loaded.content_hash() == basis.content_hash()
    assert loaded.frame_count == basis.frame_count
