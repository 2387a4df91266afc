"""Codebooks, GMMs, bag-of-words and Fisher-vector encodings."""

import numpy as np
import pytest

from subfuse.corpus import BUILTIN_FEATURES, FeatureSpec, FeatureTable
from subfuse.encode import (
    Codebook,
    DescriptorSet,
    GmmModel,
    avg_pool,
    encode_bow,
    encode_fv,
    fit_codebook,
    fit_gmm,
    load_codebook,
    load_descriptors,
    save_codebook,
    save_gmm,
    validate_dims,
    write_descriptors,
)
from subfuse.errors import ConfigError, DataValidationError
from subfuse.rng import generator


def two_clusters(seed=0, n=60, dim=3, spread=0.05):
    rng = generator(seed, "test-clusters")
    a = np.array([0.0, 0.0, 0.0]) + spread * rng.standard_normal((n, dim))
    b = np.array([5.0, 5.0, 5.0]) + spread * rng.standard_normal((n, dim))
    return DescriptorSet(dim, np.vstack([a, b])), a.mean(axis=0), b.mean(axis=0)


class TestFitCodebook:
    def test_recovers_separated_cluster_means(self):
        data, mean_a, mean_b = two_clusters()
        codebook = fit_codebook(data, k=2, seed=1)
        found = codebook.centroids[np.argsort(codebook.centroids[:, 0])]
        np.testing.assert_allclose(found[0], mean_a, atol=1e-6)
        np.testing.assert_allclose(found[1], mean_b, atol=1e-6)

    def test_k_one_gives_global_mean(self):
        data, _, _ = two_clusters()
        codebook = fit_codebook(data, k=1, seed=1)
        np.testing.assert_allclose(codebook.centroids[0], data.vectors.mean(axis=0), atol=1e-12)

    def test_same_seed_same_codebook(self):
        data, _, _ = two_clusters()
        a = fit_codebook(data, k=4, seed=9)
        b = fit_codebook(data, k=4, seed=9)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_needs_k_distinct_points(self):
        data = DescriptorSet(2, np.zeros((10, 2)))
        with pytest.raises(DataValidationError):
            fit_codebook(data, k=2, seed=0)

    def test_sse_non_increasing(self):
        rng = generator(7, "sse")
        data = DescriptorSet(4, rng.standard_normal((200, 4)))
        codebook = fit_codebook(data, k=5, seed=7)
        trace = np.array(codebook.sse_trace)
        assert (np.diff(trace) <= 1e-9).all()


class TestEncodeBow:
    def test_one_descriptor_at_centroid_is_one_hot(self):
        centroids = np.eye(4)
        codebook = Codebook(centroids=centroids)
        enc = encode_bow(DescriptorSet(4, centroids[2:3].copy()), codebook)
        np.testing.assert_array_equal(enc, [0, 0, 1, 0])

    def test_empty_set_encodes_to_zero(self):
        codebook = Codebook(centroids=np.eye(3))
        enc = encode_bow(DescriptorSet(3, np.empty((0, 3))), codebook)
        np.testing.assert_array_equal(enc, np.zeros(3))

    def test_motion_codebook_output_length(self):
        """A 4,000-word codebook yields 4,000-dim histograms."""
        rng = generator(0, "bigbook")
        codebook = Codebook(centroids=rng.standard_normal((4000, 8)))
        enc = encode_bow(DescriptorSet(8, rng.standard_normal((5, 8))), codebook)
        assert enc.shape == (4000,)
        assert enc.sum() == pytest.approx(1.0)

    def test_histogram_sums_to_one(self):
        rng = generator(1, "hist")
        codebook = Codebook(centroids=rng.standard_normal((6, 5)))
        enc = encode_bow(DescriptorSet(5, rng.standard_normal((40, 5))), codebook)
        assert enc.sum() == pytest.approx(1.0)
        assert (enc >= 0).all()

    def test_dim_mismatch(self):
        codebook = Codebook(centroids=np.eye(3))
        with pytest.raises(DataValidationError):
            encode_bow(DescriptorSet(2, np.zeros((1, 2))), codebook)


class TestFitGmm:
    def test_recovers_two_gaussians(self):
        """Means recovered within 3 standard errors of the truth."""
        rng = generator(3, "gmm-data")
        n = 400
        sigma = 0.4
        a = np.array([0.0, 0.0]) + sigma * rng.standard_normal((n, 2))
        b = np.array([4.0, 4.0]) + sigma * rng.standard_normal((n, 2))
        data = DescriptorSet(2, np.vstack([a, b]))
        gmm = fit_gmm(data, k=2, seed=3)
        order = np.argsort(gmm.means[:, 0])
        se = 3 * sigma / np.sqrt(n)
        assert np.abs(gmm.means[order[0]] - 0.0).max() < se
        assert np.abs(gmm.means[order[1]] - 4.0).max() < se

    def test_k_one_matches_sample_moments(self):
        rng = generator(4, "gmm-one")
        data = DescriptorSet(3, rng.standard_normal((300, 3)) * 2.0 + 1.0)
        gmm = fit_gmm(data, k=1, seed=4)
        np.testing.assert_allclose(gmm.means[0], data.vectors.mean(axis=0), atol=1e-8)
        np.testing.assert_allclose(gmm.variances[0], data.vectors.var(axis=0), atol=1e-8)

    def test_weights_sum_to_one(self):
        data, _, _ = two_clusters(seed=5)
        gmm = fit_gmm(data, k=3, seed=5)
        assert gmm.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_loglik_non_decreasing(self):
        rng = generator(6, "ll")
        data = DescriptorSet(3, rng.standard_normal((250, 3)))
        gmm = fit_gmm(data, k=4, seed=6)
        trace = np.array(gmm.loglik_trace)
        assert (np.diff(trace) >= -1e-9).all()

    def test_variance_floor_applied(self):
        # identical-coordinate descriptors in one dimension collapse variance
        rng = generator(8, "floor")
        vecs = rng.standard_normal((50, 2))
        vecs[:, 1] = 0.5
        vecs[0, 1] = 0.5000001  # keep >k distinct points without adding variance
        gmm = fit_gmm(DescriptorSet(2, vecs), k=2, seed=8)
        assert (gmm.variances >= 1e-4 * (1 - 1e-12)).all()


class TestEncodeFv:
    def make_gmm(self, k, dim, seed=0):
        rng = generator(seed, "fv-gmm")
        weights = rng.random(k) + 0.5
        weights /= weights.sum()
        return GmmModel(
            weights=weights,
            means=rng.standard_normal((k, dim)),
            variances=0.5 + rng.random((k, dim)),
        )

    def test_published_fv_dims(self):
        """2 * K * D for (D, K) = (39, 256) is the published 19,968."""
        gmm = self.make_gmm(256, 39)
        rng = generator(1, "fv-data")
        fv = encode_fv(DescriptorSet(39, rng.standard_normal((7, 39))), gmm)
        assert fv.shape == (19968,)

    def test_empty_set_is_zero_vector(self):
        gmm = self.make_gmm(2, 3)
        fv = encode_fv(DescriptorSet(3, np.empty((0, 3))), gmm)
        np.testing.assert_array_equal(fv, np.zeros(12))

    def test_descriptors_at_single_component_mean_zero_mean_block(self):
        """With one component and every descriptor at its mean, the mean
        gradients are exactly zero."""
        mean = np.array([1.5, -2.0, 0.25])
        gmm = GmmModel(
            weights=np.array([1.0]),
            means=mean[None, :],
            variances=np.array([[0.3, 0.4, 0.5]]),
        )
        data = DescriptorSet(3, np.tile(mean, (12, 1)))
        raw = encode_fv(data, gmm, normalize=False)
        np.testing.assert_array_equal(raw[:3], np.zeros(3))

    def test_unit_l2_norm(self):
        gmm = self.make_gmm(4, 5, seed=2)
        rng = generator(2, "fv-norm")
        fv = encode_fv(DescriptorSet(5, rng.standard_normal((30, 5))), gmm)
        assert np.linalg.norm(fv) == pytest.approx(1.0, abs=1e-12)

    def test_descriptor_order_irrelevant(self):
        gmm = self.make_gmm(3, 4, seed=3)
        rng = generator(3, "fv-perm")
        vecs = rng.standard_normal((25, 4))
        fv1 = encode_fv(DescriptorSet(4, vecs), gmm)
        fv2 = encode_fv(DescriptorSet(4, vecs[::-1].copy()), gmm)
        np.testing.assert_allclose(fv1, fv2, atol=1e-12)

    def test_fv_norm_shrinks_on_model_samples(self):
        """Descriptors drawn from the GMM itself push the unnormalized FV
        toward zero as the sample grows."""
        k, dim = 2, 3
        for seed in range(5):
            gmm = self.make_gmm(k, dim, seed=seed)
            rng = generator(seed, "fv-mc")

            def sample(n):
                comps = rng.choice(k, size=n, p=gmm.weights)
                return gmm.means[comps] + np.sqrt(gmm.variances[comps]) * rng.standard_normal((n, dim))

            small = encode_fv(DescriptorSet(dim, sample(100)), gmm, normalize=False)
            large = encode_fv(DescriptorSet(dim, sample(10_000)), gmm, normalize=False)
            assert np.linalg.norm(large) < np.linalg.norm(small)


class TestAvgPool:
    def frame_table(self, rows):
        spec = FeatureSpec("toy_f", "image", "frame", 2, "raw")
        keys = tuple((vid, i) for vid, i, _ in rows)
        values = np.array([vec for _, _, vec in rows], dtype=float)
        return FeatureTable(spec=spec, keys=keys, values=values)

    def test_single_frame_video_identity(self):
        table = self.frame_table([("v1", 0, [3.0, 4.0])])
        pooled = avg_pool(table)
        np.testing.assert_array_equal(pooled.vector("v1"), [3.0, 4.0])

    def test_two_frames_average(self):
        table = self.frame_table([("v1", 0, [1.0, 3.0]), ("v1", 1, [3.0, 1.0])])
        pooled = avg_pool(table)
        np.testing.assert_allclose(pooled.vector("v1"), [2.0, 2.0])

    def test_dim_preserved(self):
        """Frame-level pooling keeps the dimensionality (4,096 stays 4,096)."""
        spec = FeatureSpec("wide_f", "image", "frame", 4096, "raw")
        rng = generator(4, "pool")
        keys = tuple(("v1", i) for i in range(3))
        table = FeatureTable(spec=spec, keys=keys, values=rng.standard_normal((3, 4096)))
        pooled = avg_pool(table, BUILTIN_FEATURES["vnet_v"].__class__(
            name="wide_v", modality="image", level="video", dim=4096, encoding="avgpool"
        ))
        assert pooled.spec.dim == 4096
        np.testing.assert_allclose(pooled.vector("v1"), table.values.mean(axis=0))

    def test_commutes_with_scaling(self):
        rng = generator(5, "pool-scale")
        rows = [("v1", i, rng.standard_normal(2)) for i in range(4)]
        table = self.frame_table(rows)
        scaled = self.frame_table([(v, i, 3.0 * vec) for v, i, vec in rows])
        np.testing.assert_allclose(
            avg_pool(scaled).vector("v1"), 3.0 * avg_pool(table).vector("v1"), atol=1e-12
        )

    def test_video_level_table_rejected(self):
        spec = FeatureSpec("toy_v", "image", "video", 2, "raw")
        table = FeatureTable(spec=spec, keys=("v1",), values=np.zeros((1, 2)))
        with pytest.raises(ConfigError):
            avg_pool(table)


class TestValidateDims:
    def test_hog_fv_dims_check_out(self):
        validate_dims(BUILTIN_FEATURES["hog_fv"], k=256, descriptor_dim=96)

    def test_hof_fv_dims_check_out(self):
        validate_dims(BUILTIN_FEATURES["hof_fv"], k=256, descriptor_dim=108)

    def test_mfcc_bow_dims_check_out(self):
        validate_dims(BUILTIN_FEATURES["mfcc_b"], k=4096)

    def test_wrong_component_count_names_feature(self):
        with pytest.raises(DataValidationError, match="mbh_fv"):
            validate_dims(BUILTIN_FEATURES["mbh_fv"], k=128, descriptor_dim=192)


class TestPersistence:
    def test_codebook_round_trip(self, tmp_path):
        data, _, _ = two_clusters(seed=11)
        codebook = fit_codebook(data, k=3, seed=11)
        path = tmp_path / "codebook.tsv"
        save_codebook(codebook, path)
        loaded = load_codebook(path)
        assert isinstance(loaded, Codebook)
        np.testing.assert_array_equal(loaded.centroids, codebook.centroids)

    def test_gmm_round_trip(self, tmp_path):
        data, _, _ = two_clusters(seed=12)
        gmm = fit_gmm(data, k=2, seed=12)
        path = tmp_path / "gmm.tsv"
        save_gmm(gmm, path)
        loaded = load_codebook(path)
        assert isinstance(loaded, GmmModel)
        np.testing.assert_array_equal(loaded.means, gmm.means)
        np.testing.assert_array_equal(loaded.variances, gmm.variances)
        np.testing.assert_array_equal(loaded.weights, gmm.weights)

    def test_descriptor_file_round_trip(self, tmp_path):
        rng = generator(13, "desc-io")
        per_video = {
            "v1": DescriptorSet(3, rng.standard_normal((4, 3))),
            "v2": DescriptorSet(3, rng.standard_normal((2, 3))),
        }
        path = tmp_path / "descriptors.tsv"
        write_descriptors(per_video, 3, path)
        loaded = load_descriptors(path)
        assert set(loaded) == {"v1", "v2"}
        np.testing.assert_array_equal(loaded["v1"].vectors, per_video["v1"].vectors)
