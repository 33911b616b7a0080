"""Loss and metric unit values, gradients, and Fréchet closed forms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feat import autodiff as ad
from feat import embedders as emb
from feat import losses_metrics as lm
from feat.attention import AttentionMask
from feat.errors import ArgumentError, ConfigurationError
from feat.generator import ImageTensor, LatentWPlus


class FixedEmbedder(emb.JointEmbedder):
    """Returns preset unit vectors; for loss arithmetic only."""

    def __init__(self, image_vec, text_vec):
        self.embed_dim = len(image_vec)
        self.input_resolution = 4
        self._image = np.asarray(image_vec, dtype=np.float64)
        self._text = np.asarray(text_vec, dtype=np.float64)

    def embed_image_graph(self, image):
        return ad.Tensor.constant(self._image)

    def embed_text(self, text):
        return self._text


IMG = ImageTensor(np.zeros((3, 4, 4)))


class TestLossWeights:
    def test_paper_defaults(self):
        w = lm.LossWeights()
        assert w.lambda_att == 0.005
        assert w.lambda_tv == 0.00001
        assert w.lambda_l2 == 0.8

    def test_negative_rejected(self):
        with pytest.raises(ConfigurationError):
            lm.LossWeights(lambda_att=-0.1)

    def test_nonfinite_rejected(self):
        with pytest.raises(ConfigurationError):
            lm.LossWeights(lambda_tv=float("nan"))


class TestClipLoss:
    def test_identical_embeddings_zero(self):
        e = np.array([1.0, 0.0, 0.0])
        assert lm.clip_loss(IMG, "t", FixedEmbedder(e, e)) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_embeddings_one(self):
        assert lm.clip_loss(IMG, "t", FixedEmbedder([1.0, 0.0], [0.0, 1.0])) == pytest.approx(1.0, abs=1e-12)

    def test_antipodal_embeddings_two(self):
        assert lm.clip_loss(IMG, "t", FixedEmbedder([1.0, 0.0], [-1.0, 0.0])) == pytest.approx(2.0, abs=1e-12)

    def test_range_on_random_images(self):
        embedder = emb.ProjectionEmbedder(8, 32, seed=3)
        rng = np.random.default_rng(0)
        for _ in range(5):
            img = ImageTensor(rng.standard_normal((3, 32, 32)))
            v = lm.clip_loss(img, "whatever", embedder)
            assert 0.0 <= v <= 2.0

    def test_strictly_decreases_toward_target(self):
        # Walking the region colour straight toward the prompt's colour must
        # strictly shrink the cosine distance (geodesic monotonicity).
        target_color = np.array([0.9, -0.2, 0.4])
        vocab_embedder = emb.RegionStatEmbedder(8, 32, (0, 0, 16, 16), {}, seed=13)
        vocab = {"goal": vocab_embedder.target_for_color(target_color)}
        embedder = emb.RegionStatEmbedder(8, 32, (0, 0, 16, 16), vocab, seed=13)
        start_color = np.array([-0.5, 0.8, 0.1])
        losses = []
        for s in np.linspace(0.0, 1.0, 7):
            color = (1 - s) * start_color + s * target_color
            img = np.zeros((3, 32, 32))
            img[:, :16, :16] = color[:, None, None]
            losses.append(lm.clip_loss(ImageTensor(img), "goal", embedder))
        diffs = np.diff(losses)
        assert np.all(diffs < 0.0)
        assert losses[-1] == pytest.approx(0.0, abs=1e-12)


class TestAttLoss:
    def test_quarter_mask(self):
        assert lm.att_loss(np.array([[1.0, 0.0], [0.0, 0.0]])) == pytest.approx(0.25, abs=1e-12)

    def test_constant_mask(self):
        assert lm.att_loss(np.full((1, 4, 4), 0.37)) == pytest.approx(0.37, abs=1e-12)

    def test_all_ones(self):
        assert lm.att_loss(np.ones((1, 8, 8))) == pytest.approx(1.0, abs=0)

    def test_accepts_attention_mask(self):
        assert lm.att_loss(AttentionMask(np.full((1, 2, 2), 0.5))) == 0.5


class TestTvLoss:
    def test_constant_mask_zero(self):
        assert lm.tv_loss(np.full((3, 3), 0.7)) == 0.0

    def test_two_horizontal_jumps(self):
        assert lm.tv_loss(np.array([[0.0, 1.0], [0.0, 1.0]])) == pytest.approx(2.0, abs=1e-12)

    def test_checkerboard(self):
        assert lm.tv_loss(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(4.0, abs=1e-12)

    def test_squared_variant(self):
        mask = np.array([[0.0, 0.5], [0.0, 0.5]])
        assert lm.tv_loss(mask) == pytest.approx(1.0, abs=1e-12)
        assert lm.tv_loss(mask, squared=True) == pytest.approx(0.5, abs=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(ArgumentError):
            lm.tv_loss(np.ones((1, 1)))

    @pytest.mark.parametrize("squared", [False, True])
    def test_gradient_matches_finite_differences(self, squared):
        rng = np.random.default_rng(11)
        mask = rng.uniform(0.1, 0.9, size=(1, 5, 5))
        m = ad.Tensor.parameter(mask)
        lm.tv_loss_graph(m, squared=squared).backward()
        eps = 1e-6
        for _ in range(6):
            y, x = rng.integers(5), rng.integers(5)
            probe = mask.copy()
            probe[0, y, x] += eps
            hi = lm.tv_loss(probe, squared=squared)
            probe[0, y, x] -= 2 * eps
            lo = lm.tv_loss(probe, squared=squared)
            num = (hi - lo) / (2 * eps)
            got = m.grad[0, y, x]
            rel = abs(got - num) / max(1e-12, abs(got) + abs(num))
            assert rel < 1e-4

    def test_att_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        mask = rng.uniform(0.1, 0.9, size=(1, 4, 4))
        m = ad.Tensor.parameter(mask)
        lm.att_loss_graph(m).backward()
        np.testing.assert_allclose(m.grad, np.full((1, 4, 4), 1.0 / 16.0), atol=1e-15)


class TestLatentLoss:
    def test_equal_is_zero(self):
        wp = LatentWPlus(np.random.default_rng(1).standard_normal((8, 16)))
        assert lm.latent_loss(wp, wp) == 0.0

    def test_single_row_offset(self):
        rows = np.zeros((4, 8))
        edited = rows.copy()
        v = np.arange(8.0)
        alpha = 0.1
        edited[2] += alpha * v
        got = lm.latent_loss(LatentWPlus(rows), LatentWPlus(edited))
        assert got == pytest.approx(alpha * np.linalg.norm(v), rel=1e-12)

    def test_two_rows_345(self):
        rows = np.zeros((4, 2))
        edited = rows.copy()
        edited[0] = [3.0, 4.0]
        edited[3] = [3.0, 4.0]
        got = lm.latent_loss(LatentWPlus(rows), LatentWPlus(edited))
        assert got == pytest.approx(np.sqrt(50.0), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ArgumentError):
            lm.latent_loss(LatentWPlus(np.zeros((4, 8))), LatentWPlus(np.zeros((8, 4))))

    def test_gradient_safe_at_zero_offset(self):
        rows = np.random.default_rng(2).standard_normal((4, 8))
        edited = ad.Tensor.parameter(rows)
        lm.latent_loss_graph(ad.Tensor.constant(rows), edited).backward()
        np.testing.assert_array_equal(edited.grad, np.zeros((4, 8)))


class TestTotalLoss:
    def test_paper_weights_unit_parts(self):
        report = lm.total_loss((1.0, 1.0, 1.0, 1.0), lm.LossWeights())
        assert report.total == pytest.approx(1.80501, abs=1e-12)
        report.check(lm.LossWeights())

    def test_zero_weights_reduce_to_clip(self):
        report = lm.total_loss((0.42, 5.0, 5.0, 5.0), lm.LossWeights(0.0, 0.0, 0.0))
        assert report.total == 0.42

    def test_all_zero_parts(self):
        assert lm.total_loss((0.0, 0.0, 0.0, 0.0), lm.LossWeights()).total == 0.0

    def test_nonfinite_part_rejected(self):
        with pytest.raises(ArgumentError):
            lm.total_loss((float("inf"), 0.0, 0.0, 0.0), lm.LossWeights())

    def test_graph_total_matches_report(self):
        weights = lm.LossWeights()
        total_t, report = lm.total_loss_graph(
            ad.Tensor.constant(0.3), ad.Tensor.constant(0.6),
            ad.Tensor.constant(12.0), ad.Tensor.constant(0.05), weights,
        )
        assert float(total_t.data) == report.total
        report.check(weights)

    def test_check_rejects_tampered_total(self):
        report = lm.LossReport(clip=1.0, att=1.0, tv=1.0, l2=1.0, total=99.0)
        with pytest.raises(ArgumentError):
            report.check(lm.LossWeights())


class TestFrechet:
    def test_identical_gaussians_zero(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 4))
        cov = a.T @ a / 6
        mu = rng.standard_normal(4)
        assert lm.frechet_distance(mu, cov, mu, cov) == pytest.approx(0.0, abs=1e-8)

    def test_identity_covariances_mean_shift(self):
        mu1 = np.zeros(5)
        mu2 = np.zeros(5)
        mu2[0] = 2.0
        got = lm.frechet_distance(mu1, np.eye(5), mu2, np.eye(5))
        assert got == pytest.approx(4.0, abs=1e-8)

    def test_one_dimensional_closed_form(self):
        mu1, s1 = 0.3, 0.7
        mu2, s2 = -0.4, 1.9
        got = lm.frechet_distance([mu1], [[s1**2]], [mu2], [[s2**2]])
        want = (mu1 - mu2) ** 2 + (s1 - s2) ** 2
        assert got == pytest.approx(want, abs=1e-8)

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((10, 4))
        b = rng.standard_normal((12, 4))
        mu1, cov1 = lm.gaussian_stats(a)
        mu2, cov2 = lm.gaussian_stats(b)
        d12 = lm.frechet_distance(mu1, cov1, mu2, cov2)
        d21 = lm.frechet_distance(mu2, cov2, mu1, cov1)
        assert abs(d12 - d21) < 1e-8

    def test_nonsymmetric_covariance_rejected(self):
        cov = np.eye(3)
        bad = cov.copy()
        bad[0, 1] = 0.5
        with pytest.raises(ArgumentError):
            lm.frechet_distance(np.zeros(3), bad, np.zeros(3), cov)

    def test_rank_deficient_covariances_clamped(self):
        # Covariance of 2 samples in 4-D is rank-deficient; the square root
        # must survive and the distance stay non-negative.
        rng = np.random.default_rng(6)
        a = rng.standard_normal((2, 4))
        b = rng.standard_normal((2, 4))
        mu1, cov1 = lm.gaussian_stats(a)
        mu2, cov2 = lm.gaussian_stats(b)
        assert lm.frechet_distance(mu1, cov1, mu2, cov2) >= 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            lm.frechet_distance(np.zeros(3), np.eye(3), np.zeros(4), np.eye(4))


class TestIdentityMetrics:
    def test_identical_pairs(self):
        v = np.eye(4)[:3]
        cs, ed = lm.identity_metrics(v, v)
        assert cs == pytest.approx(1.0, abs=1e-12)
        assert ed == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pairs(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[0.0, 1.0], [1.0, 0.0]])
        cs, ed = lm.identity_metrics(a, b)
        assert cs == pytest.approx(0.0, abs=1e-12)
        assert ed == pytest.approx(np.sqrt(2.0), rel=1e-12)

    def test_antipodal_pairs(self):
        a = np.array([[1.0, 0.0]])
        cs, ed = lm.identity_metrics(a, -a)
        assert cs == pytest.approx(-1.0, abs=1e-12)
        assert ed == pytest.approx(2.0, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            lm.identity_metrics(np.zeros((3, 4)), np.zeros((2, 4)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1), st.integers(min_value=2, max_value=6))
    def test_ed_squared_consistency_on_unit_vectors(self, seed, dim):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((5, dim))
        b = rng.standard_normal((5, dim))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        b /= np.linalg.norm(b, axis=1, keepdims=True)
        for u, v in zip(a, b):
            cs, ed = lm.identity_metrics(u[None], v[None])
            assert abs(ed**2 - (2.0 - 2.0 * cs)) < 1e-9


class TestGaussianStats:
    def test_matches_numpy(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((40, 5))
        mu, cov = lm.gaussian_stats(x)
        np.testing.assert_allclose(mu, x.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(cov, np.cov(x, rowvar=False, bias=True), atol=1e-12)

    def test_single_sample(self):
        mu, cov = lm.gaussian_stats(np.ones((1, 3)))
        np.testing.assert_array_equal(mu, np.ones(3))
        np.testing.assert_array_equal(cov, np.zeros((3, 3)))
