import math

import numpy as np
import pytest

from conftest import (GAP_NEAR, TRACE_VINV, V_REF, assert_laplacians_match,
                      assert_scores_match, fd_score, make_rbm_family)
from scoredetect import (Gaussian, GaussianMixture, Gbrbm, LangevinConfig,
                         ModelError, RngStream, ScoreMixture, fisher_gaussian,
                         fisher_mc, hutchinson_laplacian)


def random_spd(gen, d):
    a = gen.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


# ---------------------------------------------------------------------------
# Gaussian


def test_gaussian_closed_forms(inf_a):
    assert inf_a.hyvarinen(inf_a.mean) == pytest.approx(-TRACE_VINV, abs=1e-12)
    one_d = Gaussian([0.0], [[1.0]])
    assert one_d.hyvarinen([2.0]) == pytest.approx(1.0, abs=1e-12)
    assert one_d.score([2.0])[0] == pytest.approx(-2.0, abs=1e-15)
    assert one_d.laplacian([2.0]) == pytest.approx(-1.0, abs=1e-15)


def test_gaussian_log_density_matches_quadratic_form(inf_a):
    x = np.array([0.3, -1.1])
    y = x - inf_a.mean
    want = -0.5 * (y @ inf_a.cov_inv @ y
                   + math.log(np.linalg.det(V_REF))
                   + 2 * math.log(2 * math.pi))
    assert inf_a.log_density(x) == pytest.approx(want, rel=1e-12)


def test_gaussian_fd_agreement():
    gen = RngStream(401).generator()
    model = Gaussian(gen.standard_normal(3), random_spd(gen, 3))
    points = model.mean + gen.standard_normal((25, 3)) * 2.0
    assert_scores_match(model, model.log_density, points)
    assert_laplacians_match(model, model.log_density, points)


def test_gaussian_sampling_moments():
    gen = RngStream(402).generator()
    model = Gaussian([1.0, -2.0], V_REF)
    draws = model.sample(40000, gen)
    assert np.abs(draws.mean(axis=0) - model.mean).max() < 0.03
    assert np.abs(np.cov(draws.T) - V_REF).max() < 0.05


def test_gaussian_validation():
    with pytest.raises(ModelError, match="symmetric"):
        Gaussian([0.0, 0.0], [[1.0, 0.3], [0.2, 1.0]])
    with pytest.raises(ModelError, match="positive definite"):
        Gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ModelError):
        Gaussian([0.0, 0.0], np.eye(3))
    with pytest.raises(ModelError):
        Gaussian([np.nan, 0.0], np.eye(2))


def test_point_validation(inf_a):
    with pytest.raises(ModelError):
        inf_a.score([1.0, 2.0, 3.0])
    with pytest.raises(ModelError):
        inf_a.score([np.inf, 0.0])


def test_sampler_missing_error():
    class ScoreOnly(Gaussian):
        def sample(self, n, rng):
            return super(Gaussian, self).sample(n, rng)

    with pytest.raises(ModelError, match="no sampler"):
        ScoreOnly([0.0], [[1.0]]).sample(3, RngStream(0).generator())


# ---------------------------------------------------------------------------
# Gaussian mixture


@pytest.fixture(scope="module")
def gmm():
    gen = RngStream(403).generator()
    comps = [
        Gaussian([-2.0, 0.0], random_spd(gen, 2)),
        Gaussian([1.5, 1.0], random_spd(gen, 2)),
        Gaussian([0.0, -3.0], random_spd(gen, 2)),
    ]
    return GaussianMixture(comps, [0.5, 0.3, 0.2])


def test_gmm_fd_agreement(gmm):
    gen = RngStream(404).generator()
    points = gen.standard_normal((25, 2)) * 3.0
    assert_scores_match(gmm, gmm.log_density, points)
    assert_laplacians_match(gmm, gmm.log_density, points)


def test_gmm_responsibilities_on_simplex(gmm):
    gen = RngStream(405).generator()
    points = np.vstack([gen.standard_normal((50, 2)) * 5.0,
                        [[40.0, 40.0], [-40.0, 40.0], [0.0, -60.0]]])
    resp = gmm.responsibilities(points)
    assert resp.min() >= 0.0
    assert np.abs(resp.sum(axis=-1) - 1.0).max() < 1e-12


def test_gmm_tail_stability(gmm):
    far = np.array([[120.0, -90.0], [-500.0, 500.0]])
    assert np.isfinite(gmm.score(far)).all()
    assert np.isfinite(gmm.laplacian(far)).all()
    assert np.isfinite(gmm.log_density(far)).all()


def test_single_component_gmm_equals_gaussian(inf_a):
    mix = GaussianMixture([inf_a], [1.0])
    x = np.array([[0.4, -0.9], [2.0, 2.0]])
    assert np.allclose(mix.score(x), inf_a.score(x), atol=1e-12)
    assert np.allclose(mix.laplacian(x), inf_a.laplacian(x), atol=1e-12)
    assert np.allclose(mix.log_density(x), inf_a.log_density(x), atol=1e-12)


def test_gmm_sampling_mean(gmm):
    draws = gmm.sample(60000, RngStream(406).generator())
    want = sum(w * c.mean for w, c in zip([0.5, 0.3, 0.2], gmm.components))
    assert np.abs(draws.mean(axis=0) - want).max() < 0.05


def test_gmm_validation(inf_a, post_a):
    with pytest.raises(ModelError):
        GaussianMixture([inf_a, post_a], [0.7, 0.7])
    with pytest.raises(ModelError):
        GaussianMixture([inf_a, post_a], [1.5, -0.5])
    with pytest.raises(ModelError):
        GaussianMixture([], [])


# ---------------------------------------------------------------------------
# Gauss-Bernoulli RBM


@pytest.fixture(scope="module")
def rbm():
    basis_inf, _ = make_rbm_family(RngStream(407))
    return basis_inf[0]


def test_rbm_fd_agreement(rbm):
    gen = RngStream(408).generator()
    points = rbm.visible_bias + gen.standard_normal((25, rbm.dim)) * 2.0
    assert_scores_match(rbm, rbm.log_density, points)
    assert_laplacians_match(rbm, rbm.log_density, points)


def test_rbm_normalization_invariance(rbm):
    # score and laplacian come from the unnormalized density, so rescaling
    # it (adding a constant to the log) must not move them
    gen = RngStream(409).generator()
    x = gen.standard_normal(rbm.dim)
    shifted = lambda pt: rbm.log_density(pt) + 7.25  # noqa: E731
    got = rbm.score(x)
    assert np.abs(got - fd_score(shifted, x)).max() <= 1e-5 * max(
        1.0, float(np.linalg.norm(got))
    )


def test_rbm_zero_weight_closed_form():
    b = np.linspace(-1.0, 1.0, 10)
    model = Gbrbm(np.zeros((10, 4)), b, np.zeros(4))
    assert model.hyvarinen(b) == pytest.approx(-10.0, abs=1e-12)
    x = np.array([0.5] * 10)
    assert np.allclose(model.score(x), b - x, atol=1e-12)
    assert model.laplacian(x) == pytest.approx(-10.0, abs=1e-12)


def test_rbm_energy_matches_log_density(rbm):
    x = RngStream(410).generator().standard_normal((6, rbm.dim))
    assert np.allclose(rbm.log_density(x), -rbm.energy(x), atol=1e-12)


def test_rbm_validation():
    with pytest.raises(ModelError):
        Gbrbm(np.zeros((3, 2)), np.zeros(4), np.zeros(2))
    with pytest.raises(ModelError):
        Gbrbm(np.full((3, 2), np.nan), np.zeros(3), np.zeros(2))


# ---------------------------------------------------------------------------
# score mixtures


def test_constant_mixture_exact_laplacian(inf_a, inf_b):
    mix = ScoreMixture([inf_a, inf_b], [0.25, 0.75])
    assert mix.has_exact_laplacian
    x = np.array([0.1, 0.2])
    want_score = 0.25 * inf_a.score(x) + 0.75 * inf_b.score(x)
    assert np.allclose(mix.score(x), want_score, atol=1e-12)
    assert mix.laplacian(x) == pytest.approx(-TRACE_VINV, abs=1e-12)


def test_constant_mixture_is_a_geometric_mixture_score(inf_a, inf_b):
    # constant weights correspond to the density prod p_i^beta_i, whose log
    # is the weighted sum, so the score must match its finite differences
    mix = ScoreMixture([inf_a, inf_b], [0.3, 0.7])
    logp = lambda x: 0.3 * inf_a.log_density(x) + 0.7 * inf_b.log_density(x)  # noqa: E731
    points = RngStream(411).generator().standard_normal((10, 2)) * 2.0
    assert_scores_match(mix, logp, points)
    assert_laplacians_match(mix, logp, points)


def test_rbm_mixture_laplacian_is_stochastic():
    basis_inf, _ = make_rbm_family(RngStream(412))
    mix = ScoreMixture(basis_inf, [0.5, 0.5], n_probes=10)
    assert not mix.has_exact_laplacian
    x = np.zeros(10)
    with pytest.raises(ModelError, match="rng"):
        mix.laplacian(x)
    gen = RngStream(413).generator()
    assert np.isfinite(mix.laplacian(x, rng=gen))


def test_mixture_beta_callable_validation(inf_a, inf_b):
    bad_shape = ScoreMixture([inf_a, inf_b], lambda x: np.ones(x.shape[:-1] + (3,)))
    with pytest.raises(ModelError, match="shape"):
        bad_shape.score(np.zeros(2))
    off_simplex = ScoreMixture([inf_a, inf_b],
                               lambda x: np.full(x.shape[:-1] + (2,), 0.75))
    with pytest.raises(ModelError, match="simplex"):
        off_simplex.score(np.zeros(2))


def test_mixture_validation(inf_a, inf_b):
    with pytest.raises(ModelError):
        ScoreMixture([], [])
    with pytest.raises(ModelError):
        ScoreMixture([inf_a, inf_b], [0.4, 0.4])
    with pytest.raises(ModelError):
        ScoreMixture([inf_a, inf_b], [0.5, 0.5], n_probes=0)
    with pytest.raises(ModelError):
        ScoreMixture([inf_a, inf_b], [0.5, 0.5], init_basis=2)
    with pytest.raises(ModelError):
        ScoreMixture([inf_a, Gaussian([0.0], [[1.0]])], [0.5, 0.5])


def test_mixture_sampling_tracks_member(inf_a):
    mix = ScoreMixture([inf_a], [1.0],
                       langevin=LangevinConfig(step=0.01, steps=50))
    draws = mix.sample(4000, RngStream(414).generator())
    assert draws.shape == (4000, 2)
    assert np.abs(draws.mean(axis=0) - inf_a.mean).max() < 0.1


# ---------------------------------------------------------------------------
# hyvarinen score and divergences


def test_hyvarinen_combines_score_and_laplacian(gmm):
    x = np.array([0.7, -0.4])
    s = gmm.score(x)
    want = 0.5 * float(s @ s) + gmm.laplacian(x)
    assert gmm.hyvarinen(x) == pytest.approx(want, rel=1e-12)


def test_fisher_gaussian_closed_forms(inf_a, inf_b, post_a, post_b):
    assert fisher_gaussian(post_a, inf_a) == pytest.approx(GAP_NEAR, abs=1e-15)
    assert fisher_gaussian(post_b, inf_a) == pytest.approx(1.0 / 4.84, abs=1e-15)
    assert fisher_gaussian(inf_a, inf_a) == 0.0
    # symmetric for a shared covariance
    assert fisher_gaussian(inf_a, post_b) == fisher_gaussian(post_b, inf_a)


def test_fisher_gaussian_rejects_mismatched_covariances(inf_a):
    other = Gaussian([0.0, 0.0], np.eye(2))
    with pytest.raises(ModelError, match="fisher_mc"):
        fisher_gaussian(inf_a, other)


def test_fisher_mc_matches_closed_form(inf_a, post_a):
    # shared covariance makes the score difference constant, so the Monte
    # Carlo average is exact up to rounding
    est, se = fisher_mc(post_a, inf_a, 100000, RngStream(415))
    assert est == pytest.approx(GAP_NEAR, abs=1e-12)
    assert se < 1e-12


def test_fisher_mc_heteroscedastic_pair(inf_a):
    p = Gaussian([0.5, -0.5], [[1.0, 0.3], [0.3, 0.8]])
    est, se = fisher_mc(p, inf_a, 100000, RngStream(419))
    # E 0.5*||A y + b||^2 with y ~ N(0, V_p), A the inverse-cov difference
    vp = np.asarray(p.cov)
    a = np.linalg.inv(inf_a.cov) - np.linalg.inv(vp)
    b = np.linalg.inv(inf_a.cov) @ (np.asarray(p.mean) - inf_a.mean)
    want = 0.5 * (np.trace(a @ vp @ a.T) + b @ b)
    assert se > 0
    assert abs(est - want) <= 3 * se


def test_fisher_mc_identical_models_is_exactly_zero(inf_a):
    assert fisher_mc(inf_a, inf_a, 1000, RngStream(416)) == (0.0, 0.0)


def test_fisher_mc_nonnegative(gmm, inf_a):
    est, _ = fisher_mc(inf_a, gmm, 5000, RngStream(417))
    assert est >= 0.0
    with pytest.raises(ModelError):
        fisher_mc(inf_a, gmm, 1, RngStream(418))


# ---------------------------------------------------------------------------
# Hutchinson divergence estimation


def test_hutchinson_standard_gaussian_trace():
    model = Gaussian(np.zeros(10), np.eye(10))
    est = hutchinson_laplacian(model, np.zeros(10), 10000, RngStream(419))
    assert abs(est - (-10.0)) < 0.5


def test_hutchinson_matches_exact_within_stderr():
    gen = RngStream(420).generator()
    model = Gaussian(gen.standard_normal(4), random_spd(gen, 4))
    x = gen.standard_normal(4)
    est, se = hutchinson_laplacian(model, x, 1000, gen, return_stderr=True)
    assert se > 0
    assert abs(est - model.laplacian(x)) <= 3 * se


def test_hutchinson_shared_probes_are_deterministic(inf_a):
    x = np.array([[0.2, 0.3], [1.0, -1.0]])
    probes = RngStream(421).generator().standard_normal((8, 2, 2))
    a = hutchinson_laplacian(inf_a, x, 8, probes=probes)
    b = hutchinson_laplacian(inf_a, x, 8, probes=probes)
    assert np.array_equal(a, b)


def test_hutchinson_single_probe_has_zero_stderr(inf_a):
    est, se = hutchinson_laplacian(inf_a, np.zeros(2), 1, RngStream(422),
                                   return_stderr=True)
    assert se == 0.0
    assert np.isfinite(est)


def test_hutchinson_validation(inf_a):
    with pytest.raises(ModelError):
        hutchinson_laplacian(inf_a, np.zeros(2), 0, RngStream(0))
