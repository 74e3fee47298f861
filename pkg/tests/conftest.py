"""Shared fixtures: the two-vertex Gaussian reference geometry used across
the suite, a Gauss-Bernoulli RBM family builder, and small finite-difference
oracles for score and Laplacian checks."""

import numpy as np
import pytest

from scoredetect import Gaussian, Gbrbm, MeanPolytope, RngStream

# reference geometry: shared covariance, pre-change means on the negative
# diagonal, post-change means on the positive diagonal
V_REF = np.array([[2.0, 0.2], [0.2, 2.0]])
MEAN_INF_A = np.array([-0.25, -0.25])
MEAN_INF_B = np.array([-1.5, -1.5])
MEAN_POST_A = np.array([0.25, 0.25])
MEAN_POST_B = np.array([0.75, 0.75])

# (1, 1) is an eigenvector of V_REF with eigenvalue 2.2, so the Fisher
# divergence between two diagonal means at offset delta is delta^2 / 4.84
GAP_NEAR = 0.25 / 4.84  # 0.0516529...: the A-vertex pair
TRACE_VINV = 4.0 / 3.96  # trace of V_REF^{-1}


@pytest.fixture(scope="session")
def vcov():
    return V_REF.copy()


@pytest.fixture(scope="session")
def inf_a():
    return Gaussian(MEAN_INF_A, V_REF)


@pytest.fixture(scope="session")
def inf_b():
    return Gaussian(MEAN_INF_B, V_REF)


@pytest.fixture(scope="session")
def post_a():
    return Gaussian(MEAN_POST_A, V_REF)


@pytest.fixture(scope="session")
def post_b():
    return Gaussian(MEAN_POST_B, V_REF)


@pytest.fixture(scope="session")
def families():
    pre = MeanPolytope(np.stack([MEAN_INF_A, MEAN_INF_B]), V_REF)
    post = MeanPolytope(np.stack([MEAN_POST_A, MEAN_POST_B]), V_REF)
    return pre, post


def drift_stats(data_mean, mean_inf, mean_post, cov=V_REF):
    """Exact mean and variance of the detector increment under a Gaussian.

    For Gaussians sharing ``cov`` the increment is linear in x:
    ``z(x) = a.x + c`` with ``a = V^{-2}(mean_post - mean_inf)``, so its law
    under N(data_mean, cov) is Gaussian with the returned moments.
    """
    vinv = np.linalg.inv(cov)
    a = vinv @ vinv @ (mean_post - mean_inf)
    c = 0.5 * float(mean_inf @ vinv @ vinv @ mean_inf
                    - mean_post @ vinv @ vinv @ mean_post)
    return float(a @ np.asarray(data_mean) + c), float(a @ cov @ a)


def make_rbm_family(stream: RngStream, n_visible=10, n_hidden=8):
    """Fresh shared-parameter RBM bases: one weight matrix plus four
    element-wise offsets defines two pre-change and two post-change members,
    ordered so the last pre-change and first post-change members are the
    nearest pair."""
    gen = stream.generator()
    w = gen.standard_normal((n_visible, n_hidden))
    b = gen.standard_normal(n_visible)
    c = gen.standard_normal(n_hidden)
    basis_inf = [Gbrbm(w - 0.2, b, c), Gbrbm(w - 0.05, b, c)]
    basis_post = [Gbrbm(w, b, c), Gbrbm(w + 0.05, b, c)]
    return basis_inf, basis_post


def fd_score(logp, x, h=1e-5):
    """Central-difference gradient of a log-density callable at one point."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        up = x.copy()
        down = x.copy()
        up[i] += h
        down[i] -= h
        out[i] = (float(logp(up)) - float(logp(down))) / (2.0 * h)
    return out


def fd_laplacian(logp, x, h=1e-4):
    """Central second-difference Laplacian of a log-density callable."""
    x = np.asarray(x, dtype=float)
    mid = float(logp(x))
    total = 0.0
    for i in range(x.size):
        up = x.copy()
        down = x.copy()
        up[i] += h
        down[i] -= h
        total += (float(logp(up)) - 2.0 * mid + float(logp(down))) / (h * h)
    return total


def assert_scores_match(model, logp, points, rel=1e-5):
    for x in points:
        want = fd_score(logp, x)
        got = np.asarray(model.score(x))
        scale = max(1.0, float(np.linalg.norm(want)))
        assert np.abs(got - want).max() <= rel * scale, (
            f"score mismatch at {x}: {got} vs {want}"
        )


def assert_laplacians_match(model, logp, points, tol=1e-4):
    for x in points:
        want = fd_laplacian(logp, x)
        got = float(model.laplacian(x))
        assert abs(got - want) <= tol, f"laplacian mismatch at {x}: {got} vs {want}"
