"""False-alarm calibration for score-based CUSUM detectors.

The scaled increment ``rho * z(X)`` admits an exponential no-overshoot bound
on the average run length as soon as ``E_inf[exp(rho z(X))] <= 1``.  With

    h(rho) = E_inf[exp(rho z(X))] - 1

(``h(0) = 0``, ``h`` strictly convex, ``h'(0) < 0`` whenever the pre-change
drift is negative), the largest admissible multiplier is the positive root
``rho*`` of ``h`` when one exists.  The detector threshold for a target
average run length ``gamma`` is then ``omega = log(gamma) / rho``, giving
``ARL >= exp(rho * omega) = gamma``.

``h`` is estimated by Monte Carlo with common random numbers: the increment
sample is drawn once and reused for every ``rho``, making the estimate a
deterministic, exactly convex function of ``rho`` whose root is found by
geometric bracketing and bisection.
"""

import math
from dataclasses import dataclass

import numpy as np

from .detectors import DetectorConfig, batch_scores
from .models import Gaussian
from .rngs import as_generator

__all__ = [
    "RhoSolution",
    "CalibrationError",
    "DriftSignError",
    "RHO_CAP",
    "mgf_gap",
    "solve_rho_star",
    "threshold_for_arl",
]

RHO_CAP = 65536.0  # 2**16: beyond this the pair is treated as degenerate

# largest exponent representable by a double, used for overflow reporting
_LOG_DBL_MAX = math.log(np.finfo(float).max)


class CalibrationError(RuntimeError):
    """Monte Carlo calibration failed (e.g. overflow even in log space)."""


class DriftSignError(RuntimeError):
    """The pre-change drift is not resolvably negative, so no positive
    multiplier can satisfy the false-alarm condition."""


@dataclass(frozen=True)
class RhoSolution:
    """Root-finding outcome.  ``h_curve`` records every evaluated
    ``(rho, h_hat, stderr)`` triple.  ``degenerate`` marks the case where
    ``h`` stayed non-positive up to the cap, i.e. every multiplier in range
    satisfies the false-alarm condition and ``rho_star`` equals the cap."""

    rho_star: float
    h_curve: tuple[tuple[float, float, float], ...]
    method: str
    degenerate: bool = False
    message: str = ""

    def __post_init__(self):
        if self.method not in ("closed_form", "monte_carlo"):
            raise ValueError("method must be 'closed_form' or 'monte_carlo'")
        if not self.rho_star > 0:
            raise ValueError("rho_star must be positive")


def _draw_increments(p_inf, pair, n: int, rng) -> np.ndarray:
    gen = as_generator(rng)
    draws = p_inf.sample(n, gen)
    cfg = DetectorConfig(pair.q_inf, pair.q_post, omega=0.0, rho=1.0)
    return np.asarray(batch_scores(cfg, draws, rng=gen))


def _h_from_increments(z: np.ndarray, rho: float):
    """``(h_hat, stderr)`` from a fixed increment sample, in log space.

    Raises :class:`CalibrationError` when the mean or its second moment
    overflows even after the log-sum-exp reduction, reporting the largest
    exponent encountered.
    """
    n = z.size
    if rho == 0.0:
        return 0.0, 0.0
    expo = rho * z
    peak = float(expo.max())
    log_mean = peak + math.log(float(np.exp(expo - peak).mean()))
    if log_mean > _LOG_DBL_MAX:
        raise CalibrationError(
            f"MGF estimate overflows at rho={rho:g}: max exponent {peak:.6g}"
        )
    log_sq_mean = 2.0 * peak + math.log(float(np.exp(2.0 * (expo - peak)).mean()))
    if log_sq_mean > _LOG_DBL_MAX:
        raise CalibrationError(
            f"MGF variance overflows at rho={rho:g}: max exponent {peak:.6g}"
        )
    h_hat = math.expm1(log_mean)
    var = max(math.exp(log_sq_mean) - math.exp(2.0 * log_mean), 0.0)
    return h_hat, math.sqrt(var / n)


def mgf_gap(p_inf, pair, rho: float, n: int, rng):
    """Monte Carlo estimate of ``h(rho) = E_inf[exp(rho z)] - 1``.

    Returns ``(estimate, stderr)``; exact ``(0.0, 0.0)`` at ``rho = 0``.
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")
    if n < 2:
        raise ValueError("need at least 2 samples")
    return _h_from_increments(_draw_increments(p_inf, pair, n, rng), rho)


def _shared_v_gaussians(p_inf, pair):
    models = (p_inf, pair.q_inf, pair.q_post)
    if not all(isinstance(m, Gaussian) for m in models):
        return None
    cov = p_inf.cov
    if any(np.abs(m.cov - cov).max() > 1e-10 for m in models[1:]):
        return None
    return cov


def _closed_form(p_inf, pair):
    """For Gaussians sharing ``V`` the increment is linear in ``x``, so
    ``h`` is a log-normal MGF minus one and the root is ``-2 m / s^2`` with
    ``m``, ``s^2`` the increment mean and variance under ``p_inf``."""
    cov = _shared_v_gaussians(p_inf, pair)
    if cov is None:
        raise CalibrationError(
            "closed-form calibration needs Gaussian models with a shared covariance"
        )
    vinv = p_inf.cov_inv
    diff = pair.q_post.mean - pair.q_inf.mean
    coef = vinv @ vinv @ diff
    const = 0.5 * float(
        pair.q_inf.mean @ vinv @ vinv @ pair.q_inf.mean
        - pair.q_post.mean @ vinv @ vinv @ pair.q_post.mean
    )
    mean = float(coef @ p_inf.mean) + const
    var = float(coef @ cov @ coef)
    if mean >= 0:
        raise DriftSignError(
            "nearness assumption violated: pre-change drift is non-negative"
        )
    rho = -2.0 * mean / var
    curve = tuple(
        (r, math.expm1(r * mean + 0.5 * r * r * var), 0.0)
        for r in (0.5 * rho, rho, 1.5 * rho)
    )
    return RhoSolution(rho, curve, "closed_form")


def solve_rho_star(p_inf, pair, n: int, rng, tol: float = 0.01,
                   method: str = "monte_carlo") -> RhoSolution:
    """Find the largest multiplier whose scaled increment satisfies the
    false-alarm condition ``E_inf[exp(rho z)] <= 1``.

    The Monte Carlo route draws the increment sample once (common random
    numbers), checks that the empirical drift is negative beyond 3 standard
    errors, expands ``rho`` geometrically from 1 until the estimate is
    positive beyond 3 standard errors (cap ``RHO_CAP``), and bisects the
    sign change to width ``tol``.  Hitting the cap returns a degenerate
    solution with ``rho_star = RHO_CAP``.  ``method='closed_form'`` uses the
    shared-covariance Gaussian formula instead; ``'auto'`` prefers the
    closed form when applicable.
    """
    if method == "auto":
        try:
            return _closed_form(p_inf, pair)
        except CalibrationError:
            method = "monte_carlo"
    elif method == "closed_form":
        return _closed_form(p_inf, pair)
    elif method != "monte_carlo":
        raise ValueError("method must be 'monte_carlo', 'closed_form', or 'auto'")
    if n < 2:
        raise ValueError("need at least 2 samples")
    if tol <= 0:
        raise ValueError("tol must be positive")

    z = _draw_increments(p_inf, pair, n, rng)
    drift = float(z.mean())
    drift_se = float(z.std(ddof=1) / math.sqrt(z.size))
    if drift >= -3.0 * drift_se:
        raise DriftSignError(
            "nearness assumption violated: empirical pre-change drift "
            f"{drift:.6g} (stderr {drift_se:.2g}) is not negative beyond 3 stderr"
        )

    curve = []

    def h_at(rho):
        h_hat, se = _h_from_increments(z, rho)
        curve.append((rho, h_hat, se))
        return h_hat, se

    lo = 0.0  # h(0) = 0 and h' < 0 there, so 0 always brackets from below
    rho = 1.0
    hi = None
    while rho <= RHO_CAP:
        h_hat, se = h_at(rho)
        if h_hat > 3.0 * se:
            hi = rho
            break
        if h_hat <= 0.0:
            lo = rho
        rho *= 2.0
    if hi is None:
        return RhoSolution(
            RHO_CAP, tuple(curve), "monte_carlo", degenerate=True,
            message=(
                "h stayed non-positive up to the cap; every multiplier in "
                "range satisfies the false-alarm condition"
            ),
        )
    # the common-random-number estimate is exactly convex in rho, so plain
    # sign bisection converges to its unique positive root
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        h_hat, _ = h_at(mid)
        if h_hat > 0.0:
            hi = mid
        else:
            lo = mid
    return RhoSolution(0.5 * (lo + hi), tuple(curve), "monte_carlo")


def threshold_for_arl(gamma: float, rho: float) -> float:
    """Threshold delivering ``ARL >= gamma``: ``omega = log(gamma) / rho``."""
    if not gamma >= 1:
        raise ValueError("gamma must be at least 1")
    if not rho > 0:
        raise ValueError("rho must be positive")
    return math.log(gamma) / rho
