"""Robust mean estimation by smoothed soft truncation, plus its private forms.

The estimator soft-truncates each sample, smooths the truncation with
multiplicative Gaussian noise (closed form below), averages, and for the
private variants adds calibrated Gaussian noise either once to the mean
(central model) or to every per-user release (local model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .errors import DomainError
from .numeric import RngStream, sample_gaussian
from .validation import (
    check_count,
    check_finite_scalar,
    check_positive,
    check_probability,
)

__all__ = [
    "PHI_BOUND",
    "RobustMeanParams",
    "phi",
    "correction_C",
    "smoothed_phi",
    "robust_mean",
    "robust_mean_columns",
    "select_params_nonprivate",
    "select_params_central",
    "select_params_local",
    "central_dp_mean",
    "local_dp_mean",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Saturation value of the soft truncation: phi(sqrt(2)) = 2*sqrt(2)/3.
PHI_BOUND = 2.0 * _SQRT2 / 3.0

# Beyond this the closed form loses ~b^3 * eps in float64; switch to the
# saturation + window evaluation, which has no cancellation there.
_CLOSED_FORM_LIMIT = 10.0

# 32-point Gauss-Legendre panels, <= 0.25 std wide, resolve the window
# integrand (cubic times normal pdf) to machine precision.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_PANEL_WIDTH = 0.25


@dataclass(frozen=True)
class RobustMeanParams:
    """Estimator parameters: truncation scale s, smoothing concentration beta
    (multiplicative noise is N(0, 1/beta)), second-moment bound tau, failure
    probability zeta, and Gaussian noise std sigma (0 for non-private use)."""

    s: float
    beta: float
    tau: float
    zeta: float
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "s", check_positive("s", self.s))
        object.__setattr__(self, "beta", check_positive("beta", self.beta))
        object.__setattr__(self, "tau", check_positive("tau", self.tau))
        object.__setattr__(self, "zeta", check_probability("zeta", self.zeta))
        object.__setattr__(self, "sigma", check_positive("sigma", self.sigma, allow_zero=True))

    def with_sigma(self, sigma: float) -> "RobustMeanParams":
        return replace(self, sigma=sigma)


def phi(x):
    """Soft truncation: x - x^3/6 on [-sqrt(2), sqrt(2)], saturating at
    +-2*sqrt(2)/3 outside.  Odd, continuous, |phi| <= 2*sqrt(2)/3."""
    c = np.clip(x, -_SQRT2, _SQRT2)
    out = c - c**3 / 6.0
    if np.ndim(x) == 0:
        return float(out)
    return out


def correction_C(a: float, b: float) -> float:
    """Correction term of the smoothed truncation's closed form:
    E phi(a + b*xi) = a(1 - b^2/2) - a^3/6 + C(a, b) for xi ~ N(0, 1).
    """
    a = check_finite_scalar("a", a)
    b = check_finite_scalar("b", b)
    if b <= 0:
        raise DomainError(f"b must be > 0, got {b!r}")
    return float(_correction_vec(np.asarray(a), np.asarray(b)))


def _correction_vec(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # V is clipped to +-40: past +-38.6 both the CDF and the Gaussian kernel
    # underflow to exactly 0.0, so the clip is value-identical while keeping
    # V*V and V*E finite for subnormal b.
    with np.errstate(over="ignore", divide="ignore"):
        v_minus = np.clip((_SQRT2 - a) / b, -40.0, 40.0)
        v_plus = np.clip((_SQRT2 + a) / b, -40.0, 40.0)
    f_minus = ndtr(-v_minus)
    f_plus = ndtr(-v_plus)
    e_minus = np.exp(-0.5 * v_minus**2)
    e_plus = np.exp(-0.5 * v_plus**2)
    t1 = PHI_BOUND * (f_minus - f_plus)
    t2 = -(a - a**3 / 6.0) * (f_minus + f_plus)
    t3 = b * _INV_SQRT_2PI * (1.0 - a**2 / 2.0) * (e_plus - e_minus)
    t4 = (a * b**2 / 2.0) * (
        f_plus + f_minus + _INV_SQRT_2PI * (v_plus * e_plus + v_minus * e_minus)
    )
    t5 = (b**3 / 6.0) * _INV_SQRT_2PI * (
        (2.0 + v_minus**2) * e_minus - (2.0 + v_plus**2) * e_plus
    )
    return t1 + t2 + t3 + t4 + t5


def _window_expectation(a: float, b: float) -> float:
    """E phi(a + b*xi), xi ~ N(0,1), as saturated-tail mass plus the integral
    over the window where |a + b*xi| <= sqrt(2).  No large-argument
    cancellation, unlike the closed form."""
    v_minus = (_SQRT2 - a) / b
    v_plus = (_SQRT2 + a) / b
    tails = PHI_BOUND * ((1.0 - ndtr(v_minus)) - ndtr(-v_plus))
    lo = max(-v_plus, -39.0)
    hi = min(v_minus, 39.0)
    if hi <= lo:
        return float(tails)
    n_panels = max(1, int(math.ceil((hi - lo) / _PANEL_WIDTH)))
    edges = np.linspace(lo, hi, n_panels + 1)
    mid = (edges[:-1] + edges[1:]) / 2.0
    half = (edges[1:] - edges[:-1]) / 2.0
    u = mid[:, None] + half[:, None] * _GL_NODES
    z = a + b * u
    pdf = np.exp(-0.5 * u * u) * _INV_SQRT_2PI
    panel_sums = ((z - z**3 / 6.0) * pdf) @ _GL_WEIGHTS
    return float(tails + np.sum(half * panel_sums))


def _smoothed_phi_array(x: np.ndarray, s: float, beta: float) -> np.ndarray:
    """Vectorized smoothed truncation; x any shape, finite."""
    x = np.asarray(x, dtype=float)
    a = x / s
    with np.errstate(over="ignore"):
        b = np.abs(x) / (s * math.sqrt(beta))
    out = np.where(b == 0.0, x, 0.0)  # |x| << s underflows b; value is ~x
    near = (b > 0.0) & (np.abs(a) <= _CLOSED_FORM_LIMIT) & (b <= _CLOSED_FORM_LIMIT)
    if np.any(near):
        an, bn = a[near], b[near]
        val = s * (an * (1.0 - bn**2 / 2.0) - an**3 / 6.0 + _correction_vec(an, bn))
        out[near] = val
    far = (b > 0.0) & ~near
    if np.any(far):
        fa, fb = a[far], b[far]
        out[far] = [s * _window_expectation(float(ai), float(bi))
                    for ai, bi in zip(fa, fb)]
    bound = PHI_BOUND * s
    return np.clip(out, -bound, bound)


def smoothed_phi(x: float, p: RobustMeanParams) -> float:
    """Per-sample smoothed truncation s * E phi(x(1 + eta)/s) with
    eta ~ N(0, 1/beta).  Odd in x, zero at zero, |value| <= (2*sqrt(2)/3) s.
    """
    x = check_finite_scalar("x", x)
    if x == 0.0:
        return 0.0
    return float(_smoothed_phi_array(np.asarray(x), p.s, p.beta))


def robust_mean(xs, p: RobustMeanParams) -> float:
    """Average of per-sample smoothed truncations; deterministic."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or xs.size == 0:
        raise DomainError(f"xs must be a nonempty 1-d sequence, got shape {xs.shape}")
    if not np.all(np.isfinite(xs)):
        raise DomainError("xs must have finite entries")
    return float(np.mean(_smoothed_phi_array(xs, p.s, p.beta)))


def robust_mean_columns(matrix, p: RobustMeanParams) -> np.ndarray:
    """Per-column robust mean of an (n, d) value matrix."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.size == 0:
        raise DomainError(f"matrix must be a nonempty (n, d) array, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise DomainError("matrix must have finite entries")
    return _smoothed_phi_array(matrix, p.s, p.beta).mean(axis=0)


def select_params_nonprivate(n: int, tau: float, zeta: float) -> RobustMeanParams:
    """Non-private schedule: beta = 2 log(1/zeta), s = sqrt(n tau / (2 log(1/zeta)))."""
    n = check_count("n", n, minimum=2)
    tau = check_positive("tau", tau)
    zeta = check_probability("zeta", zeta)
    log_term = math.log(1.0 / zeta)
    return RobustMeanParams(
        s=math.sqrt(n * tau / (2.0 * log_term)),
        beta=2.0 * log_term,
        tau=tau,
        zeta=zeta,
        sigma=0.0,
    )


def _gaussian_mechanism_sigma(sensitivity: float, eps: float, delta: float) -> float:
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / eps


def select_params_central(
    n: int, tau: float, eps: float, delta: float, zeta: float
) -> RobustMeanParams:
    """Central-model schedule: beta = sqrt(log(1/zeta)),
    s = sqrt(n eps tau) / (log(1/zeta) log^(1/4)(1/delta)), and sigma
    calibrated to the mean's sensitivity (4 sqrt(2)/3) s / n."""
    n = check_count("n", n, minimum=2)
    tau = check_positive("tau", tau)
    eps = check_positive("eps", eps)
    delta = check_probability("delta", delta)
    zeta = check_probability("zeta", zeta)
    log_zeta = math.log(1.0 / zeta)
    log_delta = math.log(1.0 / delta)
    s = math.sqrt(n * eps * tau) / (log_zeta * log_delta**0.25)
    sensitivity = (2.0 * PHI_BOUND) * s / n
    return RobustMeanParams(
        s=s,
        beta=math.sqrt(log_zeta),
        tau=tau,
        zeta=zeta,
        sigma=_gaussian_mechanism_sigma(sensitivity, eps, delta),
    )


def select_params_local(
    n: int, tau: float, eps: float, delta: float, zeta: float
) -> RobustMeanParams:
    """Local-model schedule: s = n^(1/4) sqrt(eps tau) / (log(1/zeta)
    log^(1/4)(1/delta)); sigma is per user, calibrated to one release's
    sensitivity (4 sqrt(2)/3) s, hence independent of n."""
    n = check_count("n", n, minimum=2)
    tau = check_positive("tau", tau)
    eps = check_positive("eps", eps)
    delta = check_probability("delta", delta)
    zeta = check_probability("zeta", zeta)
    log_zeta = math.log(1.0 / zeta)
    log_delta = math.log(1.0 / delta)
    s = n**0.25 * math.sqrt(eps * tau) / (log_zeta * log_delta**0.25)
    sensitivity = (2.0 * PHI_BOUND) * s
    return RobustMeanParams(
        s=s,
        beta=math.sqrt(log_zeta),
        tau=tau,
        zeta=zeta,
        sigma=_gaussian_mechanism_sigma(sensitivity, eps, delta),
    )


def _check_data(xs, n: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or xs.size == 0:
        raise DomainError(f"xs must be a nonempty 1-d sequence, got shape {xs.shape}")
    if not np.all(np.isfinite(xs)):
        raise DomainError("xs must have finite entries")
    if xs.size != n:
        raise DomainError(f"n={n} does not match len(xs)={xs.size}")
    return xs


def central_dp_mean(
    xs,
    n: int,
    tau: float,
    eps: float,
    delta: float,
    zeta: float,
    rng: RngStream,
    sigma_override: float | None = None,
) -> float:
    """Robust mean plus one draw of N(0, sigma^2) calibrated to the mean's
    sensitivity.  ``sigma_override`` is test-only (0 disables the noise and
    the output is then NOT private)."""
    p = select_params_central(n, tau, eps, delta, zeta)
    xs = _check_data(xs, n)
    sigma = p.sigma if sigma_override is None else check_positive(
        "sigma_override", sigma_override, allow_zero=True
    )
    return robust_mean(xs, p) + sample_gaussian(rng, 0.0, sigma)


def local_dp_mean(
    xs,
    n: int,
    tau: float,
    eps: float,
    delta: float,
    zeta: float,
    rng: RngStream,
    sigma_override: float | None = None,
) -> float:
    """Each user releases their smoothed truncation plus N(0, sigma^2);
    the output is the average of the n releases."""
    p = select_params_local(n, tau, eps, delta, zeta)
    xs = _check_data(xs, n)
    sigma = p.sigma if sigma_override is None else check_positive(
        "sigma_override", sigma_override, allow_zero=True
    )
    releases = _smoothed_phi_array(xs, p.s, p.beta)
    if sigma > 0.0:
        releases = releases + sigma * rng.generator.standard_normal(xs.size)
    return float(np.mean(releases))
