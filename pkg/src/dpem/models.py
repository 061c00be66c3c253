"""The three latent-variable models: samplers, per-sample objective values
and gradients, the GMM fixed-point map, second-moment bounds, and the
labeled-data-to-GMM preprocessing pipeline.

Models (parameter beta, noise std sigma):
  gmm  y = z * beta + v,        z Rademacher, v ~ N(0, sigma^2 I)
  mrm  y = z <beta, x> + v,     x ~ N(0, I), z Rademacher, v ~ N(0, sigma^2)
  rmc  y = <beta, x> + v, then each coordinate of x is dropped
       independently with probability p_m (mask entry False).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError
from .numeric import RngStream, max_eigenvalue
from .validation import (
    check_count,
    check_finite_scalar,
    check_positive,
    check_vector,
)

__all__ = [
    "MODEL_KINDS",
    "ModelSpec",
    "ObservationSet",
    "GroundTruth",
    "sample_gmm",
    "sample_mrm",
    "sample_rmc",
    "sample_observations",
    "grad_q",
    "grad_q_batch",
    "q_value",
    "m_beta",
    "K_beta",
    "f_gmm",
    "f_gmm_batch",
    "tau_bound",
    "preprocess_real_gmm",
    "SIGMA_FLOOR",
]

MODEL_KINDS = ("gmm", "mrm", "rmc")

# Lower bound applied to the preprocessed noise std so a degenerate
# (zero-covariance) cluster still yields a valid model.
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    d: int
    sigma: float
    p_m: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DomainError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "d", check_count("d", self.d))
        object.__setattr__(self, "sigma", check_positive("sigma", self.sigma))
        p_m = check_finite_scalar("p_m", self.p_m)
        if not 0.0 <= p_m < 1.0:
            raise DomainError(f"p_m must lie in [0, 1), got {p_m!r}")
        if self.kind != "rmc" and p_m != 0.0:
            raise DomainError("p_m applies to the rmc model only")
        object.__setattr__(self, "p_m", p_m)


@dataclass(frozen=True)
class ObservationSet:
    """n samples for one model.  gmm: ys is (n, d).  mrm: xs is (n, d) and
    ys is (n,).  rmc: additionally mask is (n, d) boolean, True where the
    coordinate was observed; unobserved xs entries hold 0 and are never
    read (the mask is always consulted first)."""

    kind: str
    ys: np.ndarray
    xs: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DomainError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        ys = np.asarray(self.ys, dtype=float)
        if not np.all(np.isfinite(ys)):
            raise DomainError("ys must have finite entries")
        if self.kind == "gmm":
            if ys.ndim != 2 or ys.shape[0] == 0:
                raise DomainError(f"gmm ys must be (n, d), got shape {ys.shape}")
            if self.xs is not None or self.mask is not None:
                raise DomainError("gmm observations carry responses only")
        else:
            if ys.ndim != 1 or ys.shape[0] == 0:
                raise DomainError(f"{self.kind} ys must be (n,), got shape {ys.shape}")
            xs = np.asarray(self.xs, dtype=float) if self.xs is not None else None
            if xs is None or xs.ndim != 2 or xs.shape[0] != ys.shape[0]:
                raise DomainError(f"{self.kind} xs must be (n, d) matching ys")
            if not np.all(np.isfinite(xs)):
                raise DomainError("xs must have finite entries")
            xs.setflags(write=False)
            object.__setattr__(self, "xs", xs)
            if self.kind == "rmc":
                mask = np.asarray(self.mask)
                if mask is None or mask.dtype != bool or mask.shape != xs.shape:
                    raise DomainError("rmc mask must be boolean with xs's shape")
                if np.any(xs[~mask] != 0.0):
                    raise DomainError("unobserved xs entries must hold the 0 sentinel")
                mask.setflags(write=False)
                object.__setattr__(self, "mask", mask)
            elif self.mask is not None:
                raise DomainError("mask applies to the rmc model only")
        ys.setflags(write=False)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.ys.shape[0]

    @property
    def d(self) -> int:
        return self.ys.shape[1] if self.kind == "gmm" else self.xs.shape[1]

    def take(self, indices) -> "ObservationSet":
        idx = np.asarray(indices)
        if self.kind == "gmm":
            return ObservationSet(self.kind, self.ys[idx])
        if self.kind == "mrm":
            return ObservationSet(self.kind, self.ys[idx], self.xs[idx])
        return ObservationSet(self.kind, self.ys[idx], self.xs[idx], self.mask[idx])


@dataclass(frozen=True)
class GroundTruth:
    beta_star: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta_star", check_vector("beta_star", self.beta_star))


def sample_gmm(n: int, beta_star, sigma: float, rng: RngStream) -> ObservationSet:
    n = check_count("n", n)
    beta_star = check_vector("beta_star", beta_star)
    sigma = check_positive("sigma", sigma)
    gen = rng.generator
    z = gen.integers(0, 2, size=n) * 2 - 1
    v = gen.standard_normal((n, beta_star.size)) * sigma
    return ObservationSet("gmm", z[:, None] * beta_star + v)


def sample_mrm(n: int, beta_star, sigma: float, rng: RngStream) -> ObservationSet:
    n = check_count("n", n)
    beta_star = check_vector("beta_star", beta_star)
    sigma = check_positive("sigma", sigma)
    gen = rng.generator
    z = gen.integers(0, 2, size=n) * 2 - 1
    x = gen.standard_normal((n, beta_star.size))
    y = z * (x @ beta_star) + sigma * gen.standard_normal(n)
    return ObservationSet("mrm", y, x)


def sample_rmc(n: int, beta_star, sigma: float, p_m: float, rng: RngStream) -> ObservationSet:
    n = check_count("n", n)
    beta_star = check_vector("beta_star", beta_star)
    sigma = check_positive("sigma", sigma)
    p_m = check_finite_scalar("p_m", p_m)
    if not 0.0 <= p_m < 1.0:
        raise DomainError(f"p_m must lie in [0, 1), got {p_m!r}")
    gen = rng.generator
    x = gen.standard_normal((n, beta_star.size))
    # the response uses the full covariate; masking happens afterwards
    y = x @ beta_star + sigma * gen.standard_normal(n)
    mask = gen.random((n, beta_star.size)) >= p_m
    return ObservationSet("rmc", y, np.where(mask, x, 0.0), mask)


def sample_observations(
    model: ModelSpec, n: int, beta_star, rng: RngStream
) -> ObservationSet:
    beta_star = check_vector("beta_star", beta_star, d=model.d)
    if model.kind == "gmm":
        return sample_gmm(n, beta_star, model.sigma, rng)
    if model.kind == "mrm":
        return sample_mrm(n, beta_star, model.sigma, rng)
    return sample_rmc(n, beta_star, model.sigma, model.p_m, rng)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # evaluate exp on negative arguments only
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_sample(model: ModelSpec, sample):
    if model.kind == "gmm":
        return (check_vector("y", sample, d=model.d),)
    if model.kind == "mrm":
        x, y = sample
        return check_vector("x", x, d=model.d), check_finite_scalar("y", y)
    x_obs, mask, y = sample
    x_obs = check_vector("x_obs", x_obs, d=model.d)
    mask = np.asarray(mask)
    if mask.dtype != bool or mask.shape != x_obs.shape:
        raise DomainError("mask must be boolean with x_obs's shape")
    return x_obs, mask, check_finite_scalar("y", y)


def grad_q(model: ModelSpec, sample, beta) -> np.ndarray:
    """Per-sample ascent direction of the surrogate objective at beta.

    gmm: (2 w - 1) y - beta with w = sigmoid(<beta, y>/sigma^2)
    mrm: (2 w - 1) y x - x x^T beta with w = sigmoid(y <beta, x>/sigma^2)
    rmc: y m_beta - K_beta beta
    """
    beta = check_vector("beta", beta, d=model.d)
    parts = _check_sample(model, sample)
    s2 = model.sigma**2
    if model.kind == "gmm":
        (y,) = parts
        # 2w - 1 evaluated as tanh(t/2): no cancellation near w = 1/2, and
        # tanh's odd symmetry keeps grad_q(y) == grad_q(-y) bitwise
        return np.tanh(0.5 * np.dot(beta, y) / s2) * y - beta
    if model.kind == "mrm":
        x, y = parts
        return np.tanh(0.5 * y * np.dot(beta, x) / s2) * y * x - x * np.dot(x, beta)
    x_obs, mask, y = parts
    m = m_beta(x_obs, mask, y, beta, model.sigma)
    return y * m - K_beta(x_obs, mask, y, beta, model.sigma) @ beta


def grad_q_batch(model: ModelSpec, data: ObservationSet, beta) -> np.ndarray:
    """(n, d) matrix of per-sample gradients; same algebra as grad_q."""
    if data.kind != model.kind:
        raise DomainError(f"data kind {data.kind!r} does not match model {model.kind!r}")
    beta = check_vector("beta", beta, d=model.d)
    s2 = model.sigma**2
    if model.kind == "gmm":
        return np.tanh(0.5 * (data.ys @ beta) / s2)[:, None] * data.ys - beta
    if model.kind == "mrm":
        xb = data.xs @ beta
        t = np.tanh(0.5 * data.ys * xb / s2)
        return (t * data.ys)[:, None] * data.xs - xb[:, None] * data.xs
    miss = 1.0 - data.mask.astype(float)
    dot_obs = data.xs @ beta  # sentinel entries are 0, so this is <beta, observed x>
    denom = s2 + miss @ (beta * beta)
    m = data.xs + ((data.ys - dot_obs) / denom)[:, None] * (miss * beta)
    u = miss * m
    k_beta = miss * beta + m * (m @ beta)[:, None] - u * (u @ beta)[:, None]
    return data.ys[:, None] * m - k_beta


def q_value(model: ModelSpec, sample, beta, beta_prime) -> float:
    """Per-sample surrogate objective q(beta; beta_prime); additive terms
    constant in beta are dropped.  Its beta-gradient at beta = beta_prime
    equals grad_q."""
    beta = check_vector("beta", beta, d=model.d)
    beta_prime = check_vector("beta_prime", beta_prime, d=model.d)
    parts = _check_sample(model, sample)
    s2 = model.sigma**2
    if model.kind == "gmm":
        (y,) = parts
        w = float(_sigmoid(np.dot(beta_prime, y) / s2))
        return -0.5 * (
            w * float(np.sum((y - beta) ** 2)) + (1.0 - w) * float(np.sum((y + beta) ** 2))
        )
    if model.kind == "mrm":
        x, y = parts
        w = float(_sigmoid(y * np.dot(beta_prime, x) / s2))
        r = float(np.dot(x, beta))
        return -0.5 * (w * (y - r) ** 2 + (1.0 - w) * (y + r) ** 2)
    x_obs, mask, y = parts
    m = m_beta(x_obs, mask, y, beta_prime, model.sigma)
    k = K_beta(x_obs, mask, y, beta_prime, model.sigma)
    return float(y * np.dot(beta, m) - 0.5 * np.dot(beta, k @ beta))


def m_beta(x_obs, mask, y, beta, sigma: float) -> np.ndarray:
    """Conditional mean of the full covariate given the observed part:
    z*x + ((y - <beta, z*x>) / (sigma^2 + ||(1-z)*beta||^2)) (1-z)*beta,
    with z the observed-coordinate indicator."""
    x_obs = check_vector("x_obs", x_obs)
    beta = check_vector("beta", beta, d=x_obs.size)
    y = check_finite_scalar("y", y)
    sigma = check_positive("sigma", sigma)
    miss = 1.0 - np.asarray(mask, dtype=float)
    denom = sigma**2 + float(np.sum(miss * beta * beta))  # >= sigma^2 > 0
    return x_obs + ((y - float(np.dot(beta, x_obs))) / denom) * (miss * beta)


def K_beta(x_obs, mask, y, beta, sigma: float) -> np.ndarray:
    """Conditional second moment of the full covariate:
    diag(1-z) + m m^T - [(1-z)*m][(1-z)*m]^T; exactly symmetric."""
    m = m_beta(x_obs, mask, y, beta, sigma)
    miss = 1.0 - np.asarray(mask, dtype=float)
    u = miss * m
    return np.diag(miss) + np.outer(m, m) - np.outer(u, u)


def f_gmm(y, beta_prime, sigma: float) -> np.ndarray:
    """GMM fixed-point map (2 w - 1) y; satisfies f_gmm(y, b) - b = grad_q."""
    y = check_vector("y", y)
    beta_prime = check_vector("beta_prime", beta_prime, d=y.size)
    sigma = check_positive("sigma", sigma)
    return np.tanh(0.5 * np.dot(beta_prime, y) / sigma**2) * y


def f_gmm_batch(data: ObservationSet, beta_prime, sigma: float) -> np.ndarray:
    if data.kind != "gmm":
        raise DomainError(f"f_gmm requires gmm observations, got {data.kind!r}")
    beta_prime = check_vector("beta_prime", beta_prime, d=data.d)
    return np.tanh(0.5 * (data.ys @ beta_prime) / sigma**2)[:, None] * data.ys


def tau_bound(
    model: ModelSpec,
    beta_star_inf: float,
    beta_star_l2: float,
    multiplier: float = 4.0,
) -> float:
    """Per-coordinate second-moment bound for the gradients at beta_star,
    up to the configurable multiplier (unit leading constant otherwise).

    gmm: ||beta*||_inf^2 + sigma^2
    mrm: max{(||beta*||_2^2 + sigma^2)^2, d ||beta*||_2^2}
    rmc: (sqrt(d) ||beta*||_2 + sigma^2 + ||beta*||_2^2)^2
    """
    beta_star_inf = check_positive("beta_star_inf", beta_star_inf, allow_zero=True)
    beta_star_l2 = check_positive("beta_star_l2", beta_star_l2, allow_zero=True)
    multiplier = check_positive("multiplier", multiplier)
    s2 = model.sigma**2
    if model.kind == "gmm":
        base = beta_star_inf**2 + s2
    elif model.kind == "mrm":
        base = max((beta_star_l2**2 + s2) ** 2, model.d * beta_star_l2**2)
    else:
        base = (math.sqrt(model.d) * beta_star_l2 + s2 + beta_star_l2**2) ** 2
    return multiplier * base


def preprocess_real_gmm(features, labels):
    """Turn binary-labeled vectors into a centered two-cluster problem.

    Clusters are truncated to equal size (first n_min rows of each in input
    order), the noise std is sqrt of the larger per-cluster covariance top
    eigenvalue (floored at SIGMA_FLOOR), rows are translated by minus the
    cluster-mean midpoint, and the target parameter is the translated mean
    of the label-1 cluster, (mu1 - mu0)/2.

    Returns (ObservationSet, GroundTruth, sigma).
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DomainError(f"features must be (n, d), got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise DomainError("features must have finite entries")
    labels = np.asarray(labels)
    if labels.shape != (features.shape[0],):
        raise DomainError("labels must be one per feature row")
    values = set(np.unique(labels).tolist())
    if not values <= {0, 1}:
        raise DomainError(f"labels must be 0 or 1, got {sorted(values)}")
    if values != {0, 1}:
        raise DomainError("both labels must be present")

    idx1 = np.flatnonzero(labels == 1)
    idx0 = np.flatnonzero(labels == 0)
    n_min = min(idx1.size, idx0.size)
    if n_min < 2:
        raise DomainError(f"each cluster needs at least 2 rows, got {n_min}")
    cluster1 = features[idx1[:n_min]]
    cluster0 = features[idx0[:n_min]]

    lam1 = max_eigenvalue(np.cov(cluster1, rowvar=False).reshape(cluster1.shape[1], -1))
    lam0 = max_eigenvalue(np.cov(cluster0, rowvar=False).reshape(cluster0.shape[1], -1))
    sigma = max(math.sqrt(max(lam1, lam0, 0.0)), SIGMA_FLOOR)

    mu1 = cluster1.mean(axis=0)
    mu0 = cluster0.mean(axis=0)
    midpoint = (mu1 + mu0) / 2.0
    ys = np.vstack([cluster1, cluster0]) - midpoint
    beta_star = mu1 - midpoint  # == (mu1 - mu0) / 2
    return ObservationSet("gmm", ys), GroundTruth(beta_star), sigma
