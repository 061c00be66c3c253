"""The four estimation procedures, as plain functions and as estimators.

All four iterate beta^t from beta^0 and record an IterationTrace.  The
private variants draw their noise from per-iteration (and, for the
per-coordinate releases, per-coordinate) child streams of the caller's
RngStream, so traces are bitwise reproducible no matter how the work is
scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .accounting import (
    PrivacyBudget,
    gaussian_sigma_for_zcdp,
    make_budget,
    split_budget_alg1,
    split_budget_alg2,
)
from .base import BaseEstimator
from .errors import ConfigError, DomainError
from .models import (
    ModelSpec,
    ObservationSet,
    f_gmm_batch,
    grad_q_batch,
    tau_bound,
)
from .numeric import RngStream, sample_gaussian
from .robust import PHI_BOUND, RobustMeanParams, robust_mean_columns
from .validation import check_count, check_positive, check_probability, check_vector

__all__ = [
    "IterationTrace",
    "estimation_error",
    "initial_beta",
    "gradient_em",
    "clipped_dp_gradient_em",
    "dp_gradient_em",
    "dp_em_gmm",
    "GradientEM",
    "ClippedDPGradientEM",
    "DPGradientEM",
    "DPEMGaussianMixture",
]


@dataclass(frozen=True)
class IterationTrace:
    """Parameter iterates beta^0..beta^T, the matching estimation errors
    when the ground truth is known, and an echo of the run's settings."""

    betas: np.ndarray
    errors: Optional[np.ndarray]
    config: dict

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=float)
        if betas.ndim != 2 or betas.shape[0] < 1:
            raise DomainError(f"betas must be (T+1, d), got shape {betas.shape}")
        betas.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        if self.errors is not None:
            errors = np.asarray(self.errors, dtype=float)
            if errors.shape != (betas.shape[0],) or np.any(errors < 0):
                raise DomainError("errors must be one nonnegative value per iterate")
            errors.setflags(write=False)
            object.__setattr__(self, "errors", errors)

    @property
    def final_beta(self) -> np.ndarray:
        return self.betas[-1]

    @property
    def final_error(self) -> float:
        if self.errors is None:
            raise DomainError("trace carries no ground-truth errors")
        return float(self.errors[-1])


def estimation_error(beta, beta_star) -> float:
    """Euclidean distance ||beta - beta_star||_2."""
    beta = check_vector("beta", beta)
    beta_star = check_vector("beta_star", beta_star, d=beta.size)
    return float(np.linalg.norm(beta - beta_star))


def initial_beta(d: int, rng: RngStream) -> np.ndarray:
    """Random unit-norm starting point: a seeded Gaussian direction."""
    d = check_count("d", d)
    v = rng.generator.standard_normal(d)
    norm = float(np.linalg.norm(v))
    while norm == 0.0:  # essentially impossible; redraw keeps the contract
        v = rng.generator.standard_normal(d)
        norm = float(np.linalg.norm(v))
    return v / norm


SIGN_SYMMETRIC_KINDS = ("gmm", "mrm")


def align_sign(beta0: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Flip beta0 into the half-space containing reference.

    The two-component mixture models are invariant under beta -> -beta,
    so an initial point's sign is a pure gauge choice; fixing it against
    the known truth keeps error curves comparable across runs.  Not
    meaningful for rmc, whose optimum is unique.
    """
    if float(np.dot(beta0, reference)) < 0.0:
        return -beta0
    return beta0


def _finish_trace(betas: list, truth, config: dict) -> IterationTrace:
    stack = np.vstack(betas)
    errors = None
    if truth is not None:
        beta_star = check_vector("beta_star", getattr(truth, "beta_star", truth))
        errors = np.linalg.norm(stack - beta_star, axis=1)
    return IterationTrace(stack, errors, config)


def _check_run(data: ObservationSet, model: ModelSpec, beta0) -> np.ndarray:
    if data.kind != model.kind:
        raise DomainError(f"data kind {data.kind!r} does not match model {model.kind!r}")
    if data.d != model.d:
        raise DomainError(f"data dimension {data.d} does not match model d={model.d}")
    return check_vector("beta0", beta0, d=model.d)


def gradient_em(
    data: ObservationSet,
    model: ModelSpec,
    beta0,
    eta: float,
    T: int,
    truth=None,
) -> IterationTrace:
    """Non-private iteration beta^{t+1} = beta^t + eta * mean gradient."""
    beta = _check_run(data, model, beta0)
    eta = check_positive("eta", eta)
    T = check_count("T", T, minimum=0)
    betas = [beta]
    for _ in range(T):
        beta = beta + eta * grad_q_batch(model, data, beta).mean(axis=0)
        betas.append(beta)
    config = {"algorithm": "em", "eta": eta, "T": T}
    return _finish_trace(betas, truth, config)


def clipped_dp_gradient_em(
    data: ObservationSet,
    model: ModelSpec,
    beta0,
    clip_C: float,
    eta: float,
    T: int,
    budget: PrivacyBudget,
    rng: RngStream,
    truth=None,
    disable_noise: bool = False,
) -> IterationTrace:
    """Per-sample gradients rescaled to norm <= clip_C, averaged, plus
    per-coordinate Gaussian noise; the full dataset is reused every
    iteration, so the T releases compose sequentially."""
    beta = _check_run(data, model, beta0)
    clip_C = check_positive("clip_C", clip_C)
    eta = check_positive("eta", eta)
    T = check_count("T", T)
    n = data.n
    # one averaged d-vector per iteration, L2 sensitivity 2 clip_C / n
    sigma = gaussian_sigma_for_zcdp(2.0 * clip_C / n, split_budget_alg1(budget, T))
    betas = [beta]
    for t in range(1, T + 1):
        grads = grad_q_batch(model, data, beta)
        norms = np.linalg.norm(grads, axis=1)
        with np.errstate(divide="ignore"):
            scale = np.minimum(1.0, clip_C / np.where(norms > 0, norms, np.inf))
        mean_grad = (grads * scale[:, None]).mean(axis=0)
        if disable_noise:
            noise = np.zeros(model.d)
        else:
            gen = rng.split(t).generator
            noise = sigma * gen.standard_normal(model.d)
        beta = beta + eta * (mean_grad + noise)
        betas.append(beta)
    config = {
        "algorithm": "clipped",
        "clip_C": clip_C,
        "eta": eta,
        "T": T,
        "eps": budget.eps,
        "delta": budget.delta,
        "sigma_iter": sigma,
        "non_private_noise_disabled": bool(disable_noise),
    }
    return _finish_trace(betas, truth, config)


def dp_gradient_em(
    data: ObservationSet,
    model: ModelSpec,
    beta0,
    tau: float,
    eta: float,
    T: int,
    budget: PrivacyBudget,
    zeta: float,
    rng: RngStream,
    truth=None,
    shuffle: bool = True,
    disable_noise: bool = False,
) -> IterationTrace:
    """Gradient EM with per-coordinate robust-smoothed means on disjoint
    subsets.

    The data is split (after an optional seeded shuffle) into T subsets of
    m = floor(n/T) samples; iteration t releases, for each coordinate, the
    smoothed robust mean of that subset's gradients plus N(0, sigma^2) with
    sigma^2 = 16 s^2 d / (9 m^2 eps_tilde^2).  Disjointness makes the
    iterations compose in parallel, so only the d coordinates split rho.
    """
    beta = _check_run(data, model, beta0)
    tau = check_positive("tau", tau)
    eta = check_positive("eta", eta)
    T = check_count("T", T)
    zeta = check_probability("zeta", zeta)
    n = data.n
    if n < T:
        raise DomainError(f"need n >= T, got n={n}, T={T}")
    d = model.d
    m = n // T
    log_term = math.log(d / zeta)
    s = math.sqrt(m * tau * budget.eps_tilde) / (2.0 * log_term)
    params = RobustMeanParams(s=s, beta=math.sqrt(log_term), tau=tau, zeta=zeta)
    sigma = gaussian_sigma_for_zcdp(2.0 * PHI_BOUND * s / m, split_budget_alg2(budget, d, T))

    if shuffle:
        order = rng.split(0).generator.permutation(n)
    else:
        order = np.arange(n)
    subsets = order[: m * T].reshape(T, m)  # trailing n - mT samples unused

    betas = [beta]
    for t in range(1, T + 1):
        subset = data.take(subsets[t - 1])
        grads = grad_q_batch(model, subset, beta)
        released = robust_mean_columns(grads, params)
        if not disable_noise:
            stream_t = rng.split(t)
            released = released + np.array(
                [sample_gaussian(stream_t.split(j), 0.0, sigma) for j in range(d)]
            )
        beta = beta + eta * released
        betas.append(beta)
    config = {
        "algorithm": "dpgem",
        "tau": tau,
        "eta": eta,
        "T": T,
        "eps": budget.eps,
        "delta": budget.delta,
        "zeta": zeta,
        "s": s,
        "smoothing_beta": params.beta,
        "m": m,
        "sigma_coord": sigma,
        "shuffle": bool(shuffle),
        "non_private_noise_disabled": bool(disable_noise),
    }
    return _finish_trace(betas, truth, config)


def dp_em_gmm(
    data: ObservationSet,
    model: ModelSpec,
    beta0,
    tau: float,
    T: int,
    budget: PrivacyBudget,
    zeta: float,
    rng: RngStream,
    truth=None,
    disable_noise: bool = False,
) -> IterationTrace:
    """Private EM for the two-component mixture: beta^t is the noisy
    per-coordinate robust-smoothed mean of the fixed-point map over the
    full dataset (no step size).  Reusing all n samples every iteration
    costs sequential composition over the T*d releases, so
    sigma^2 = 16 s^2 d T / (9 n^2 eps_tilde^2)."""
    if model.kind != "gmm":
        raise DomainError(f"dp_em_gmm requires the gmm model, got {model.kind!r}")
    beta = _check_run(data, model, beta0)
    tau = check_positive("tau", tau)
    T = check_count("T", T)
    zeta = check_probability("zeta", zeta)
    n, d = data.n, model.d
    log_term = math.log(d / zeta)
    s = math.sqrt(n * tau * budget.eps_tilde) / (2.0 * log_term)
    params = RobustMeanParams(s=s, beta=math.sqrt(log_term), tau=tau, zeta=zeta)
    rho_release = split_budget_alg1(budget, T) / d
    sigma = gaussian_sigma_for_zcdp(2.0 * PHI_BOUND * s / n, rho_release)

    betas = [beta]
    for t in range(1, T + 1):
        values = f_gmm_batch(data, beta, model.sigma)
        released = robust_mean_columns(values, params)
        if not disable_noise:
            stream_t = rng.split(t)
            released = released + np.array(
                [sample_gaussian(stream_t.split(j), 0.0, sigma) for j in range(d)]
            )
        beta = released
        betas.append(beta)
    config = {
        "algorithm": "dpem",
        "tau": tau,
        "T": T,
        "eps": budget.eps,
        "delta": budget.delta,
        "zeta": zeta,
        "s": s,
        "smoothing_beta": params.beta,
        "sigma_coord": sigma,
        "non_private_noise_disabled": bool(disable_noise),
    }
    return _finish_trace(betas, truth, config)


def _auto_iterations(n: int) -> int:
    return max(1, math.ceil(math.log(n)))


def _build_observations(kind: str, X, y) -> ObservationSet:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DomainError(f"X must be 2-d, got shape {X.shape}")
    if kind == "gmm":
        if y is not None:
            raise DomainError("gmm takes no response argument")
        return ObservationSet("gmm", X)
    if y is None:
        raise DomainError(f"{kind} requires a response vector y")
    y = np.asarray(y, dtype=float)
    if kind == "mrm":
        return ObservationSet("mrm", y, X)
    mask = ~np.isnan(X)  # NaN marks a missing covariate coordinate
    return ObservationSet("rmc", y, np.where(mask, X, 0.0), mask)


class _EMBase(BaseEstimator):
    """Shared fit plumbing; subclasses implement _run."""

    def _model_spec(self, d: int) -> ModelSpec:
        return ModelSpec(self.model, d, self.sigma, getattr(self, "p_m", 0.0))

    def _beta0(self, d: int, root: RngStream) -> np.ndarray:
        if isinstance(self.init, str):
            if self.init != "random":
                raise ConfigError(f"init must be 'random' or a vector, got {self.init!r}")
            return initial_beta(d, root.split(0))
        return check_vector("init", self.init, d=d)

    def _iterations(self, n: int):
        if isinstance(self.n_iter, str):
            if self.n_iter != "auto":
                raise ConfigError(f"n_iter must be 'auto' or an integer, got {self.n_iter!r}")
            return _auto_iterations(n)
        return self.n_iter

    def fit(self, X, y=None, beta_star=None):
        data = _build_observations(self.model, X, y)
        model = self._model_spec(data.d)
        root = RngStream(self.random_state)
        beta0 = self._beta0(data.d, root)
        truth = None if beta_star is None else np.asarray(beta_star, dtype=float)
        if truth is not None and model.kind in SIGN_SYMMETRIC_KINDS:
            beta0 = align_sign(beta0, truth)
        trace = self._run(data, model, beta0, root.split(1), truth)
        self.n_features_in_ = data.d
        self.trace_ = trace
        self.beta_ = trace.betas[-1]
        self.n_iter_ = trace.betas.shape[0] - 1
        return self

    def _resolve_delta(self, n: int) -> float:
        if isinstance(self.delta, str):
            if self.delta != "auto":
                raise ConfigError(f"delta must be 'auto' or a float, got {self.delta!r}")
            return float(n) ** -1.1
        return float(self.delta)

    def _resolve_tau(self, model: ModelSpec, truth) -> float:
        if isinstance(self.tau, str):
            if self.tau != "auto":
                raise ConfigError(f"tau must be 'auto' or a float, got {self.tau!r}")
            if truth is None:
                raise ConfigError("tau='auto' needs beta_star passed to fit")
            beta_star = np.asarray(truth, dtype=float)
            return tau_bound(
                model,
                float(np.max(np.abs(beta_star))),
                float(np.linalg.norm(beta_star)),
            )
        return float(self.tau)


class GradientEM(_EMBase):
    """Non-private gradient EM."""

    def __init__(self, model="gmm", sigma=1.0, p_m=0.0, eta=1.0, n_iter="auto",
                 init="random", random_state=0):
        self.model = model
        self.sigma = sigma
        self.p_m = p_m
        self.eta = eta
        self.n_iter = n_iter
        self.init = init
        self.random_state = random_state

    def _run(self, data, model, beta0, rng, truth):
        return gradient_em(data, model, beta0, self.eta, self._iterations(data.n), truth)


class ClippedDPGradientEM(_EMBase):
    """Gradient EM privatized by per-sample clipping plus Gaussian noise."""

    def __init__(self, model="gmm", sigma=1.0, p_m=0.0, clip=1.0, eta=1.0,
                 n_iter="auto", eps=1.0, delta="auto", init="random",
                 random_state=0, unsafe_no_noise=False):
        self.model = model
        self.sigma = sigma
        self.p_m = p_m
        self.clip = clip
        self.eta = eta
        self.n_iter = n_iter
        self.eps = eps
        self.delta = delta
        self.init = init
        self.random_state = random_state
        self.unsafe_no_noise = unsafe_no_noise

    def _run(self, data, model, beta0, rng, truth):
        budget = make_budget(self.eps, self._resolve_delta(data.n))
        return clipped_dp_gradient_em(
            data, model, beta0, self.clip, self.eta, self._iterations(data.n),
            budget, rng, truth, disable_noise=self.unsafe_no_noise,
        )


class DPGradientEM(_EMBase):
    """Gradient EM privatized by robust-smoothed means on disjoint subsets."""

    def __init__(self, model="gmm", sigma=1.0, p_m=0.0, tau="auto", eta=1.0,
                 n_iter="auto", eps=1.0, delta="auto", zeta=0.05, shuffle=True,
                 init="random", random_state=0, unsafe_no_noise=False):
        self.model = model
        self.sigma = sigma
        self.p_m = p_m
        self.tau = tau
        self.eta = eta
        self.n_iter = n_iter
        self.eps = eps
        self.delta = delta
        self.zeta = zeta
        self.shuffle = shuffle
        self.init = init
        self.random_state = random_state
        self.unsafe_no_noise = unsafe_no_noise

    def _run(self, data, model, beta0, rng, truth):
        budget = make_budget(self.eps, self._resolve_delta(data.n))
        return dp_gradient_em(
            data, model, beta0, self._resolve_tau(model, truth), self.eta,
            self._iterations(data.n), budget, self.zeta, rng, truth,
            shuffle=self.shuffle, disable_noise=self.unsafe_no_noise,
        )


class DPEMGaussianMixture(_EMBase):
    """Private EM for the two-component Gaussian mixture."""

    def __init__(self, sigma=1.0, tau="auto", n_iter="auto", eps=1.0,
                 delta="auto", zeta=0.05, init="random", random_state=0,
                 unsafe_no_noise=False):
        self.model = "gmm"
        self.sigma = sigma
        self.tau = tau
        self.n_iter = n_iter
        self.eps = eps
        self.delta = delta
        self.zeta = zeta
        self.init = init
        self.random_state = random_state
        self.unsafe_no_noise = unsafe_no_noise

    def _run(self, data, model, beta0, rng, truth):
        budget = make_budget(self.eps, self._resolve_delta(data.n))
        return dp_em_gmm(
            data, model, beta0, self._resolve_tau(model, truth),
            self._iterations(data.n), budget, self.zeta, rng, truth,
            disable_noise=self.unsafe_no_noise,
        )
