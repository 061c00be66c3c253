import math

import numpy as np
import pytest

from dpem.accounting import make_budget
from dpem.errors import ConfigError, DomainError
from dpem.estimators import (
    ClippedDPGradientEM,
    DPEMGaussianMixture,
    DPGradientEM,
    GradientEM,
    IterationTrace,
    SIGN_SYMMETRIC_KINDS,
    align_sign,
    clipped_dp_gradient_em,
    dp_em_gmm,
    dp_gradient_em,
    estimation_error,
    gradient_em,
    initial_beta,
)
from dpem.models import ModelSpec, grad_q_batch, sample_observations, tau_bound
from dpem.numeric import RngStream
from dpem.robust import PHI_BOUND, RobustMeanParams, robust_mean_columns


def make_problem(kind, d, n, seed, snr=3.0, sigma=1.0, p_m=0.0):
    root = RngStream(seed)
    model = ModelSpec(kind, d, sigma, p_m=p_m)
    beta_star = snr * sigma * initial_beta(d, root.split(0))
    data = sample_observations(model, n, beta_star, root.split(1))
    beta0 = initial_beta(d, root.split(2))
    if kind in SIGN_SYMMETRIC_KINDS:
        beta0 = align_sign(beta0, beta_star)
    return model, beta_star, data, beta0, root.split(3)


def auto_tau(model, beta_star):
    return tau_bound(
        model, float(np.max(np.abs(beta_star))), float(np.linalg.norm(beta_star))
    )


class TestIterationTrace:
    def test_shape_enforced(self):
        with pytest.raises(DomainError):
            IterationTrace(np.zeros(3), None, {})
        with pytest.raises(DomainError):
            IterationTrace(np.zeros((0, 3)), None, {})

    def test_errors_validated(self):
        betas = np.zeros((3, 2))
        with pytest.raises(DomainError):
            IterationTrace(betas, np.zeros(2), {})
        with pytest.raises(DomainError):
            IterationTrace(betas, np.array([0.0, -1.0, 0.0]), {})

    def test_final_accessors(self):
        tr = IterationTrace(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([2.0, 1.0]), {})
        assert np.array_equal(tr.final_beta, [1.0, 1.0])
        assert tr.final_error == 1.0

    def test_final_error_needs_truth(self):
        tr = IterationTrace(np.zeros((2, 2)), None, {})
        with pytest.raises(DomainError):
            tr.final_error

    def test_immutable(self):
        tr = IterationTrace(np.zeros((2, 2)), None, {})
        with pytest.raises(ValueError):
            tr.betas[0, 0] = 1.0


class TestEstimationError:
    def test_zero_at_equal(self):
        assert estimation_error([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_pythagorean(self):
        assert estimation_error([3.0, 4.0], [0.0, 0.0]) == 5.0

    def test_rotation_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            d = int(rng.integers(2, 8))
            a, b = rng.standard_normal(d), rng.standard_normal(d)
            Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            assert estimation_error(Q @ a, Q @ b) == pytest.approx(
                estimation_error(a, b), abs=1e-12
            )

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            estimation_error([1.0], [1.0, 2.0])


class TestInit:
    def test_unit_norm_deterministic(self):
        b1 = initial_beta(7, RngStream(5).split(0))
        b2 = initial_beta(7, RngStream(5).split(0))
        assert np.array_equal(b1, b2)
        assert np.linalg.norm(b1) == pytest.approx(1.0, rel=1e-12)

    def test_align_sign(self):
        ref = np.array([1.0, 0.0])
        assert np.array_equal(align_sign(np.array([-0.5, 1.0]), ref), [0.5, -1.0])
        same = np.array([0.5, 1.0])
        assert align_sign(same, ref) is same
        # orthogonal start is left alone
        orth = np.array([0.0, 1.0])
        assert align_sign(orth, ref) is orth


class TestGradientEM:
    def test_t_zero_trace_is_start(self):
        model, beta_star, data, beta0, _ = make_problem("gmm", 3, 100, 1)
        tr = gradient_em(data, model, beta0, 1.0, 0, truth=beta_star)
        assert tr.betas.shape == (1, 3)
        assert np.array_equal(tr.betas[0], beta0)

    def test_noiseless_gmm_converges_to_conditional_mean(self):
        root = RngStream(17)
        model = ModelSpec("gmm", 4, 1e-12)
        beta_star = 2.0 * initial_beta(4, root.split(0))
        data = sample_observations(model, 500, beta_star, root.split(1))
        beta0 = beta_star + 0.05 * initial_beta(4, root.split(2))
        tr = gradient_em(data, model, beta0, 1.0, 50, truth=beta_star)
        assert tr.errors[-1] < 1e-6
        cond = (np.sign(data.ys @ beta_star)[:, None] * data.ys).mean(axis=0)
        assert np.linalg.norm(tr.betas[-1] - cond) < 1e-9

    def test_median_error_random_init(self):
        errs = []
        for k in range(20):
            model, beta_star, data, beta0, _ = make_problem("gmm", 10, 2000, 100 + k)
            tr = gradient_em(data, model, beta0, 1.0, 50, truth=beta_star)
            errs.append(tr.errors[-1])
        assert np.median(errs) <= 0.2 * 3.0

    def test_mismatched_data_rejected(self):
        model, beta_star, data, beta0, _ = make_problem("gmm", 3, 50, 2)
        other = ModelSpec("mrm", 3, 1.0)
        with pytest.raises(DomainError):
            gradient_em(data, other, beta0, 1.0, 1)
        with pytest.raises(DomainError):
            gradient_em(data, ModelSpec("gmm", 4, 1.0), np.zeros(4), 1.0, 1)


class TestClippedDP:
    def test_identity_when_clip_slack_and_no_noise(self):
        model, beta_star, data, beta0, rng = make_problem("gmm", 4, 300, 3)
        budget = make_budget(1.0, 1e-5)
        plain = gradient_em(data, model, beta0, 0.7, 6)
        clipped = clipped_dp_gradient_em(
            data, model, beta0, 1e12, 0.7, 6, budget, rng, disable_noise=True
        )
        assert np.array_equal(plain.betas, clipped.betas)

    def test_clip_invariant(self):
        # re-walk the trajectory and verify every rescaled gradient norm
        model, beta_star, data, beta0, rng = make_problem("mrm", 5, 400, 4)
        C = 0.5
        budget = make_budget(1.0, 1e-5)
        tr = clipped_dp_gradient_em(
            data, model, beta0, C, 1.0, 5, budget, rng, truth=beta_star
        )
        for beta in tr.betas[:-1]:
            grads = grad_q_batch(model, data, beta)
            norms = np.linalg.norm(grads, axis=1)
            scale = np.minimum(1.0, C / np.where(norms > 0, norms, np.inf))
            clipped = np.linalg.norm(grads * scale[:, None], axis=1)
            assert np.all(clipped <= C * (1 + 1e-12))

    def test_deterministic(self):
        model, beta_star, data, beta0, _ = make_problem("gmm", 3, 200, 5)
        budget = make_budget(0.5, 1e-4)
        a = clipped_dp_gradient_em(data, model, beta0, 1.0, 1.0, 4, budget, RngStream(9))
        b = clipped_dp_gradient_em(data, model, beta0, 1.0, 1.0, 4, budget, RngStream(9))
        c = clipped_dp_gradient_em(data, model, beta0, 1.0, 1.0, 4, budget, RngStream(10))
        assert np.array_equal(a.betas, b.betas)
        assert not np.array_equal(a.betas, c.betas)

    def test_config_echo(self):
        model, beta_star, data, beta0, rng = make_problem("gmm", 3, 200, 6)
        budget = make_budget(0.5, 1e-4)
        tr = clipped_dp_gradient_em(data, model, beta0, 2.0, 1.0, 4, budget, rng)
        cfg = tr.config
        assert cfg["algorithm"] == "clipped" and cfg["clip_C"] == 2.0
        assert cfg["sigma_iter"] == pytest.approx(
            2.0 * math.sqrt(2 * 4) / (200 * budget.eps_tilde), rel=1e-12
        )


class TestDPGradientEM:
    def test_needs_enough_samples(self):
        model, beta_star, data, beta0, rng = make_problem("gmm", 3, 5, 7)
        budget = make_budget(1.0, 1e-5)
        with pytest.raises(DomainError):
            dp_gradient_em(data, model, beta0, 1.0, 1.0, 6, budget, 0.05, rng)

    def test_positive_tau_required(self):
        model, beta_star, data, beta0, rng = make_problem("gmm", 3, 50, 8)
        budget = make_budget(1.0, 1e-5)
        with pytest.raises(DomainError):
            dp_gradient_em(data, model, beta0, 0.0, 1.0, 2, budget, 0.05, rng)

    def test_noiseless_single_iteration_is_robust_step(self):
        model, beta_star, data, beta0, rng = make_problem("gmm", 4, 600, 9)
        budget = make_budget(1.0, 1e-4)
        tau = auto_tau(model, beta_star)
        tr = dp_gradient_em(
            data, model, beta0, tau, 1.0, 1, budget, 0.05, rng,
            shuffle=False, disable_noise=True,
        )
        s = math.sqrt(600 * tau * budget.eps_tilde) / (2 * math.log(4 / 0.05))
        params = RobustMeanParams(s=s, beta=math.sqrt(math.log(4 / 0.05)), tau=tau, zeta=0.05)
        expected = beta0 + robust_mean_columns(grad_q_batch(model, data, beta0), params)
        assert np.array_equal(tr.betas[1], expected)

    def test_noiseless_reduction_to_gradient_em(self):
        # huge tau makes truncation a no-op; T=1 uses the full dataset
        model, beta_star, data, beta0, rng = make_problem("gmm", 5, 2000, 10)
        budget = make_budget(1.0, 2000.0 ** -1.1)
        dp = dp_gradient_em(
            data, model, beta0, 1e8, 1.0, 1, budget, 0.05, rng,
            truth=beta_star, disable_noise=True,
        )
        plain = gradient_em(data, model, beta0, 1.0, 1, truth=beta_star)
        assert float(np.max(np.abs(dp.betas[-1] - plain.betas[-1]))) <= 1e-3

    def test_subset_sensitivity_audit(self):
        model, beta_star, data, beta0, rng = make_problem("mrm", 3, 300, 11)
        budget = make_budget(0.5, 1e-4)
        tau = auto_tau(model, beta_star)
        tr = dp_gradient_em(
            data, model, beta0, tau, 1.0, 3, budget, 0.05, rng, disable_noise=True
        )
        s, m = tr.config["s"], tr.config["m"]
        params = RobustMeanParams(
            s=s, beta=tr.config["smoothing_beta"], tau=tau, zeta=0.05
        )
        bound = 2.0 * PHI_BOUND * s / m
        gen = np.random.default_rng(0)
        grads = gen.standard_normal((m, 3)) * 3.0
        base = robust_mean_columns(grads, params)
        for _ in range(50):
            swapped = grads.copy()
            swapped[gen.integers(m)] = gen.standard_normal(3) * 50.0
            other = robust_mean_columns(swapped, params)
            assert np.all(np.abs(other - base) <= bound + 1e-12)

    def test_trailing_samples_dropped(self):
        # n = 607, T = 3 -> m = 202; the last sample cannot influence the
        # run when it lands in the discarded tail (shuffle off: order kept)
        model, beta_star, data, beta0, rng = make_problem("gmm", 3, 607, 12)
        budget = make_budget(1.0, 1e-4)
        tau = auto_tau(model, beta_star)
        tr = dp_gradient_em(
            data, model, beta0, tau, 1.0, 3, budget, 0.05, RngStream(3),
            shuffle=False, disable_noise=True,
        )
        ys = data.ys.copy()
        ys[-1] = 999.0
        from dpem.models import ObservationSet

        tampered = ObservationSet("gmm", ys)
        tr2 = dp_gradient_em(
            tampered, model, beta0, tau, 1.0, 3, budget, 0.05, RngStream(3),
            shuffle=False, disable_noise=True,
        )
        assert np.array_equal(tr.betas, tr2.betas)

    def test_deterministic_all_models(self):
        budget = make_budget(0.5, 1e-4)
        for kind, p in (("gmm", 0.0), ("mrm", 0.0), ("rmc", 0.2)):
            model, beta_star, data, beta0, _ = make_problem(kind, 3, 240, 13, p_m=p)
            tau = auto_tau(model, beta_star)
            a = dp_gradient_em(data, model, beta0, tau, 1.0, 4, budget, 0.05, RngStream(7))
            b = dp_gradient_em(data, model, beta0, tau, 1.0, 4, budget, 0.05, RngStream(7))
            assert np.array_equal(a.betas, b.betas)

    @pytest.mark.parametrize("kind,p_m", [("gmm", 0.0), ("mrm", 0.0), ("rmc", 0.2)])
    def test_monotone_privacy(self, kind, p_m):
        finals = {}
        for eps in (0.2, 1.0):
            errs = []
            for k in range(20):
                model, beta_star, data, beta0, rng = make_problem(
                    kind, 10, 2000, 500 + k, p_m=p_m
                )
                budget = make_budget(eps, 2000.0 ** -1.1)
                tau = auto_tau(model, beta_star)
                tr = dp_gradient_em(
                    data, model, beta0, tau, 1.0, 8, budget, 0.05, rng, truth=beta_star
                )
                errs.append(tr.errors[-1])
            finals[eps] = float(np.mean(errs))
        assert finals[1.0] <= finals[0.2]


class TestDPEMGmm:
    def test_requires_gmm(self):
        model, beta_star, data, beta0, rng = make_problem("mrm", 3, 100, 14)
        budget = make_budget(1.0, 1e-4)
        with pytest.raises(DomainError):
            dp_em_gmm(data, model, beta0, 1.0, 2, budget, 0.05, rng)

    def test_noiseless_iteration_near_fixed_point(self):
        root = RngStream(42)
        model = ModelSpec("gmm", 5, 1e-9)
        beta_star = 3.0 * initial_beta(5, root.split(0))
        data = sample_observations(model, 2000, beta_star, root.split(1))
        beta0 = align_sign(initial_beta(5, root.split(2)), beta_star)
        budget = make_budget(0.5, 2000.0 ** -1.1)
        tau = auto_tau(model, beta_star)
        tr = dp_em_gmm(
            data, model, beta0, tau, 1, budget, 0.05, root.split(3),
            truth=beta_star, disable_noise=True,
        )
        cond = (np.sign(data.ys @ beta0)[:, None] * data.ys).mean(axis=0)
        # lands within truncation bias of the conditional-mean fixed point
        assert np.linalg.norm(tr.betas[1] - cond) <= 0.05 * np.linalg.norm(beta_star)
        assert tr.errors[1] <= 0.05 * np.linalg.norm(beta_star)

    def test_noiseless_unclipped_matches_unit_step_gradient_em(self):
        model, beta_star, data, beta0, rng = make_problem("gmm", 5, 2000, 15)
        budget = make_budget(1.0, 2000.0 ** -1.1)
        em = gradient_em(data, model, beta0, 1.0, 1)
        dp = dp_em_gmm(
            data, model, beta0, 1e8, 1, budget, 0.05, rng, disable_noise=True
        )
        assert float(np.max(np.abs(dp.betas[1] - em.betas[1]))) <= 1e-6

    def test_scaling_in_n(self):
        meds = {}
        for n in (2000, 8000):
            errs = []
            model = ModelSpec("gmm", 10, 1.0)
            T = math.ceil(math.log(n))
            budget = make_budget(0.5, float(n) ** -1.1)
            for k in range(20):
                r = RngStream(1000 + k)
                beta_star = 3.0 * initial_beta(10, r.split(0))
                data = sample_observations(model, n, beta_star, r.split(1))
                beta0 = align_sign(initial_beta(10, r.split(2)), beta_star)
                tau = auto_tau(model, beta_star)
                tr = dp_em_gmm(
                    data, model, beta0, tau, T, budget, 0.05, r.split(3), truth=beta_star
                )
                errs.append(tr.errors[-1])
            meds[n] = float(np.median(errs))
        assert 0.35 <= meds[8000] / meds[2000] <= 0.75

    def test_deterministic(self):
        model, beta_star, data, beta0, _ = make_problem("gmm", 4, 400, 16)
        budget = make_budget(0.5, 1e-4)
        tau = auto_tau(model, beta_star)
        a = dp_em_gmm(data, model, beta0, tau, 3, budget, 0.05, RngStream(8))
        b = dp_em_gmm(data, model, beta0, tau, 3, budget, 0.05, RngStream(8))
        assert np.array_equal(a.betas, b.betas)


class TestEstimatorClasses:
    def test_get_set_params_round_trip(self):
        est = DPGradientEM(eps=0.7, zeta=0.01)
        params = est.get_params()
        assert params["eps"] == 0.7 and params["zeta"] == 0.01
        est.set_params(eps=0.9)
        assert est.eps == 0.9
        with pytest.raises(ValueError):
            est.set_params(nonsense=1)

    def test_clone_by_params(self):
        est = ClippedDPGradientEM(clip=0.3, random_state=4)
        twin = ClippedDPGradientEM(**est.get_params())
        assert twin.get_params() == est.get_params()

    def test_fit_attributes_gmm(self):
        model, beta_star, data, beta0, _ = make_problem("gmm", 6, 300, 18)
        est = GradientEM(n_iter=7, random_state=3).fit(data.ys, beta_star=beta_star)
        assert est.n_features_in_ == 6
        assert est.n_iter_ == 7
        assert est.beta_.shape == (6,)
        assert est.trace_.errors is not None

    def test_fit_aligns_start_against_truth(self):
        model, beta_star, data, beta0, _ = make_problem("gmm", 6, 300, 19)
        est = GradientEM(n_iter=0, random_state=5).fit(data.ys, beta_star=beta_star)
        assert float(est.trace_.betas[0] @ beta_star) >= 0.0

    def test_fit_mrm_rmc_with_response(self):
        model, beta_star, data, _, _ = make_problem("mrm", 4, 300, 20)
        est = GradientEM(model="mrm", n_iter=3).fit(data.xs, data.ys, beta_star=beta_star)
        assert est.n_features_in_ == 4

        model, beta_star, data, _, _ = make_problem("rmc", 4, 300, 21, p_m=0.3)
        X = np.where(data.mask, data.xs, np.nan)
        est = DPGradientEM(model="rmc", p_m=0.3, eps=1.0).fit(
            X, data.ys, beta_star=beta_star
        )
        assert est.trace_.config["algorithm"] == "dpgem"

    def test_auto_iterations_and_delta(self):
        model, beta_star, data, _, _ = make_problem("gmm", 3, 2000, 22)
        est = DPGradientEM().fit(data.ys, beta_star=beta_star)
        assert est.n_iter_ == math.ceil(math.log(2000))
        assert est.trace_.config["delta"] == pytest.approx(2000.0 ** -1.1)

    def test_tau_auto_needs_truth(self):
        model, beta_star, data, _, _ = make_problem("gmm", 3, 100, 23)
        with pytest.raises(ConfigError):
            DPGradientEM().fit(data.ys)

    def test_explicit_tau_runs_without_truth(self):
        model, beta_star, data, _, _ = make_problem("gmm", 3, 100, 24)
        est = DPGradientEM(tau=5.0).fit(data.ys)
        assert est.trace_.errors is None

    def test_bad_init_and_iters(self):
        model, beta_star, data, _, _ = make_problem("gmm", 3, 100, 25)
        with pytest.raises(ConfigError):
            GradientEM(init="zeros").fit(data.ys)
        with pytest.raises(ConfigError):
            GradientEM(n_iter="many").fit(data.ys)

    def test_explicit_init_vector(self):
        model, beta_star, data, _, _ = make_problem("gmm", 3, 100, 26)
        start = np.array([1.0, 0.0, 0.0])
        est = GradientEM(init=start, n_iter=0).fit(data.ys)
        assert np.array_equal(est.trace_.betas[0], start)

    def test_unsafe_flag_echoed(self):
        model, beta_star, data, _, _ = make_problem("gmm", 3, 100, 27)
        est = DPEMGaussianMixture(tau=4.0, unsafe_no_noise=True).fit(data.ys)
        assert est.trace_.config["non_private_noise_disabled"] is True

    def test_dpem_class_rejects_model_override(self):
        est = DPEMGaussianMixture(tau=1.0)
        assert est.model == "gmm"
        assert "model" not in est.get_params()
