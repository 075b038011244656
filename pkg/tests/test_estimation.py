"""Estimation tests: the likelihood sandwich, the profile objective against
hand-built noise-free trajectories, grid posteriors, missing data, and exact
plant-and-recover."""
import math

import numpy as np
import pytest

from incentive_design.boxes import Boxes
from incentive_design.dynamics import (
    MotivationalState,
    ParticipantTraits,
    WeekOutcome,
    between_week_update,
    optimal_plan,
    roll_weights,
)
from incentive_design.estimation import (
    PARAM_NAMES,
    EstimationConfig,
    ObservationSet,
    PosteriorGrid,
    eval_eta,
    observations_from_trajectory,
    param_boxes,
    solve_smle,
    surrogate_bound_check,
    surrogate_posterior,
    theta_to_vector,
    vector_to_theta,
)

BOXES = Boxes()
TRAITS = ParticipantTraits(b=0.9984448243105064, c=1.0 / 3500.0,
                           k=-0.2974285714285714, A=500.0, sigma=0.05,
                           gamma_p=0.5)


def _forward_plant(w00, theta0, g_plan, rewards, traits=TRAITS):
    """Noise-free forward simulation with a prescribed recording sequence,
    built from the dynamics module only (independent of the estimator's
    internals)."""
    T = len(g_plan)
    w = np.empty((T, 7))
    theta = theta0
    w_start = w00
    for t in range(T):
        c = optimal_plan(theta, traits, BOXES)
        if t > 0:
            w_start = traits.b * w_start + traits.c * c[0] + traits.k
        w[t] = roll_weights(w_start, c, traits, BOXES)
        outcome = WeekOutcome(
            w_path=w[t], f_path=c, c_path=c, g=int(g_plan[t]),
            lost_weight=int(w[t, 0] - w[t, 6] > 0.0),
            r_w=float(rewards[t, 0]), r_c=float(rewards[t, 1]),
        )
        theta = between_week_update(theta, outcome, traits, BOXES)
        w_start = w[t, 6]
    return w


def _p_path_value(p0, k, gamma_p=0.5, p_b=0.5):
    p = p0
    for _ in range(k):
        p = gamma_p * (p - p_b) + p_b
    return p


def _plant(T=8, seed=0):
    """Noise-free plant designed so the truth is the strict objective
    minimum: the initial recording probability sits at the box floor, the
    threshold equals an attained probability-path value, and a high start
    weight makes every week a decisive loss."""
    rng = np.random.default_rng(seed)
    theta0 = MotivationalState(a1=4.0, a2=2.0, p=BOXES.P.lo,
                               B=_p_path_value(BOXES.P.lo, 4),
                               f_b=2400.0, r_hat=15.0, k1=0.5, k2=0.25,
                               k_p=0.0)
    g = np.zeros(T, dtype=int)
    g[T - 2] = 1
    rewards = np.column_stack([
        rng.choice([0.0, 10.0, 20.0, 30.0], size=T),
        rng.choice([0.0, 5.0, 15.0], size=T),
    ])
    w00 = 300.0     # far above the calorie equilibrium: every week loses
    w = _forward_plant(w00, theta0, g, rewards)
    obs = ObservationSet(weights=w, g=g, r_w=rewards[:, 0], r_c=rewards[:, 1])
    return w00, theta0, obs


class TestSandwich:
    def test_worked_value(self):
        lower, mid, upper = surrogate_bound_check(0.5, 1, 0.1)
        assert lower == pytest.approx(0.5268, abs=1e-3)
        assert mid == pytest.approx(0.6931, abs=1e-3)
        assert upper == pytest.approx(1.2792, abs=1e-3)

    def test_fuzz_no_violations(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            eps = float(rng.uniform(1e-3, 0.49))
            p = float(rng.uniform(eps, 1.0 - eps))
            g = int(rng.integers(0, 2))
            lower, mid, upper = surrogate_bound_check(p, g, eps)
            assert lower <= mid + 1e-12 <= upper + 2e-12

    def test_domain_enforced(self):
        with pytest.raises(ValueError):
            surrogate_bound_check(0.01, 1, 0.05)


class TestVectors:
    def test_round_trip(self):
        w00, theta = 222.0, MotivationalState(
            a1=1.0, a2=2.0, p=0.3, B=0.4, f_b=1900.0, r_hat=7.0,
            k1=0.1, k2=0.2, k_p=0.3)
        v = theta_to_vector(w00, theta)
        w2, t2 = vector_to_theta(v)
        assert w2 == w00 and t2 == theta

    def test_param_boxes_align_with_names(self):
        names = [n for n, _ in param_boxes(BOXES)]
        assert tuple(names) == PARAM_NAMES


class TestObservationSet:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ObservationSet(weights=np.zeros((3, 6)), g=np.zeros(3, dtype=int),
                           r_w=np.zeros(3), r_c=np.zeros(3))
        with pytest.raises(ValueError):
            ObservationSet(weights=np.zeros((3, 7)), g=np.zeros(2, dtype=int),
                           r_w=np.zeros(3), r_c=np.zeros(3))

    def test_binary_g_enforced(self):
        with pytest.raises(ValueError):
            ObservationSet(weights=np.full((2, 7), 200.0),
                           g=np.array([0, 2]), r_w=np.zeros(2), r_c=np.zeros(2))

    def test_from_trajectory_exact_when_noise_free(self):
        w = np.full((3, 7), 200.0)
        g = np.array([1, 0, 1])
        obs = observations_from_trajectory(w, g, np.zeros(3), np.zeros(3))
        assert np.array_equal(obs.weights, w)
        assert np.array_equal(obs.g, g)

    def test_from_trajectory_missingness(self):
        w = np.full((50, 7), 200.0)
        g = np.zeros(50, dtype=int)
        obs = observations_from_trajectory(
            w, g, np.zeros(50), np.zeros(50),
            rng=np.random.default_rng(0), p_obs=0.5, p_end=1.0)
        interior = obs.weights[:, 1:6]
        assert 0.3 < np.mean(np.isnan(interior)) < 0.7
        assert not np.any(np.isnan(obs.weights[:, 0]))
        assert not np.any(np.isnan(obs.weights[:, 6]))

    def test_from_trajectory_requires_rng_for_noise(self):
        w = np.full((2, 7), 200.0)
        with pytest.raises(ValueError):
            observations_from_trajectory(w, np.zeros(2, dtype=int),
                                         np.zeros(2), np.zeros(2), sigma=1.0)


ZERO_CFG = EstimationConfig(inner="zero")
LP_CFG = EstimationConfig(inner="lp")


class TestProfileObjective:
    def test_truth_scores_pure_surrogate_term(self):
        w00, theta0, obs = _plant()
        for cfg in (ZERO_CFG, LP_CFG):
            eta, detail = eval_eta(w00, theta0, obs, TRAITS, BOXES, cfg,
                                   return_detail=True)
            assert detail["w_term"] == pytest.approx(0.0, abs=1e-7)
            assert eta == pytest.approx(detail["g_term"], abs=1e-7)
            assert eta == pytest.approx(
                float(np.sum(np.abs(detail["p_path"] - obs.g))), abs=1e-7)

    def test_surrogate_term_is_a_floor(self):
        w00, theta0, obs = _plant()
        rng = np.random.default_rng(1)
        for _ in range(10):
            v = theta_to_vector(w00, theta0)
            v = v * rng.uniform(0.9, 1.1, size=10)
            w_p, th_p = vector_to_theta(np.clip(
                v, [b.lo for _, b in param_boxes(BOXES)],
                [b.hi for _, b in param_boxes(BOXES)]))
            eta, detail = eval_eta(w_p, th_p, obs, TRAITS, BOXES, ZERO_CFG,
                                   return_detail=True)
            assert eta >= detail["g_term"] - 1e-12

    def test_perturbed_truth_scores_worse(self):
        w00, theta0, obs = _plant()
        base = eval_eta(w00, theta0, obs, TRAITS, BOXES, ZERO_CFG)
        worse = eval_eta(w00 + 0.5, theta0, obs, TRAITS, BOXES, ZERO_CFG)
        assert worse > base + 1.0

    def test_unobserved_days_do_not_contribute(self):
        w00, theta0, obs = _plant()
        masked = obs.weights.copy()
        masked[2, 3] = np.nan
        corrupted = masked.copy()
        obs_masked = ObservationSet(weights=masked, g=obs.g,
                                    r_w=obs.r_w, r_c=obs.r_c)
        eta_masked = eval_eta(w00, theta0, obs_masked, TRAITS, BOXES, ZERO_CFG)
        # a wildly different value behind the mask must not matter
        corrupted[2, 3] = np.nan
        base = eval_eta(w00, theta0, obs, TRAITS, BOXES, ZERO_CFG)
        assert eta_masked == pytest.approx(base, abs=1e-9)

    def test_contradicted_loss_weeks_infeasible_in_lp_mode(self):
        # data shows decisive weekly losses, but the candidate parameters
        # (huge intake, tiny calorie noise) can only gain weight
        w00, theta0, obs = _plant(T=4)
        tight = ParticipantTraits(b=TRAITS.b, c=TRAITS.c, k=TRAITS.k,
                                  A=50.0, sigma=0.05, gamma_p=0.5)
        gainer = MotivationalState(a1=0.0, a2=0.0, p=theta0.p, B=theta0.B,
                                   f_b=4000.0, r_hat=0.0, k1=0.0, k2=0.0,
                                   k_p=0.0)
        cfg = EstimationConfig(inner="lp")
        assert eval_eta(100.0, gainer, obs, tight, BOXES, cfg,
                        on_infeasible="inf") == math.inf
        with pytest.raises(RuntimeError):
            eval_eta(100.0, gainer, obs, tight, BOXES, cfg)

    def test_lp_inner_absorbs_small_noise(self):
        w00, theta0, obs = _plant()
        noise = np.random.default_rng(3).uniform(
            -0.005, 0.005, size=obs.weights.shape)
        obs_n = ObservationSet(weights=obs.weights + noise, g=obs.g,
                               r_w=obs.r_w, r_c=obs.r_c)
        eta_lp, detail = eval_eta(w00, theta0, obs_n, TRAITS, BOXES, LP_CFG,
                                  return_detail=True)
        # latent calorie noise explains every cell except the very first
        # morning, whose weight is pinned to the initial condition
        assert detail["w_term"] == pytest.approx(
            abs(noise[0, 0]) / TRAITS.sigma, abs=1e-6)


class TestSolver:
    def test_exact_recovery_with_truth_in_seed_grid(self):
        w00, theta0, obs = _plant(T=12, seed=5)
        truth = theta_to_vector(w00, theta0)
        rng = np.random.default_rng(9)
        pb = param_boxes(BOXES)
        seeds = rng.uniform([b.lo for _, b in pb], [b.hi for _, b in pb],
                            size=(20, 10))
        seeds[7] = truth
        cfg = EstimationConfig(inner="zero", n_starts=4, n_refine=2, sweeps=4,
                               seed_points=seeds, seed=0)
        res = solve_smle(obs, TRAITS, BOXES, cfg)
        got = theta_to_vector(res.w00_hat, res.theta0_hat)
        assert np.max(np.abs(got - truth)) == 0.0

    def test_deterministic(self):
        w00, theta0, obs = _plant(T=6, seed=2)
        cfg = EstimationConfig(inner="zero", n_starts=4, n_refine=1, sweeps=2,
                               seed=3)
        a = solve_smle(obs, TRAITS, BOXES, cfg)
        b = solve_smle(obs, TRAITS, BOXES, cfg)
        assert np.array_equal(theta_to_vector(a.w00_hat, a.theta0_hat),
                              theta_to_vector(b.w00_hat, b.theta0_hat))
        assert a.objective == b.objective

    def test_warm_start_is_a_candidate(self):
        w00, theta0, obs = _plant(T=8, seed=4)
        cfg = EstimationConfig(inner="zero", n_starts=2, n_refine=1, sweeps=1,
                               seed=1)
        truth = theta_to_vector(w00, theta0)
        res = solve_smle(obs, TRAITS, BOXES, cfg, x0=truth)
        # the planted optimum cannot be beaten, so the warm start must win
        assert res.objective <= eval_eta(w00, theta0, obs, TRAITS, BOXES,
                                         cfg) + 1e-12


class TestPosterior:
    def test_grid_weights_are_softmax_of_objective(self):
        w00, theta0, obs = _plant(T=6, seed=1)
        spec = {name: [getattr(theta0, name)] for name in PARAM_NAMES
                if name != "w00"}
        spec["w00"] = [w00 - 1.0, w00, w00 + 1.0]
        grid = surrogate_posterior(obs, TRAITS, BOXES, spec,
                                   config=ZERO_CFG)
        assert grid.weights.sum() == pytest.approx(1.0)
        expect = np.exp(-(grid.eta - grid.eta.min()))
        expect /= expect.sum()
        assert grid.weights == pytest.approx(expect)
        assert grid.points[grid.map_index][0] == w00

    def test_two_cell_analytic_weights(self):
        grid = PosteriorGrid(
            axes={"w00": np.array([0.0, 1.0])},
            points=np.zeros((2, 10)),
            eta=np.array([0.0, math.log(3.0)]),
            weights=np.array([0.75, 0.25]),
        )
        raw = np.exp(-grid.eta)
        assert raw / raw.sum() == pytest.approx(grid.weights)

    def test_cell_budget_enforced(self):
        w00, theta0, obs = _plant(T=4, seed=1)
        spec = {name: np.linspace(0.1, 0.9, 6) for name in PARAM_NAMES}
        with pytest.raises(ValueError):
            surrogate_posterior(obs, TRAITS, BOXES, spec, cell_budget=1000)


class TestZeroEvalParity:
    """The jitted zero-disturbance objective must agree with the pure-Python
    reference on value, fitted weights, indicator path, and probability
    path across random parameters and partially observed data."""

    def test_jit_matches_reference(self):
        from incentive_design.estimation import (
            _l1_candidates,
            _zero_eval,
            _zero_eval_python,
        )

        rng = np.random.default_rng(17)
        pb = param_boxes(BOXES)
        for trial in range(60):
            T = int(rng.integers(2, 12))
            x = np.array([
                rng.uniform(b.lo, min(b.hi, b.lo + (b.hi - b.lo)
                                      * 10.0 ** rng.uniform(-6, 0)))
                for _, b in pb
            ])
            w00, theta0 = vector_to_theta(x)
            weights = rng.uniform(100.0, 350.0, size=(T, 7))
            weights[rng.random((T, 7)) < 0.3] = np.nan
            if np.all(np.isnan(weights)):
                weights[0, 0] = 200.0
            obs = ObservationSet(
                weights=weights,
                g=rng.integers(0, 2, size=T),
                r_w=rng.choice([0.0, 10.0, 30.0], size=T),
                r_c=rng.choice([0.0, 15.0], size=T),
            )
            l1_init, _ = _l1_candidates(obs, 2.0 * TRAITS.sigma)
            va, wa, la, pa = _zero_eval_python(w00, theta0, obs, TRAITS,
                                               BOXES, l1_init)
            vb, wb, lb, pbp = _zero_eval(w00, theta0, obs, TRAITS, BOXES,
                                         l1_init)
            assert vb == pytest.approx(va, rel=1e-8, abs=1e-8)
            np.testing.assert_allclose(wb, wa, rtol=1e-9, atol=1e-7)
            np.testing.assert_array_equal(lb, la)
            np.testing.assert_allclose(pbp, pa, rtol=1e-12, atol=1e-12)
