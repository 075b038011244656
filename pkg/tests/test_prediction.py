"""Forecasting tests: success probabilities, point and grid forecasts, and
ROC utilities against hand oracles."""
import numpy as np
import pytest

from incentive_design.boxes import Boxes
from incentive_design.dynamics import (
    MotivationalState,
    ParticipantTraits,
    PhysicalState,
    rollout,
)
from incentive_design.estimation import PosteriorGrid, theta_to_vector
from incentive_design.prediction import (
    Forecast,
    predict_final_weight,
    roc_auc,
    roc_curve,
    success_probability,
)

BOXES = Boxes()
TRAITS = ParticipantTraits(b=0.9984448243105064, c=1.0 / 3500.0,
                           k=-0.2974285714285714, A=500.0, sigma=2.0)
THETA = MotivationalState(a1=2.0, a2=3.0, p=0.6, B=0.45, f_b=2000.0,
                          r_hat=10.0, k1=0.3, k2=0.05, k_p=0.1)


class TestSuccessProbability:
    def test_hand_value(self):
        samples = np.array([190.0, 191.0, 199.0])
        initial = np.full(3, 200.0)
        # losses: 5%, 4.5%, 0.5% -> one of three meets the 5% bar
        assert success_probability(samples, initial, 0.05) == pytest.approx(1 / 3)

    def test_threshold_inclusive(self):
        assert success_probability(np.array([95.0]), np.array([100.0]),
                                   0.05) == 1.0


class TestPointForecast:
    def test_noise_free_equals_ce_rollout(self):
        future = np.tile([10.0, 5.0], (6, 1))
        fc = predict_final_weight((210.0, THETA), future, TRAITS, BOXES,
                                  noise_free=True)
        traj = rollout(THETA, PhysicalState(w=210.0), TRAITS, BOXES, future)
        assert fc.samples.shape == (1,)
        assert fc.samples[0] == pytest.approx(traj.final_weight)
        assert fc.p_success in (0.0, 1.0)
        assert fc.horizon_weeks == 6

    def test_stochastic_needs_rng(self):
        with pytest.raises(ValueError):
            predict_final_weight((210.0, THETA), np.zeros((2, 2)), TRAITS,
                                 BOXES)

    def test_stochastic_samples_scatter_around_ce(self):
        future = np.zeros((4, 2))
        fc = predict_final_weight((210.0, THETA), future, TRAITS, BOXES,
                                  n_samples=200,
                                  rng=np.random.default_rng(0))
        traj = rollout(THETA, PhysicalState(w=210.0), TRAITS, BOXES, future)
        assert fc.samples.shape == (200,)
        assert abs(np.mean(fc.samples) - traj.final_weight) < 1.0
        assert np.std(fc.samples) > 0.0


class TestGridForecast:
    def _grid(self):
        light = theta_to_vector(150.0, THETA)
        heavy = theta_to_vector(350.0, THETA)
        return PosteriorGrid(
            axes={}, points=np.vstack([light, heavy]),
            eta=np.array([0.0, np.log(3.0)]),
            weights=np.array([0.75, 0.25]),
        )

    def test_sampling_follows_weights(self):
        fc = predict_final_weight(self._grid(), np.zeros((1, 2)), TRAITS,
                                  BOXES, n_samples=4000,
                                  rng=np.random.default_rng(1))
        frac_light = np.mean(fc.initial_weights == 150.0)
        assert frac_light == pytest.approx(0.75, abs=0.03)

    def test_grid_requires_rng(self):
        with pytest.raises(ValueError):
            predict_final_weight(self._grid(), np.zeros((1, 2)), TRAITS,
                                 BOXES)

    def test_empty_grid_rejected(self):
        empty = PosteriorGrid(axes={}, points=np.zeros((0, 10)),
                              eta=np.zeros(0), weights=np.zeros(0))
        with pytest.raises(ValueError):
            predict_final_weight(empty, np.zeros((1, 2)), TRAITS, BOXES,
                                 rng=np.random.default_rng(0))


class TestRoc:
    def test_hand_curve(self):
        points = roc_curve([0.9, 0.4, 0.35, 0.8], [1, 0, 1, 0])
        assert points == [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (1.0, 0.5),
                          (1.0, 1.0)]
        assert roc_auc(points) == pytest.approx(0.5)

    def test_perfect_separation(self):
        points = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert roc_auc(points) == pytest.approx(1.0)

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(2)
        scores = rng.random(2000)
        labels = rng.integers(0, 2, size=2000)
        assert roc_auc(roc_curve(scores, labels)) == pytest.approx(0.5,
                                                                   abs=0.05)

    def test_degenerate_labels_rejected(self):
        with pytest.raises(ValueError):
            roc_curve([0.1, 0.2], [1, 1])
        with pytest.raises(ValueError):
            roc_curve([0.1, 0.2], [0, 0])
        with pytest.raises(ValueError):
            roc_curve([0.1], [1, 0])


class TestForecastType:
    def test_probability_bounds_enforced(self):
        with pytest.raises(ValueError):
            Forecast(samples=np.zeros(1), initial_weights=np.zeros(1),
                     p_success=1.5, threshold=0.05, horizon_weeks=1)
