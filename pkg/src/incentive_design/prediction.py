"""Forecasting from point or grid-posterior estimates: final-weight
distributions, clinically-significant-loss probabilities, and ROC utilities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Boxes
from .dynamics import MotivationalState, ParticipantTraits, PhysicalState, rollout
from .estimation import PosteriorGrid, vector_to_theta


@dataclass
class Forecast:
    samples: np.ndarray          # final-weight draws (lbs)
    initial_weights: np.ndarray  # each sample's own initial weight
    p_success: float             # P[fractional loss >= threshold]
    threshold: float
    horizon_weeks: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_success <= 1.0):
            raise ValueError("p_success must lie in [0, 1]")


def success_probability(samples: np.ndarray, initial_weights: np.ndarray,
                        threshold: float) -> float:
    """Fraction of samples losing at least `threshold` of their own initial
    weight."""
    losses = (initial_weights - samples) / initial_weights
    return float(np.mean(losses >= threshold))


def predict_final_weight(
    estimate: PosteriorGrid | tuple[float, MotivationalState],
    future_rewards: np.ndarray,
    traits: ParticipantTraits,
    boxes: Boxes,
    n_samples: int = 1000,
    rng: np.random.Generator | None = None,
    threshold: float = 0.05,
    noise_free: bool = False,
) -> Forecast:
    """Sample initial conditions (from grid weights, or the single point),
    roll each forward over the remaining reward schedule, and aggregate
    final weights. Success is judged against each sample's own initial
    weight, which is itself latent."""
    future_rewards = np.asarray(future_rewards, dtype=float)
    horizon = future_rewards.shape[0]
    if isinstance(estimate, PosteriorGrid):
        if len(estimate.points) == 0:
            raise ValueError("empty posterior grid")
        if rng is None:
            raise ValueError("grid sampling requires an rng")
        idx = rng.choice(len(estimate.points), size=n_samples, p=estimate.weights)
        starts = [vector_to_theta(estimate.points[i]) for i in idx]
    else:
        w00, theta0 = estimate
        if noise_free:
            starts = [(w00, theta0)]
        else:
            starts = [(w00, theta0)] * n_samples
    finals = np.empty(len(starts))
    initials = np.empty(len(starts))
    for i, (w00, theta0) in enumerate(starts):
        if noise_free:
            traj = rollout(theta0, PhysicalState(w=w00), traits, boxes,
                           future_rewards, mode="certainty_equivalent")
        else:
            if rng is None:
                raise ValueError("stochastic prediction requires an rng")
            traj = rollout(theta0, PhysicalState(w=w00), traits, boxes,
                           future_rewards, mode="stochastic", rng=rng)
        finals[i] = traj.final_weight
        initials[i] = w00
    return Forecast(
        samples=finals,
        initial_weights=initials,
        p_success=success_probability(finals, initials, threshold),
        threshold=threshold,
        horizon_weeks=horizon,
    )


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """Standard ROC sweep over unique score thresholds, endpoints (0,0) and
    (1,1) included; points ordered by increasing false-positive rate."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC requires at least one positive and one negative label")
    points = [(0.0, 0.0)]
    for thr in sorted(np.unique(scores), reverse=True):
        pred = scores >= thr
        tpr = float(np.sum(pred & (labels == 1))) / n_pos
        fpr = float(np.sum(pred & (labels == 0))) / n_neg
        points.append((fpr, tpr))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


def roc_auc(points: list[tuple[float, float]]) -> float:
    """Trapezoidal area under an ROC point list."""
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    return float(np.trapezoid(ys, xs))
