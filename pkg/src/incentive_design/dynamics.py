"""Participant behavioral model: domain types and exact forward dynamics.

Covers the daily weight/calorie physiology, the closed-form in-week calorie
plan, a numeric coordinate-search oracle for that plan, stochastic week
simulation, and the between-week motivational updates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Literal

import numpy as np

from .boxes import Boxes, ClampLog, Interval, project

POUNDS_PER_KG = 2.20462
KCAL_PER_POUND = 3500.0
DAYS_PER_WEEK = 7


@dataclass(frozen=True)
class Demographics:
    age: float          # years
    sex: Literal["male", "female"]
    height_cm: float
    activity_multiplier: float = 1.2

    def __post_init__(self) -> None:
        if self.age <= 0 or self.height_cm <= 0:
            raise ValueError("age and height must be positive")
        if self.activity_multiplier < 1.0:
            raise ValueError("activity multiplier must be >= 1")
        if self.sex not in ("male", "female"):
            raise ValueError(f"unknown sex {self.sex!r}")


@dataclass(frozen=True)
class ParticipantTraits:
    """Fixed per-participant constants.

    b, c, k are the daily weight-dynamics coefficients
    (w_next = b*w + c*f + k); A is the half-width of the uniform
    calorie-execution noise; sigma the Laplace scale of weight measurement
    noise; the gammas are decay rates toward the motivational baselines.
    """

    b: float
    c: float
    k: float
    A: float = 500.0
    sigma: float = 2.0
    gamma1: float = 0.8
    gamma2: float = 0.8
    gamma_p: float = 0.8
    gamma_f: float = 0.9
    a1_b: float = 0.0
    a2_b: float = 0.0
    p_b: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.b < 1.0):
            raise ValueError(f"weight persistence b={self.b} outside (0, 1)")
        if self.c <= 0:
            raise ValueError("calorie coefficient c must be positive")
        if self.A <= 0 or self.sigma <= 0:
            raise ValueError("noise scales A, sigma must be positive")
        for name in ("gamma1", "gamma2", "gamma_p", "gamma_f"):
            g = getattr(self, name)
            if not (0.0 < g < 1.0):
                raise ValueError(f"{name}={g} outside (0, 1)")


@dataclass(frozen=True)
class MotivationalState:
    """Latent per-week parameter bundle: motivations, recording probability
    and its threshold, caloric preference, reward belief, gain constants."""

    a1: float
    a2: float
    p: float
    B: float
    f_b: float
    r_hat: float
    k1: float
    k2: float
    k_p: float
    week_index: int = 0

    def projected(self, boxes: Boxes, log: ClampLog | None = None) -> "MotivationalState":
        return MotivationalState(
            a1=project(self.a1, boxes.A_set, "a1", log),
            a2=project(self.a2, boxes.A_set, "a2", log),
            p=project(self.p, boxes.P, "p", log),
            B=project(self.B, boxes.P, "B", log),
            f_b=project(self.f_b, boxes.F, "f_b", log),
            r_hat=project(self.r_hat, boxes.R, "r_hat", log),
            k1=project(self.k1, boxes.K, "k1", log),
            k2=project(self.k2, boxes.K, "k2", log),
            k_p=project(self.k_p, boxes.K, "k_p", log),
            week_index=self.week_index,
        )

    def in_boxes(self, boxes: Boxes, tol: float = 1e-9) -> bool:
        return (
            boxes.A_set.contains(self.a1, tol)
            and boxes.A_set.contains(self.a2, tol)
            and boxes.P.contains(self.p, tol)
            and boxes.P.contains(self.B, tol)
            and boxes.F.contains(self.f_b, tol)
            and boxes.R.contains(self.r_hat, tol)
            and boxes.K.contains(self.k1, tol)
            and boxes.K.contains(self.k2, tol)
            and boxes.K.contains(self.k_p, tol)
        )


@dataclass(frozen=True)
class PhysicalState:
    w: float  # true weight, lbs


@dataclass(frozen=True)
class WeekOutcome:
    w_path: np.ndarray   # 7 true daily weights
    f_path: np.ndarray   # 7 realized daily calories
    c_path: np.ndarray   # 7 planned daily calories
    g: int               # recording-success indicator
    lost_weight: int     # 1 iff w_path[0] - w_path[6] > 0
    r_w: float
    r_c: float


def mifflin_traits(
    demo: Demographics,
    *,
    kcal_per_pound: float = KCAL_PER_POUND,
    pounds_per_kg: float = POUNDS_PER_KG,
) -> tuple[float, float, float]:
    """Daily weight-dynamics coefficients from a basal-metabolic-rate energy
    balance: w_next = b*w + c*f + k with weight in lbs and calories in kcal.

    Burn rate is activity_multiplier * (10*w_kg + 6.25*height - 5*age + s),
    s = +5 for males and -161 for females; a pound of body weight trades
    against kcal_per_pound calories.
    """
    pal = demo.activity_multiplier
    s = 5.0 if demo.sex == "male" else -161.0
    b = 1.0 - pal * (10.0 / pounds_per_kg) / kcal_per_pound
    c = 1.0 / kcal_per_pound
    k = -pal * (6.25 * demo.height_cm - 5.0 * demo.age + s) / kcal_per_pound
    if not (0.0 < b < 1.0):
        raise ValueError(f"derived weight persistence b={b} outside (0, 1)")
    if c <= 0:
        raise ValueError("derived calorie coefficient is nonpositive")
    return b, c, k


@lru_cache(maxsize=256)
def plan_day_coefficients(b: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-day multipliers of the two motivation terms in the calorie plan:
    S_j = sum_{i=0}^{6-j} b^i for the internal term and b^(6-j) for the
    external term, j = 0..6."""
    j = np.arange(DAYS_PER_WEEK)
    powers = b ** np.arange(DAYS_PER_WEEK + 1)
    s = np.array([powers[: DAYS_PER_WEEK - jj].sum() for jj in j])
    out = (s, b ** (6 - j))
    out[0].setflags(write=False)
    out[1].setflags(write=False)
    return out


def optimal_plan(
    theta: MotivationalState,
    traits: ParticipantTraits,
    boxes: Boxes,
    log: ClampLog | None = None,
) -> np.ndarray:
    """Closed-form in-week calorie plan.

    c_j = f_b - a1*c*S_j/2 - a2*r_hat*c*b^(6-j)/(4A), projected into the
    calorie box. Independent of current weight.
    """
    s, bpow = plan_day_coefficients(traits.b)
    raw = (
        theta.f_b
        - theta.a1 * traits.c * s / 2.0
        - theta.a2 * theta.r_hat * traits.c * bpow / (4.0 * traits.A)
    )
    clamped = np.clip(raw, boxes.F.lo, boxes.F.hi)
    if log is not None:
        for _ in range(int(np.sum(clamped != raw))):
            log.record("c_plan")
    return clamped


def plan_objective(
    c_path: np.ndarray,
    theta: MotivationalState,
    traits: ParticipantTraits,
    loss_margin: float = 0.0,
) -> float:
    """Expected in-week utility of a calorie plan, up to plan-independent
    constants. The weight-loss probability is the uniform-noise mass below
    the loss threshold, clipped to [0, 1]; loss_margin shifts that threshold
    (0 puts the preference-only plan exactly at the cusp)."""
    s, bpow = plan_day_coefficients(traits.b)
    internal = -theta.a1 * traits.c * float(s @ c_path)
    numer = loss_margin + traits.c * float(bpow @ (theta.f_b - c_path)) + traits.A
    prob = min(max(numer / (2.0 * traits.A), 0.0), 1.0)
    external = theta.a2 * theta.r_hat * prob
    preference = -float(np.sum((c_path - theta.f_b) ** 2))
    return internal + external + preference


def dp_oracle_plan(
    theta: MotivationalState,
    traits: ParticipantTraits,
    boxes: Boxes,
    grid_step: float,
    loss_margin: float = 0.0,
    max_sweeps: int = 200,
) -> np.ndarray:
    """Numeric plan oracle: coordinate-wise exact maximization of the
    expected in-week utility over a discretized calorie grid, swept backward
    from Sunday until a fixed point. Test oracle only."""
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    grid = np.arange(boxes.F.lo, boxes.F.hi + grid_step / 2, grid_step)
    if len(grid) < 3:
        raise ValueError("grid too coarse to bracket an interior optimum")
    c = np.full(DAYS_PER_WEEK, min(max(theta.f_b, boxes.F.lo), boxes.F.hi))
    s, bpow = plan_day_coefficients(traits.b)
    for _ in range(max_sweeps):
        changed = False
        for j in range(DAYS_PER_WEEK - 1, -1, -1):
            # objective over the whole candidate grid for day j, vectorized
            others = np.delete(np.arange(DAYS_PER_WEEK), j)
            internal = -theta.a1 * traits.c * (
                float(s[others] @ c[others]) + s[j] * grid
            )
            numer = (
                loss_margin
                + traits.c * float(bpow[others] @ (theta.f_b - c[others]))
                + traits.c * bpow[j] * (theta.f_b - grid)
                + traits.A
            )
            prob = np.clip(numer / (2.0 * traits.A), 0.0, 1.0)
            external = theta.a2 * theta.r_hat * prob
            preference = (
                -float(np.sum((c[others] - theta.f_b) ** 2))
                - (grid - theta.f_b) ** 2
            )
            values = internal + external + preference
            best_c = grid[int(np.argmax(values))]
            if best_c != c[j]:
                changed = True
            c[j] = best_c
        if not changed:
            break
    return c


def roll_weights(
    w0: float,
    f_path: np.ndarray,
    traits: ParticipantTraits,
    boxes: Boxes,
    log: ClampLog | None = None,
) -> np.ndarray:
    """Daily weight recursion w_{d+1} = b*w_d + c*f_{d+1} + k from a given
    Monday weight, projected into the weight box."""
    w = np.empty(DAYS_PER_WEEK)
    w[0] = project(w0, boxes.W, "w", log)
    for d in range(DAYS_PER_WEEK - 1):
        w[d + 1] = project(
            traits.b * w[d] + traits.c * f_path[d + 1] + traits.k, boxes.W, "w", log
        )
    return w


def between_week_update(
    theta: MotivationalState,
    outcome: WeekOutcome,
    traits: ParticipantTraits,
    boxes: Boxes,
    log: ClampLog | None = None,
    g_value: float | None = None,
) -> MotivationalState:
    """Between-week motivational dynamics.

    g_value overrides the realized recording indicator with its mean for
    certainty-equivalent evaluation.
    """
    L = float(outcome.lost_weight)
    C = 1.0 if theta.p >= theta.B else 0.0
    g = float(outcome.g) if g_value is None else g_value
    t = theta.week_index
    a1 = traits.gamma1 * (theta.a1 - traits.a1_b) + traits.a1_b + theta.k1 * L + outcome.r_c * C
    a2 = traits.gamma2 * (theta.a2 - traits.a2_b) + traits.a2_b + theta.k2 * outcome.r_w * L
    p = traits.gamma_p * (theta.p - traits.p_b) + traits.p_b + theta.k_p * g
    f_b = traits.gamma_f * theta.f_b + (1.0 - traits.gamma_f) * float(np.mean(outcome.f_path))
    if L > 0:
        r_hat = (t / (t + 1.0)) * theta.r_hat + outcome.r_w / (t + 1.0)
    else:
        r_hat = theta.r_hat
    updated = replace(
        theta, a1=a1, a2=a2, p=p, f_b=f_b, r_hat=r_hat, week_index=t + 1
    )
    return updated.projected(boxes, log)


def simulate_week(
    phys: PhysicalState,
    theta: MotivationalState,
    traits: ParticipantTraits,
    rewards: tuple[float, float],
    rng: np.random.Generator,
    boxes: Boxes,
    chain_day0: bool = False,
    log: ClampLog | None = None,
) -> tuple[WeekOutcome, PhysicalState, MotivationalState]:
    """Simulate one study week.

    phys.w is the Monday weight, or the previous Sunday weight when
    chain_day0 is set (then Monday's weight is rolled through the day-0
    calorie draw). Returns the realized outcome, the Sunday physical state,
    and the updated motivational state.
    """
    r_w, r_c = rewards
    c_path = optimal_plan(theta, traits, boxes, log)
    xi = rng.uniform(-traits.A, traits.A, size=DAYS_PER_WEEK)
    f_path = np.clip(c_path + xi, boxes.F.lo, boxes.F.hi)
    if chain_day0:
        w0 = traits.b * phys.w + traits.c * f_path[0] + traits.k
    else:
        w0 = phys.w
    w_path = roll_weights(w0, f_path, traits, boxes, log)
    g = int(rng.random() < theta.p)
    lost = int(w_path[0] - w_path[6] > 0.0)
    outcome = WeekOutcome(
        w_path=w_path, f_path=f_path, c_path=c_path,
        g=g, lost_weight=lost, r_w=r_w, r_c=r_c,
    )
    theta_next = between_week_update(theta, outcome, traits, boxes, log)
    return outcome, PhysicalState(w=w_path[6]), theta_next


@dataclass
class Trajectory:
    w: np.ndarray        # (T, 7) true daily weights
    f: np.ndarray        # (T, 7) realized calories
    c: np.ndarray        # (T, 7) planned calories
    g: np.ndarray        # (T,) recording indicators (mean p in CE mode)
    lost: np.ndarray     # (T,) weekly weight-loss indicators
    thetas: list[MotivationalState]  # length T+1, state entering each week

    @property
    def final_weight(self) -> float:
        return float(self.w[-1, -1])


def rollout(
    theta0: MotivationalState,
    phys0: PhysicalState,
    traits: ParticipantTraits,
    boxes: Boxes,
    reward_seq: np.ndarray,
    mode: Literal["stochastic", "certainty_equivalent"] = "certainty_equivalent",
    rng: np.random.Generator | None = None,
    log: ClampLog | None = None,
) -> Trajectory:
    """Chain weekly simulations over a reward sequence of shape (T, 2).

    Stochastic mode draws calorie and recording noise; certainty-equivalent
    mode zeroes the calorie noise and replaces the recording indicator by
    its mean in the probability dynamic.
    """
    reward_seq = np.asarray(reward_seq, dtype=float)
    if reward_seq.ndim != 2 or reward_seq.shape[1] != 2:
        raise ValueError("reward_seq must have shape (T, 2)")
    if mode == "stochastic" and rng is None:
        raise ValueError("stochastic rollout requires an rng")
    T = reward_seq.shape[0]
    w = np.empty((T, DAYS_PER_WEEK))
    f = np.empty((T, DAYS_PER_WEEK))
    c = np.empty((T, DAYS_PER_WEEK))
    g = np.empty(T)
    lost = np.empty(T, dtype=int)
    thetas = [theta0]
    theta, phys = theta0, phys0
    for t in range(T):
        r_w, r_c = reward_seq[t]
        if mode == "stochastic":
            outcome, phys, theta = simulate_week(
                phys, theta, traits, (r_w, r_c), rng, boxes,
                chain_day0=(t > 0), log=log,
            )
            g[t] = outcome.g
        else:
            c_path = optimal_plan(theta, traits, boxes, log)
            f_path = c_path
            w0 = traits.b * phys.w + traits.c * f_path[0] + traits.k if t > 0 else phys.w
            w_path = roll_weights(w0, f_path, traits, boxes, log)
            L = int(w_path[0] - w_path[6] > 0.0)
            outcome = WeekOutcome(
                w_path=w_path, f_path=f_path, c_path=c_path,
                g=0, lost_weight=L, r_w=r_w, r_c=r_c,
            )
            theta = between_week_update(theta, outcome, traits, boxes, log, g_value=theta.p)
            phys = PhysicalState(w=w_path[6])
            g[t] = thetas[t].p
        w[t], f[t], c[t] = outcome.w_path, outcome.f_path, outcome.c_path
        lost[t] = outcome.lost_weight
        thetas.append(theta)
    return Trajectory(w=w, f=f, c=c, g=g, lost=lost, thetas=thetas)
