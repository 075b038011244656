"""Surrogate maximum-likelihood estimation of latent participant parameters.

Evaluates the fixed-initial-condition profile objective (absolute weight
residuals scaled by the Laplace noise, plus an absolute-error surrogate for
the recording likelihood), searches over initial conditions, and assembles a
normalized surrogate posterior over a grid.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .boxes import Boxes, Interval
from .dynamics import (
    DAYS_PER_WEEK,
    MotivationalState,
    ParticipantTraits,
    plan_day_coefficients,
)

PARAM_NAMES = ("w00", "a1", "a2", "p", "B", "f_b", "r_hat", "k1", "k2", "k_p")


@dataclass
class ObservationSet:
    """Noisy daily weights with missing-day mask, weekly recording
    indicators, and disbursed incentives. weights is (T, 7) with NaN on
    unobserved days."""

    weights: np.ndarray
    g: np.ndarray
    r_w: np.ndarray
    r_c: np.ndarray
    flags: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        self.g = np.asarray(self.g, dtype=int)
        self.r_w = np.asarray(self.r_w, dtype=float)
        self.r_c = np.asarray(self.r_c, dtype=float)
        T = self.weights.shape[0]
        if self.weights.ndim != 2 or self.weights.shape[1] != DAYS_PER_WEEK:
            raise ValueError("weights must have shape (T, 7)")
        if not (len(self.g) == len(self.r_w) == len(self.r_c) == T):
            raise ValueError("g and reward vectors must have length T")
        if not np.all((self.g == 0) | (self.g == 1)):
            raise ValueError("g must be binary")

    @property
    def weeks(self) -> int:
        return self.weights.shape[0]

    @property
    def n_observed(self) -> int:
        return int(np.sum(~np.isnan(self.weights)))

    def validate(self, boxes: Boxes, band: Interval | None = None) -> None:
        """Flag (never drop) out-of-band weights; reject rewards outside R."""
        band = band or boxes.W
        for t, d in zip(*np.nonzero(~np.isnan(self.weights))):
            v = self.weights[t, d]
            if not band.contains(v):
                self.flags.append(f"weight out of band at week {t} day {d}: {v}")
        for name, vec in (("r_w", self.r_w), ("r_c", self.r_c)):
            for t, v in enumerate(vec):
                if not boxes.R.contains(v, tol=1e-9):
                    raise ValueError(f"{name}[{t}]={v} outside the reward box")
        if not np.all((self.g == 0) | (self.g == 1)):
            raise ValueError("g must be binary")


@dataclass
class EstimationConfig:
    beta: float = 1.0
    tau_strict: float = 1e-6
    tau_amb: float | None = None      # default 2*sigma
    branch_cap: int = 4096
    inner: str = "lp"                 # "lp" (exact convex fit) or "zero" (xi=0 fast path)
    n_starts: int = 16
    n_refine: int = 2
    sweeps: int = 8
    coord_points: int = 9
    min_rel_step: float = 2e-4
    seed: int = 0
    seed_points: np.ndarray | None = None   # (n, 10) coarse-grid seed vectors


@dataclass
class EstimationResult:
    w00_hat: float
    theta0_hat: MotivationalState
    objective: float
    l1_path: np.ndarray
    w_fit: np.ndarray            # (T, 7) fitted latent weight path
    diagnostics: dict


@dataclass
class PosteriorGrid:
    axes: dict[str, np.ndarray]
    points: np.ndarray           # (n_cells, 10) parameter vectors
    eta: np.ndarray
    weights: np.ndarray

    @property
    def map_index(self) -> int:
        return int(np.argmin(self.eta))


def theta_to_vector(w00: float, theta: MotivationalState) -> np.ndarray:
    return np.array([
        w00, theta.a1, theta.a2, theta.p, theta.B, theta.f_b, theta.r_hat,
        theta.k1, theta.k2, theta.k_p,
    ])


def vector_to_theta(x: Sequence[float]) -> tuple[float, MotivationalState]:
    x = np.asarray(x, dtype=float)
    return float(x[0]), MotivationalState(
        a1=float(x[1]), a2=float(x[2]), p=float(x[3]), B=float(x[4]),
        f_b=float(x[5]), r_hat=float(x[6]), k1=float(x[7]), k2=float(x[8]),
        k_p=float(x[9]), week_index=0,
    )


def param_boxes(boxes: Boxes) -> list[tuple[str, Interval]]:
    return [
        ("w00", boxes.W), ("a1", boxes.A_set), ("a2", boxes.A_set),
        ("p", boxes.P), ("B", boxes.P), ("f_b", boxes.F), ("r_hat", boxes.R),
        ("k1", boxes.K), ("k2", boxes.K), ("k_p", boxes.K),
    ]


def surrogate_bound_check(p: float, g: int, eps: float) -> tuple[float, float, float]:
    """Sandwich of the Bernoulli negative log-likelihood between scaled
    absolute errors: returns (lower, -log P(g|p), upper) and asserts order."""
    if not (eps <= p <= 1.0 - eps):
        raise ValueError(f"p={p} outside [{eps}, {1 - eps}]")
    gap = abs(g - p)
    lower = (-math.log(1.0 - eps) / eps) * gap
    mid = -math.log(p if g == 1 else 1.0 - p)
    upper = (-math.log(eps) / (1.0 - eps)) * gap
    assert lower <= mid + 1e-12 and mid <= upper + 1e-12
    return lower, mid, upper


def _p_path(theta0: MotivationalState, traits: ParticipantTraits, boxes: Boxes,
            g: np.ndarray) -> np.ndarray:
    """Recording-probability path, fully determined by (p0, k_p) and the
    observed indicators."""
    T = len(g)
    lo, hi = boxes.P.lo, boxes.P.hi
    gp, pb, kp = traits.gamma_p, traits.p_b, theta0.k_p
    cur = min(max(theta0.p, lo), hi)
    p = [cur]
    for t in range(T - 1):
        cur = gp * (cur - pb) + pb + kp * g[t]
        cur = min(max(cur, lo), hi)
        p.append(cur)
    return np.array(p)


def _motivation_paths(
    theta0: MotivationalState,
    traits: ParticipantTraits,
    boxes: Boxes,
    l1: np.ndarray,
    p: np.ndarray,
    r_w: np.ndarray,
    r_c: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """a1 / a2 / reward-belief paths given a weekly weight-loss indicator
    path; deterministic once l1 is fixed."""
    T = len(l1)
    alo, ahi = boxes.A_set.lo, boxes.A_set.hi
    rlo, rhi = boxes.R.lo, boxes.R.hi
    g1, g2 = traits.gamma1, traits.gamma2
    a1b, a2b = traits.a1_b, traits.a2_b
    k1, k2 = theta0.k1, theta0.k2
    ca1 = min(max(theta0.a1, alo), ahi)
    ca2 = min(max(theta0.a2, alo), ahi)
    crh = min(max(theta0.r_hat, rlo), rhi)
    B = boxes.P.clamp(theta0.B)
    a1, a2, rh = [ca1], [ca2], [crh]
    p = np.asarray(p).tolist()
    l1 = np.asarray(l1).tolist()
    r_w = np.asarray(r_w).tolist()
    r_c = np.asarray(r_c).tolist()
    for t in range(T - 1):
        C = 1.0 if p[t] >= B else 0.0
        ca1 = g1 * (ca1 - a1b) + a1b + k1 * l1[t] + r_c[t] * C
        ca1 = min(max(ca1, alo), ahi)
        ca2 = g2 * (ca2 - a2b) + a2b + k2 * r_w[t] * l1[t]
        ca2 = min(max(ca2, alo), ahi)
        if l1[t]:
            crh = (t / (t + 1.0)) * crh + r_w[t] / (t + 1.0)
            crh = min(max(crh, rlo), rhi)
        a1.append(ca1)
        a2.append(ca2)
        rh.append(crh)
    return np.array(a1), np.array(a2), np.array(rh)


def _plan_offsets(a1: np.ndarray, a2: np.ndarray, rh: np.ndarray,
                  traits: ParticipantTraits) -> np.ndarray:
    """(T, 7) subtraction from the caloric preference in the weekly plan."""
    s, bpow = plan_day_coefficients(traits.b)
    return (
        np.outer(a1, traits.c * s / 2.0)
        + np.outer(a2 * rh, traits.c * bpow / (4.0 * traits.A))
    )


class _AffineWeights:
    """Latent daily weights as an affine map of the calorie disturbances:
    w = const + coef @ xi, with xi flattened (T*7,)."""

    def __init__(self, w00: float, offsets: np.ndarray,
                 fb0: float, traits: ParticipantTraits,
                 need_coef: bool = True):
        T = offsets.shape[0]
        n = T * DAYS_PER_WEEK
        gf = traits.gamma_f
        # caloric-preference path: fb_{t+1} = fb_t - (1-gf)*(mean offset_t - mean xi_t)
        shift = np.concatenate([[0.0], np.cumsum(offsets.mean(axis=1))[:-1]])
        fb_const = fb0 - (1.0 - gf) * shift
        self.c_const = fb_const[:, None] - offsets
        # w_i = b*w_{i-1} + c*cc_i + k over the flattened day sequence; solved
        # in closed form via b^i * (w00 + cumsum(drive_j * b^-j))
        drive = traits.c * self.c_const.ravel() + traits.k
        bpow = traits.b ** np.arange(n)
        cum = np.concatenate([[0.0], np.cumsum(drive[1:] / bpow[1:])])
        self.w_const = (bpow * (w00 + cum)).reshape(T, DAYS_PER_WEEK)
        self.n = n
        if not need_coef:
            self.c_coef = None
            self.w_coef = None
            return
        fb_coef = np.zeros((T, n))
        for t in range(T - 1):
            fb_coef[t + 1] = fb_coef[t]
            fb_coef[t + 1, t * DAYS_PER_WEEK:(t + 1) * DAYS_PER_WEEK] += (1.0 - gf) / DAYS_PER_WEEK
        self.c_coef = fb_coef  # shared across days within a week
        w_coef = np.zeros((T, DAYS_PER_WEEK, n))
        for t in range(T):
            for d in range(DAYS_PER_WEEK):
                if t == 0 and d == 0:
                    continue
                prev_v = w_coef[t - 1, 6] if d == 0 else w_coef[t, d - 1]
                w_coef[t, d] = traits.b * prev_v + traits.c * fb_coef[t]
                w_coef[t, d, t * DAYS_PER_WEEK + d] += traits.c
        self.w_coef = w_coef


def _inner_fit_lp(
    aff: _AffineWeights,
    obs: ObservationSet,
    l1: np.ndarray,
    traits: ParticipantTraits,
    tau_strict: float,
) -> tuple[float, np.ndarray] | None:
    """Exact convex trajectory fit for a fixed weekly-loss indicator path:
    minimize the sigma-scaled absolute weight residuals over bounded calorie
    disturbances, subject to the indicator sign constraints. Returns
    (objective, fitted weight path) or None when infeasible."""
    mask = ~np.isnan(obs.weights)
    rows = np.nonzero(mask)
    n_obs = len(rows[0])
    n = aff.n
    n_var = n + 2 * n_obs
    cost = np.concatenate([np.zeros(n), np.full(2 * n_obs, 1.0 / traits.sigma)])
    A_eq = np.zeros((n_obs, n_var))
    b_eq = np.empty(n_obs)
    for i, (t, d) in enumerate(zip(*rows)):
        A_eq[i, :n] = aff.w_coef[t, d]
        A_eq[i, n + i] = -1.0
        A_eq[i, n + n_obs + i] = 1.0
        b_eq[i] = obs.weights[t, d] - aff.w_const[t, d]
    T = obs.weeks
    A_ub = np.zeros((T, n_var))
    b_ub = np.empty(T)
    for t in range(T):
        drow = aff.w_coef[t, 0] - aff.w_coef[t, 6]
        dconst = aff.w_const[t, 0] - aff.w_const[t, 6]
        if l1[t]:
            A_ub[t, :n] = -drow
            b_ub[t] = dconst - tau_strict
        else:
            A_ub[t, :n] = drow
            b_ub[t] = -dconst
    bounds = [(-traits.A, traits.A)] * n + [(0.0, None)] * (2 * n_obs)
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if not res.success:
        return None
    xi = res.x[:n]
    w_fit = aff.w_const + aff.w_coef @ xi
    return float(res.fun), w_fit


def _zero_fit(aff: _AffineWeights, obs: ObservationSet, l1: np.ndarray,
              traits: ParticipantTraits) -> tuple[float, np.ndarray] | None:
    """Fast xi=0 evaluation; rejects indicator paths the deterministic
    trajectory contradicts."""
    w = aff.w_const
    diff = w[:, 0] - w[:, 6]
    if np.any((diff > 0) != (l1 > 0)):
        return None
    mask = ~np.isnan(obs.weights)
    value = float(np.sum(np.abs(w[mask] - obs.weights[mask])) / traits.sigma)
    return value, w.copy()


def _zero_eval_python(
    w00: float,
    theta0: MotivationalState,
    obs: ObservationSet,
    traits: ParticipantTraits,
    boxes: Boxes,
    l1_init: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """xi = 0 profile value: the weekly loss indicators are whatever the
    deterministic rollout produces, resolved by forward self-consistency.
    Reference implementation; the jitted kernel below must agree with it."""
    T = obs.weeks
    p = _p_path(theta0, traits, boxes, obs.g)
    l1 = l1_init.copy()
    for _ in range(T + 1):
        a1, a2, rh = _motivation_paths(theta0, traits, boxes, l1, p,
                                       obs.r_w, obs.r_c)
        offsets = _plan_offsets(a1, a2, rh, traits)
        aff = _AffineWeights(w00, offsets, theta0.f_b, traits, need_coef=False)
        implied = (aff.w_const[:, 0] - aff.w_const[:, 6] > 0).astype(int)
        if np.array_equal(implied, l1):
            break
        l1 = implied
    mask = ~np.isnan(obs.weights)
    w = aff.w_const
    value = float(np.sum(np.abs(w[mask] - obs.weights[mask])) / traits.sigma)
    return value, w, l1, p


try:
    from numba import njit as _njit
except ImportError:                                   # pragma: no cover
    _njit = None

if _njit is not None:
    @_njit(cache=True)
    def _zero_eval_jit(w00, a1_0, a2_0, p0, B, fb0, rh0, k1, k2, kp,
                       g, r_w, r_c, wobs, l1_init,
                       gp, pb, g1, g2, a1b, a2b, gf, b, c, kc, A,
                       plo, phi, alo, ahi, rlo, rhi, s, bpow, sigma):
        """Jitted twin of _zero_eval_python (same clamps, same ordering)."""
        T = g.shape[0]
        p = np.empty(T)
        cur = min(max(p0, plo), phi)
        p[0] = cur
        for t in range(T - 1):
            cur = gp * (cur - pb) + pb + kp * g[t]
            cur = min(max(cur, plo), phi)
            p[t + 1] = cur
        Bc = min(max(B, plo), phi)
        l1 = l1_init.copy()
        impl = np.empty(T, dtype=np.int64)
        w = np.empty((T, DAYS_PER_WEEK))
        for _ in range(T + 1):
            ca1 = min(max(a1_0, alo), ahi)
            ca2 = min(max(a2_0, alo), ahi)
            crh = min(max(rh0, rlo), rhi)
            fb = fb0
            wprev = w00
            for t in range(T):
                off_mean = 0.0
                for d in range(DAYS_PER_WEEK):
                    off = (ca1 * c * s[d] / 2.0
                           + ca2 * crh * c * bpow[d] / (4.0 * A))
                    if t > 0 or d > 0:
                        wprev = b * wprev + c * (fb - off) + kc
                    w[t, d] = wprev
                    off_mean += off
                if t < T - 1:
                    C = 1.0 if p[t] >= Bc else 0.0
                    ca1 = min(max(g1 * (ca1 - a1b) + a1b + k1 * l1[t]
                                  + r_c[t] * C, alo), ahi)
                    ca2 = min(max(g2 * (ca2 - a2b) + a2b
                                  + k2 * r_w[t] * l1[t], alo), ahi)
                    if l1[t] == 1:
                        crh = min(max((t / (t + 1.0)) * crh
                                      + r_w[t] / (t + 1.0), rlo), rhi)
                    fb = fb - (1.0 - gf) * (off_mean / DAYS_PER_WEEK)
            same = True
            for t in range(T):
                impl[t] = 1 if w[t, 0] - w[t, 6] > 0 else 0
                if impl[t] != l1[t]:
                    same = False
            if same:
                break
            l1 = impl.copy()
        value = 0.0
        for t in range(T):
            for d in range(DAYS_PER_WEEK):
                if not np.isnan(wobs[t, d]):
                    value += abs(w[t, d] - wobs[t, d])
        return value / sigma, w, l1, p


def _zero_eval(
    w00: float,
    theta0: MotivationalState,
    obs: ObservationSet,
    traits: ParticipantTraits,
    boxes: Boxes,
    l1_init: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    if _njit is None:
        return _zero_eval_python(w00, theta0, obs, traits, boxes, l1_init)
    s, bpow = plan_day_coefficients(traits.b)
    value, w, l1, p = _zero_eval_jit(
        w00, theta0.a1, theta0.a2, theta0.p, theta0.B, theta0.f_b,
        theta0.r_hat, theta0.k1, theta0.k2, theta0.k_p,
        np.asarray(obs.g, dtype=np.float64), np.asarray(obs.r_w, dtype=np.float64),
        np.asarray(obs.r_c, dtype=np.float64), obs.weights,
        np.asarray(l1_init, dtype=np.int64),
        traits.gamma_p, traits.p_b, traits.gamma1, traits.gamma2,
        traits.a1_b, traits.a2_b, traits.gamma_f, traits.b, traits.c,
        traits.k, traits.A, boxes.P.lo, boxes.P.hi, boxes.A_set.lo,
        boxes.A_set.hi, boxes.R.lo, boxes.R.hi,
        np.ascontiguousarray(s), np.ascontiguousarray(bpow), traits.sigma,
    )
    return float(value), w, l1.astype(int), p


def _l1_candidates(obs: ObservationSet, tau_amb: float) -> tuple[np.ndarray, list[int]]:
    """Fix the weekly loss indicator where first/last observed weights are
    decisive; list the weeks left ambiguous."""
    T = obs.weeks
    l1 = np.zeros(T, dtype=int)
    ambiguous = []
    for t in range(T):
        w0, w6 = obs.weights[t, 0], obs.weights[t, 6]
        if not np.isnan(w0) and not np.isnan(w6) and abs(w0 - w6) > tau_amb:
            l1[t] = int(w0 - w6 > 0)
        else:
            ambiguous.append(t)
    return l1, ambiguous


def eval_eta(
    w00: float,
    theta0: MotivationalState,
    obs: ObservationSet,
    traits: ParticipantTraits,
    boxes: Boxes,
    config: EstimationConfig | None = None,
    log_prior: Callable[[float, MotivationalState], float] | None = None,
    return_detail: bool = False,
    on_infeasible: str = "raise",
    _l1_pre: tuple[np.ndarray, list[int]] | None = None,
):
    """Profile objective at fixed initial conditions.

    Minimizes, over latent calorie disturbances and weekly loss indicators,
    the sigma-scaled absolute weight residuals plus beta times the absolute
    recording surrogate, minus the log prior (uniform prior contributes 0).
    The probability path is determined by the observations, so only the loss
    indicators are branched; each branch solves a convex trajectory fit.
    """
    cfg = config or EstimationConfig()
    T = obs.weeks
    prior_term = 0.0 if log_prior is None else -log_prior(w00, theta0)
    tau_amb = cfg.tau_amb if cfg.tau_amb is not None else 2.0 * traits.sigma
    l1_fixed, ambiguous = (_l1_pre if _l1_pre is not None
                           else _l1_candidates(obs, tau_amb))
    p = None if cfg.inner == "zero" else _p_path(theta0, traits, boxes, obs.g)

    def branch_value(l1):
        a1, a2, rh = _motivation_paths(theta0, traits, boxes, l1, p, obs.r_w, obs.r_c)
        offsets = _plan_offsets(a1, a2, rh, traits)
        if cfg.inner == "zero":
            aff = _AffineWeights(w00, offsets, theta0.f_b, traits, need_coef=False)
            return _zero_fit(aff, obs, l1, traits)
        aff = _AffineWeights(w00, offsets, theta0.f_b, traits)
        return _inner_fit_lp(aff, obs, l1, traits, cfg.tau_strict)

    best = None
    branch_count = 0
    if cfg.inner == "zero":
        # xi = 0: the indicator path is whatever the deterministic rollout
        # produces; resolve it by forward self-consistency.
        value, w, l1, p = _zero_eval(w00, theta0, obs, traits, boxes, l1_fixed)
        best = (value, w, l1)
        branch_count = 1
    elif 2 ** len(ambiguous) <= cfg.branch_cap:
        for bits in itertools.product((0, 1), repeat=len(ambiguous)):
            l1 = l1_fixed.copy()
            l1[ambiguous] = bits
            branch_count += 1
            out = branch_value(l1)
            if out is not None and (best is None or out[0] < best[0]):
                best = (out[0], out[1], l1.copy())
    else:
        # local search over indicator flips from the observation-implied path
        l1 = l1_fixed.copy()
        out = branch_value(l1)
        best = None if out is None else (out[0], out[1], l1.copy())
        improved = True
        while improved:
            improved = False
            for t in ambiguous:
                l1_try = (best[2] if best else l1).copy()
                l1_try[t] = 1 - l1_try[t]
                branch_count += 1
                out = branch_value(l1_try)
                if out is not None and (best is None or out[0] < best[0]):
                    best = (out[0], out[1], l1_try)
                    improved = True
    g_term = cfg.beta * float(np.sum(np.abs(p - obs.g)))
    if best is None:
        if on_infeasible == "inf":
            return (math.inf, None) if return_detail else math.inf
        raise RuntimeError(
            "no feasible weekly-loss indicator path; boxes or indicator "
            "constraints are over-tight for these observations"
        )
    value = best[0] + g_term + prior_term
    if return_detail:
        return value, {
            "w_term": best[0], "g_term": g_term, "prior_term": prior_term,
            "w_fit": best[1], "l1": best[2], "branches": branch_count,
            "p_path": p,
        }
    return value


def _log_scale_mask(pb: list[tuple[str, Interval]]) -> np.ndarray:
    """Coordinates searched on a log grid: nonnegative boxes wide enough
    that a linear grid cannot resolve small plausible magnitudes."""
    return np.array([b.lo >= 0.0 and b.hi >= 1.0e4 for _, b in pb])


def _heuristic_seeds(obs: ObservationSet, traits: ParticipantTraits,
                     boxes: Boxes) -> list[np.ndarray]:
    pb = param_boxes(boxes)
    log_scale = _log_scale_mask(pb)
    mid = np.array([
        math.sqrt(max(b.hi * 1e-8, 1e-12) * b.hi) if logc
        else 0.5 * (b.lo + b.hi)
        for (_, b), logc in zip(pb, log_scale)
    ])
    seeds = [mid]
    guess = mid.copy()
    observed = obs.weights[~np.isnan(obs.weights)]
    if len(observed):
        w0 = obs.weights[0][~np.isnan(obs.weights[0])]
        guess[0] = boxes.W.clamp(float(w0[0]) if len(w0) else float(observed[0]))
    # invert daily calories from consecutive observed weights
    cals = []
    for t in range(obs.weeks):
        for d in range(1, DAYS_PER_WEEK):
            w_prev, w_cur = obs.weights[t, d - 1], obs.weights[t, d]
            if not np.isnan(w_prev) and not np.isnan(w_cur):
                cals.append((w_cur - traits.b * w_prev - traits.k) / traits.c)
    if cals:
        guess[5] = boxes.F.clamp(float(np.median(cals)))
    guess[3] = boxes.P.clamp(float(np.mean(obs.g)))
    seeds.append(guess)
    return seeds


def solve_smle(
    obs: ObservationSet,
    traits: ParticipantTraits,
    boxes: Boxes,
    config: EstimationConfig | None = None,
    log_prior: Callable[[float, MotivationalState], float] | None = None,
    x0: np.ndarray | None = None,
) -> EstimationResult:
    """Minimize the profile objective over initial conditions by seeded
    multi-start plus coordinate refinement with shrinking brackets.

    Under a uniform prior this is the surrogate maximum-likelihood estimate.
    x0 warm-starts the search (added to the seed pool). Deterministic for a
    fixed (config.seed, inputs).
    """
    cfg = config or EstimationConfig()
    if obs.weeks < 2:
        raise ValueError("estimation requires at least 2 weeks of observations")
    if obs.n_observed == 0:
        raise ValueError("estimation requires at least one weight observation")
    pb = param_boxes(boxes)
    lows = np.array([b.lo for _, b in pb])
    highs = np.array([b.hi for _, b in pb])
    widths = highs - lows
    # coordinates whose box spans many orders of magnitude (motivation and
    # gain scales) are searched on a log grid: a linear grid over [0, 1e8]
    # cannot resolve values that live near 1e4
    log_scale = _log_scale_mask(pb)
    floors = np.where(log_scale, np.maximum(highs * 1e-8, 1e-12), 1.0)
    spans = np.where(log_scale, np.log(np.maximum(highs, 1e-12) / floors), 1.0)

    cache: dict[tuple, float] = {}
    tau_amb = cfg.tau_amb if cfg.tau_amb is not None else 2.0 * traits.sigma
    l1_pre = _l1_candidates(obs, tau_amb)

    def f(x: np.ndarray) -> float:
        key = tuple(np.round(x, 12))
        if key not in cache:
            w00, theta = vector_to_theta(x)
            cache[key] = eval_eta(w00, theta, obs, traits, boxes, cfg, log_prior,
                                  on_infeasible="inf", _l1_pre=l1_pre)
        return cache[key]

    seeds = _heuristic_seeds(obs, traits, boxes)
    if x0 is not None:
        seeds.insert(0, np.clip(np.asarray(x0, dtype=float), lows, highs))
    if cfg.seed_points is not None:
        for row in np.asarray(cfg.seed_points, dtype=float):
            seeds.append(np.clip(row, lows, highs))
    if cfg.n_starts > 0:
        sampler = qmc.Sobol(d=len(pb), scramble=True, seed=cfg.seed)
        pts = sampler.random(cfg.n_starts)
        draws = lows + pts * widths
        for j in np.flatnonzero(log_scale):     # log-uniform, not uniform
            draws[:, j] = floors[j] * np.exp(pts[:, j] * spans[j])
        seeds.extend(draws)
    scored = sorted(((f(s), i, s) for i, s in enumerate(seeds)), key=lambda z: (z[0], z[1]))
    finalists = [s for _, _, s in scored[: max(1, cfg.n_refine)]]

    def refine(x: np.ndarray) -> tuple[float, np.ndarray]:
        x = x.copy()
        fx = f(x)
        radius = np.full(len(x), 0.5)
        for _ in range(cfg.sweeps):
            moved = False
            for i in range(len(x)):
                if widths[i] == 0:
                    continue
                if log_scale[i]:
                    u = math.log(max(x[i], floors[i]) / floors[i]) / spans[i]
                    lo_u = max(0.0, u - radius[i])
                    hi_u = min(1.0, u + radius[i])
                    cands = floors[i] * np.exp(
                        np.linspace(lo_u, hi_u, cfg.coord_points) * spans[i])
                    if lows[i] == 0.0:
                        cands = np.append(cands, 0.0)
                else:
                    lo = max(lows[i], x[i] - radius[i] * widths[i])
                    hi = min(highs[i], x[i] + radius[i] * widths[i])
                    cands = np.linspace(lo, hi, cfg.coord_points)
                best_c, best_v = x[i], fx
                for cand in cands:
                    x[i] = cand
                    v = f(x)
                    if v < best_v - 1e-12:
                        best_c, best_v = cand, v
                x[i] = best_c
                if best_v < fx - 1e-12:
                    fx = best_v
                    moved = True
                else:
                    radius[i] = max(radius[i] * 0.25, cfg.min_rel_step)
            if not moved and np.all(radius <= cfg.min_rel_step):
                break
        return fx, x

    best_val, best_x = math.inf, finalists[0]
    for s in finalists:
        v, x = refine(s)
        if v < best_val - 1e-12:
            best_val, best_x = v, x
    w00, theta0 = vector_to_theta(best_x)
    value, detail = eval_eta(w00, theta0, obs, traits, boxes, cfg, log_prior,
                             return_detail=True, _l1_pre=l1_pre)
    assert abs(value - best_val) <= 1e-9 + 1e-9 * abs(value)
    return EstimationResult(
        w00_hat=w00,
        theta0_hat=theta0,
        objective=value,
        l1_path=detail["l1"],
        w_fit=detail["w_fit"],
        diagnostics={
            "branches": detail["branches"],
            "evaluations": len(cache),
            "solver_mode": cfg.inner,
            "w_term": detail["w_term"],
            "g_term": detail["g_term"],
        },
    )


def surrogate_posterior(
    obs: ObservationSet,
    traits: ParticipantTraits,
    boxes: Boxes,
    grid_spec: dict[str, np.ndarray | float],
    config: EstimationConfig | None = None,
    log_prior: Callable[[float, MotivationalState], float] | None = None,
    cell_budget: int = 100_000,
) -> PosteriorGrid:
    """Normalized surrogate posterior over a parameter grid: cell weights
    are exp(-(eta - eta_MAP)) renormalized to sum to one."""
    cfg = config or EstimationConfig()
    axes: dict[str, np.ndarray] = {}
    for name in PARAM_NAMES:
        if name not in grid_spec:
            raise ValueError(f"grid_spec missing dimension {name!r}")
        axes[name] = np.atleast_1d(np.asarray(grid_spec[name], dtype=float))
    n_cells = int(np.prod([len(v) for v in axes.values()]))
    if n_cells > cell_budget:
        raise ValueError(
            f"grid has {n_cells} cells, over the budget of {cell_budget}; "
            "coarsen the per-dimension grids"
        )
    points = np.array(list(itertools.product(*[axes[n] for n in PARAM_NAMES])))
    eta = np.empty(n_cells)
    for i, x in enumerate(points):
        w00, theta = vector_to_theta(x)
        eta[i] = eval_eta(w00, theta, obs, traits, boxes, cfg, log_prior)
    raw = np.exp(-(eta - eta.min()))
    return PosteriorGrid(axes=axes, points=points, eta=eta, weights=raw / raw.sum())


def observations_from_trajectory(
    traj_w: np.ndarray,
    g: np.ndarray,
    r_w: np.ndarray,
    r_c: np.ndarray,
    rng: np.random.Generator | None = None,
    sigma: float = 0.0,
    p_obs: float = 1.0,
    p_end: float = 1.0,
) -> ObservationSet:
    """Emit a noisy, partially observed ObservationSet from a true daily
    weight path (T, 7). Day 0 and day 6 are observed with probability p_end,
    interior days with p_obs."""
    T = traj_w.shape[0]
    weights = np.asarray(traj_w, dtype=float).copy()
    if sigma > 0:
        if rng is None:
            raise ValueError("noisy observations require an rng")
        weights = weights + rng.laplace(0.0, sigma, size=weights.shape)
    if p_obs < 1.0 or p_end < 1.0:
        if rng is None:
            raise ValueError("missingness requires an rng")
        u = rng.random(weights.shape)
        keep_prob = np.full(weights.shape, p_obs)
        keep_prob[:, 0] = p_end
        keep_prob[:, 6] = p_end
        weights[u >= keep_prob] = np.nan
    g_arr = np.asarray(g, dtype=float)
    g_int = (g_arr >= 0.5).astype(int) if g_arr.dtype != int else g_arr
    return ObservationSet(weights=weights, g=g_int,
                          r_w=np.asarray(r_w, float), r_c=np.asarray(r_c, float))
