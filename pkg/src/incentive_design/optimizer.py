"""Budget-constrained incentive optimization and the weekly adaptive loop.

Evaluates candidate incentive schedules under certainty equivalence, builds
per-participant spend-to-loss frontiers (exhaustively when small, otherwise
by beam search bucketed on cumulative spend), allocates spend across the
cohort with a multiple-choice knapsack, and runs the receding-horizon weekly
step with per-participant re-estimation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .boxes import Boxes
from .dynamics import (
    DAYS_PER_WEEK,
    MotivationalState,
    ParticipantTraits,
    PhysicalState,
    optimal_plan,
    plan_day_coefficients,
    rollout,
)
from .estimation import EstimationConfig, ObservationSet, solve_smle, theta_to_vector
from .mip import PlanningParticipant

DEFAULT_REWARD_GRID = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)


@dataclass(frozen=True)
class LossFunction:
    kind: str = "indicator"          # "indicator" or "hinge"
    threshold_fraction: float = 0.05

    def __post_init__(self) -> None:
        if self.kind not in ("indicator", "hinge"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not (0.0 < self.threshold_fraction < 1.0):
            raise ValueError("threshold_fraction must lie in (0, 1)")

    def value(self, w_final: float, w00_ref: float) -> float:
        goal = (1.0 - self.threshold_fraction) * w00_ref
        if self.kind == "indicator":
            return 1.0 if w_final > goal else 0.0
        return max(0.0, w_final - goal)


@dataclass
class IncentivePlan:
    """Per-participant reward sequences for the remaining weeks."""

    week_start: int
    rewards: dict[str, np.ndarray]   # pid -> (H, 2) array of (r_w, r_c)
    losses: dict[str, float]
    total_spend: float

    def validate(self, reward_grid, boxes: Boxes, remaining: float) -> None:
        total = 0.0
        grid = set(float(g) for g in reward_grid)
        for pid, seq in self.rewards.items():
            for r in np.asarray(seq).ravel():
                if float(r) not in grid or not boxes.R.contains(float(r)):
                    raise ValueError(f"off-grid reward {r} for {pid}")
            total += float(np.sum(seq))
        if abs(total - self.total_spend) > 1e-9:
            raise ValueError("total_spend does not match reward entries")
        if total > remaining + 1e-9:
            raise ValueError("plan exceeds the remaining budget")


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class BudgetLedger:
    G: float
    spent: float = 0.0
    history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def remaining(self) -> float:
        return self.G - self.spent

    def commit(self, week: int, amount: float) -> None:
        if amount < -1e-12:
            raise ValueError("cannot commit a negative amount")
        if self.spent + amount > self.G + 1e-9:
            raise BudgetExceeded(
                f"committing {amount} at week {week} would exceed budget "
                f"{self.G} (already spent {self.spent})"
            )
        self.spent += amount
        self.history.append((week, amount))


@dataclass
class OptimizerConfig:
    reward_grid: tuple[float, ...] = DEFAULT_REWARD_GRID
    delta: float = 5.0               # knapsack spend step (dollars)
    beam_width: int = 64
    exhaustive_cap: int = 20_000     # action-sequence count below which search is exhaustive
    horizon_cap: int | None = None   # optional lookahead limit (approximation)
    obs_window: int | None = None    # re-estimate from only the last W weeks
    estimation: EstimationConfig = field(
        default_factory=lambda: EstimationConfig(inner="zero")
    )


# --- vectorized certainty-equivalent engine -----------------------------------


def ce_probability_path(theta: MotivationalState, traits: ParticipantTraits,
                        boxes: Boxes, horizon: int) -> np.ndarray:
    """Reward-independent recording-probability path under certainty
    equivalence (the indicator is replaced by its mean)."""
    p = np.empty(horizon)
    p[0] = theta.p
    for h in range(horizon - 1):
        p[h + 1] = boxes.P.clamp(
            traits.gamma_p * (p[h] - traits.p_b) + traits.p_b + theta.k_p * p[h]
        )
    return p


def ce_batch_final_weights(
    w_start: float,
    theta: MotivationalState,
    traits: ParticipantTraits,
    boxes: Boxes,
    reward_seqs: np.ndarray,
    chain_first: bool,
    tail_weeks: int = 0,
) -> np.ndarray:
    """Final Sunday weights for a batch of reward sequences (n, H, 2) under
    certainty equivalence; mirrors the scalar rollout step for step.
    tail_weeks extends the forecast past the sequences by holding each
    sequence's final-week rewards constant, so a capped decision horizon is
    still scored at the true end of the trial under the standard
    receding-horizon assumption that the current policy persists."""
    reward_seqs = np.asarray(reward_seqs, dtype=float)
    n, horizon, _ = reward_seqs.shape
    state = _BatchState.broadcast(w_start, theta, n)
    p_path = ce_probability_path(theta, traits, boxes, horizon + tail_weeks)
    for h in range(horizon + tail_weeks):
        r_w = reward_seqs[:, min(h, horizon - 1), 0]
        r_c = reward_seqs[:, min(h, horizon - 1), 1]
        state = ce_batch_step(
            state, r_w, r_c, traits, boxes,
            p_path[h], theta.week_index + h, chained=(chain_first or h > 0),
            theta_template=theta,
        )
    return state.w


@dataclass
class _BatchState:
    w: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    fb: np.ndarray
    rhat: np.ndarray

    @classmethod
    def broadcast(cls, w_start: float, theta: MotivationalState, n: int) -> "_BatchState":
        return cls(
            w=np.full(n, w_start), a1=np.full(n, theta.a1),
            a2=np.full(n, theta.a2), fb=np.full(n, theta.f_b),
            rhat=np.full(n, theta.r_hat),
        )

    def take(self, idx: np.ndarray) -> "_BatchState":
        return _BatchState(self.w[idx], self.a1[idx], self.a2[idx],
                           self.fb[idx], self.rhat[idx])

    def concat(self, other: "_BatchState") -> "_BatchState":
        return _BatchState(
            np.concatenate([self.w, other.w]),
            np.concatenate([self.a1, other.a1]),
            np.concatenate([self.a2, other.a2]),
            np.concatenate([self.fb, other.fb]),
            np.concatenate([self.rhat, other.rhat]),
        )

    def key_matrix(self) -> np.ndarray:
        return np.column_stack([self.w, self.a1, self.a2, self.fb, self.rhat])


def ce_batch_step(
    state: _BatchState,
    r_w: np.ndarray,
    r_c: np.ndarray,
    traits: ParticipantTraits,
    boxes: Boxes,
    p_t: float,
    week_index: int,
    chained: bool,
    theta_template: MotivationalState | None = None,
    B: float | None = None,
    k1: float | None = None,
    k2: float | None = None,
) -> _BatchState:
    """One certainty-equivalent week for a batch of states sharing traits
    and gain constants. Expressions parallel the scalar rollout."""
    if theta_template is not None:
        B, k1, k2 = theta_template.B, theta_template.k1, theta_template.k2
    s_coef, bpow = plan_day_coefficients(traits.b)
    c_path = (
        state.fb[:, None]
        - state.a1[:, None] * traits.c * s_coef / 2.0
        - state.a2[:, None] * state.rhat[:, None] * traits.c * bpow / (4.0 * traits.A)
    )
    c_path = np.clip(c_path, boxes.F.lo, boxes.F.hi)
    f_path = c_path
    if chained:
        w0 = traits.b * state.w + traits.c * f_path[:, 0] + traits.k
    else:
        w0 = state.w
    w_day = np.clip(w0, boxes.W.lo, boxes.W.hi)
    w_first = w_day
    for d in range(DAYS_PER_WEEK - 1):
        w_day = np.clip(
            traits.b * w_day + traits.c * f_path[:, d + 1] + traits.k,
            boxes.W.lo, boxes.W.hi,
        )
    L = (w_first - w_day > 0.0).astype(float)
    C = 1.0 if p_t >= B else 0.0
    a1 = np.clip(
        traits.gamma1 * (state.a1 - traits.a1_b) + traits.a1_b + k1 * L + r_c * C,
        boxes.A_set.lo, boxes.A_set.hi,
    )
    a2 = np.clip(
        traits.gamma2 * (state.a2 - traits.a2_b) + traits.a2_b + k2 * r_w * L,
        boxes.A_set.lo, boxes.A_set.hi,
    )
    fb = np.clip(
        traits.gamma_f * state.fb + (1.0 - traits.gamma_f) * np.mean(f_path, axis=1),
        boxes.F.lo, boxes.F.hi,
    )
    t = week_index
    rhat_updated = np.clip(
        (t / (t + 1.0)) * state.rhat + r_w / (t + 1.0), boxes.R.lo, boxes.R.hi
    )
    rhat = np.where(L > 0, rhat_updated, state.rhat)
    return _BatchState(w=w_day, a1=a1, a2=a2, fb=fb, rhat=rhat)


# --- psi evaluation -----------------------------------------------------------


def eval_psi(
    participants: list[PlanningParticipant],
    reward_seqs: dict[str, np.ndarray],
    boxes: Boxes,
    loss: LossFunction,
    chain_first: bool = False,
) -> float:
    """Total certainty-equivalent loss of predetermined reward sequences."""
    total = 0.0
    for part in participants:
        seq = np.asarray(reward_seqs[part.pid], dtype=float)
        traj = rollout(part.theta, PhysicalState(w=part.w_current), part.traits,
                       boxes, seq, mode="certainty_equivalent")
        total += loss.value(traj.final_weight, part.w00_ref)
    return total


# --- per-participant frontier -------------------------------------------------


def _action_table(reward_grid) -> tuple[np.ndarray, np.ndarray]:
    """All (r_w, r_c) pairs on the grid and their spends, in deterministic
    (r_w-major) order."""
    grid = np.asarray(sorted(float(g) for g in reward_grid))
    pairs = np.array([(rw, rc) for rw in grid for rc in grid])
    return pairs, pairs.sum(axis=1)


def participant_frontier(
    part: PlanningParticipant,
    horizon: int,
    loss: LossFunction,
    boxes: Boxes,
    config: OptimizerConfig,
    chain_first: bool = True,
    tail_weeks: int = 0,
) -> tuple[np.ndarray, list[np.ndarray | None]]:
    """Spend-to-loss frontier: for each spend bucket S (multiples of delta),
    the minimum certainty-equivalent loss over reward sequences with total
    spend <= S, plus an argmin sequence per bucket. Losses are scored after
    tail_weeks further weeks during which each sequence's final-week rewards
    are held constant (the rest of the trial when the decision horizon is
    capped); only the first planned week is ever disbursed, so the hold is a
    forecast assumption, not a spending commitment.

    Exhaustive when the action-sequence count is small; otherwise beam
    search with per-spend-bucket pruning (exact whenever no bucket
    overflows the beam)."""
    actions, spends = _action_table(config.reward_grid)
    delta = config.delta
    for sp in spends:
        if abs(round(sp / delta) * delta - sp) > 1e-9:
            raise ValueError("delta must divide every reward-grid pair sum")
    n_act = len(actions)
    max_units = int(round(spends.max() / delta)) * horizon
    n_buckets = max_units + 1
    best_loss = np.full(n_buckets, np.inf)
    best_seq: list[np.ndarray | None] = [None] * n_buckets

    if n_act ** horizon <= config.exhaustive_cap:
        seq_idx = np.array(list(itertools.product(range(n_act), repeat=horizon)),
                           dtype=int)
        seqs = actions[seq_idx]                     # (n, H, 2)
        totals = spends[seq_idx].sum(axis=1)
        finals = ce_batch_final_weights(part.w_current, part.theta, part.traits,
                                        boxes, seqs, chain_first,
                                        tail_weeks=tail_weeks)
        goal = (1.0 - loss.threshold_fraction) * part.w00_ref
        if loss.kind == "indicator":
            losses = (finals > goal).astype(float)
        else:
            losses = np.maximum(0.0, finals - goal)
        units = np.rint(totals / delta).astype(int)
        for i in range(len(seqs)):
            u = units[i]
            if losses[i] < best_loss[u] - 1e-15:
                best_loss[u] = losses[i]
                best_seq[u] = seqs[i]
    else:
        state = _BatchState.broadcast(part.w_current, part.theta, 1)
        p_path = ce_probability_path(part.theta, part.traits, boxes,
                                     horizon + tail_weeks)
        hist = np.zeros((1, 0), dtype=int)
        units_so_far = np.zeros(1, dtype=int)
        act_units = np.rint(spends / delta).astype(int)
        for h in range(horizon):
            n_states = len(state.w)
            rep = np.repeat(np.arange(n_states), n_act)
            act = np.tile(np.arange(n_act), n_states)
            new_state = ce_batch_step(
                state.take(rep), actions[act, 0], actions[act, 1],
                part.traits, boxes, p_path[h], part.theta.week_index + h,
                chained=(chain_first or h > 0), theta_template=part.theta,
            )
            new_hist = np.column_stack([hist[rep], act])
            new_units = units_so_far[rep] + act_units[act]
            # prune per spend bucket, keeping the lowest-weight states
            keep = np.empty(0, dtype=int)
            order = np.lexsort((np.arange(len(new_units)), new_state.w, new_units))
            sorted_units = new_units[order]
            kept_chunks = []
            start = 0
            while start < len(order):
                end = start
                while end < len(order) and sorted_units[end] == sorted_units[start]:
                    end += 1
                kept_chunks.append(order[start:start + min(config.beam_width,
                                                           end - start)])
                start = end
            keep = np.concatenate(kept_chunks) if kept_chunks else keep
            keep = np.sort(keep)
            state = new_state.take(keep)
            hist = new_hist[keep]
            units_so_far = new_units[keep]
        last = actions[hist[:, -1]] if tail_weeks > 0 else None
        for h in range(horizon, horizon + tail_weeks):
            state = ce_batch_step(
                state, last[:, 0], last[:, 1], part.traits, boxes, p_path[h],
                part.theta.week_index + h, chained=True,
                theta_template=part.theta,
            )
        goal = (1.0 - loss.threshold_fraction) * part.w00_ref
        if loss.kind == "indicator":
            losses = (state.w > goal).astype(float)
        else:
            losses = np.maximum(0.0, state.w - goal)
        for i in range(len(losses)):
            u = units_so_far[i]
            if losses[i] < best_loss[u] - 1e-15:
                best_loss[u] = losses[i]
                best_seq[u] = actions[hist[i]]

    # prefix-min: allow spending less than the bucket
    for u in range(1, n_buckets):
        if best_loss[u - 1] < best_loss[u] - 1e-15:
            best_loss[u] = best_loss[u - 1]
            best_seq[u] = best_seq[u - 1]
    return best_loss, best_seq


# --- cohort allocation --------------------------------------------------------


def optimize_incentives(
    participants: list[PlanningParticipant],
    ledger: BudgetLedger,
    loss: LossFunction,
    week_T: int,
    total_weeks: int,
    boxes: Boxes,
    config: OptimizerConfig | None = None,
    chain_first: bool = True,
) -> IncentivePlan:
    """Budget-coupled plan for weeks week_T..total_weeks-1: per-participant
    frontiers plus a multiple-choice knapsack over spend in delta steps."""
    config = config or OptimizerConfig()
    if week_T >= total_weeks:
        raise ValueError("week_T must precede the end of the trial")
    if ledger.remaining < -1e-9:
        raise ValueError("negative remaining budget")
    if not config.reward_grid:
        raise ValueError("empty reward grid")
    horizon = total_weeks - week_T
    if config.horizon_cap is not None:
        horizon = min(horizon, config.horizon_cap)
    tail = (total_weeks - week_T) - horizon
    delta = config.delta
    budget_units = int(math.floor((ledger.remaining + 1e-9) / delta))
    parts = sorted(participants, key=lambda p: p.pid)

    frontiers = []
    for part in parts:
        fl, fs = participant_frontier(part, horizon, loss, boxes, config,
                                      chain_first=chain_first, tail_weeks=tail)
        cap = min(len(fl) - 1, budget_units)
        frontiers.append((fl[: cap + 1], fs[: cap + 1]))

    # knapsack DP over budget units; choices[i][j] = spend units for
    # participant i when j units remain available in total
    n_units = budget_units + 1
    dp = np.zeros(n_units)
    choice = np.zeros((len(parts), n_units), dtype=int)
    for i, (fl, _) in enumerate(frontiers):
        n_choice = len(fl)
        cand = np.full((n_choice, n_units), np.inf)
        for s in range(n_choice):
            cand[s, s:] = fl[s] + dp[: n_units - s]
        best = np.argmin(cand, axis=0)   # ties -> smallest spend
        dp = cand[best, np.arange(n_units)]
        choice[i] = best
    # reconstruct (participants were folded in order; unwind in reverse)
    alloc = np.zeros(len(parts), dtype=int)
    j = budget_units
    for i in range(len(parts) - 1, -1, -1):
        alloc[i] = choice[i, j]
        j -= alloc[i]

    rewards = {}
    losses = {}
    total_spend = 0.0
    full_horizon = total_weeks - week_T
    for i, part in enumerate(parts):
        fl, fs = frontiers[i]
        seq = fs[alloc[i]]
        if seq is None:
            seq = np.zeros((horizon, 2))
        seq = np.asarray(seq, dtype=float)
        if len(seq) < full_horizon:   # pad beyond a capped lookahead with zeros
            seq = np.vstack([seq, np.zeros((full_horizon - len(seq), 2))])
        rewards[part.pid] = seq
        losses[part.pid] = float(fl[alloc[i]])
        total_spend += float(np.sum(seq))
    return IncentivePlan(week_start=week_T, rewards=rewards, losses=losses,
                         total_spend=total_spend)


def brute_force_incentives(
    participants: list[PlanningParticipant],
    ledger: BudgetLedger,
    loss: LossFunction,
    week_T: int,
    total_weeks: int,
    boxes: Boxes,
    reward_grid=DEFAULT_REWARD_GRID,
    guard: int = 1_000_000,
    chain_first: bool = True,
) -> IncentivePlan:
    """Exhaustive joint enumeration over all grid sequences within budget;
    exact test oracle (scalar rollout route, independent of the batch
    engine)."""
    horizon = total_weeks - week_T
    actions, spends = _action_table(reward_grid)
    n_act = len(actions)
    per_part = n_act ** horizon
    if per_part ** len(participants) > guard:
        raise ValueError("instance too large for brute force")
    parts = sorted(participants, key=lambda p: p.pid)
    per_sequences = list(itertools.product(range(n_act), repeat=horizon))
    per_losses = []
    per_spends = []
    for part in parts:
        losses_u = []
        spends_u = []
        for seq_idx in per_sequences:
            seq = actions[list(seq_idx)]
            if chain_first:
                # roll the previous Sunday weight through the first planned
                # day, then hand the Monday weight to the scalar rollout
                c0 = float(optimal_plan(part.theta, part.traits, boxes)[0])
                monday = boxes.W.clamp(
                    part.traits.b * part.w_current + part.traits.c * c0
                    + part.traits.k
                )
                start = PhysicalState(w=monday)
            else:
                start = PhysicalState(w=part.w_current)
            traj = rollout(part.theta, start, part.traits, boxes, seq,
                           mode="certainty_equivalent")
            losses_u.append(loss.value(traj.final_weight, part.w00_ref))
            spends_u.append(float(spends[list(seq_idx)].sum()))
        per_losses.append(losses_u)
        per_spends.append(spends_u)
    best = None
    for combo in itertools.product(range(per_part), repeat=len(parts)):
        spend = sum(per_spends[i][c] for i, c in enumerate(combo))
        if spend > ledger.remaining + 1e-9:
            continue
        value = sum(per_losses[i][c] for i, c in enumerate(combo))
        if best is None or value < best[0] - 1e-15:
            best = (value, combo, spend)
    if best is None:
        raise RuntimeError("no feasible joint plan (budget below zero spend?)")
    _, combo, spend = best
    rewards = {
        part.pid: actions[list(per_sequences[c])].astype(float)
        for part, c in zip(parts, combo)
    }
    losses_map = {part.pid: per_losses[i][c]
                  for i, (part, c) in enumerate(zip(parts, combo))}
    return IncentivePlan(week_start=week_T, rewards=rewards, losses=losses_map,
                         total_spend=spend)


# --- weekly adaptive step -----------------------------------------------------


@dataclass
class DiaParticipant:
    """Inputs for one participant in the weekly loop: observations so far,
    disbursement history, traits, and the trial-start reference weight."""

    pid: str
    obs: ObservationSet
    traits: ParticipantTraits
    w00_ref: float


@dataclass
class DiaStepResult:
    incentives: dict[str, tuple[float, float]]
    plan: IncentivePlan | None
    estimates: dict[str, tuple[float, MotivationalState]]
    failures: dict[str, str]


def dia_step(
    cohort: list[DiaParticipant],
    ledger: BudgetLedger,
    loss: LossFunction,
    week_T: int,
    total_weeks: int,
    boxes: Boxes,
    config: OptimizerConfig | None = None,
    warm_starts: dict[str, np.ndarray] | None = None,
    commit: bool = True,
) -> DiaStepResult:
    """One receding-horizon week: re-estimate every participant from data
    through week_T-1, optimize the remaining weeks under the budget, return
    only week_T incentives. A participant whose estimation fails gets the
    zero incentive; the step never aborts the cohort."""
    config = config or OptimizerConfig()
    warm_starts = warm_starts or {}
    estimates: dict[str, tuple[float, MotivationalState]] = {}
    failures: dict[str, str] = {}
    planning: list[PlanningParticipant] = []
    for part in sorted(cohort, key=lambda p: p.pid):
        try:
            obs = part.obs
            if config.obs_window is not None and obs.weeks > config.obs_window:
                s = obs.weeks - config.obs_window
                obs = ObservationSet(weights=obs.weights[s:], g=obs.g[s:],
                                     r_w=obs.r_w[s:], r_c=obs.r_c[s:])
            res = solve_smle(obs, part.traits, boxes, config.estimation,
                             x0=warm_starts.get(part.pid))
            estimates[part.pid] = (res.w00_hat, res.theta0_hat)
            w_cur, theta_cur = _advance_estimate(
                res.w00_hat, res.theta0_hat, obs, part.traits, boxes
            )
            planning.append(PlanningParticipant(
                pid=part.pid, w_current=w_cur, theta=theta_cur,
                w00_ref=part.w00_ref, traits=part.traits,
            ))
        except Exception as exc:  # estimation failure -> zero incentive
            failures[part.pid] = f"{type(exc).__name__}: {exc}"

    incentives = {p.pid: (0.0, 0.0) for p in cohort}
    plan = None
    if planning and ledger.remaining > 1e-9:
        plan = optimize_incentives(planning, ledger, loss, week_T, total_weeks,
                                   boxes, config, chain_first=True)
        for pid, seq in plan.rewards.items():
            incentives[pid] = (float(seq[0, 0]), float(seq[0, 1]))
    if commit:
        week_total = sum(rw + rc for rw, rc in incentives.values())
        ledger.commit(week_T, week_total)
    return DiaStepResult(incentives=incentives, plan=plan,
                         estimates=estimates, failures=failures)


def _advance_estimate(
    w00: float,
    theta0: MotivationalState,
    obs: ObservationSet,
    traits: ParticipantTraits,
    boxes: Boxes,
) -> tuple[float, MotivationalState]:
    """Roll the fitted initial conditions forward through the disbursement
    history (certainty equivalence) to the state entering the next week."""
    T = obs.weeks
    seq = np.column_stack([obs.r_w, obs.r_c])
    traj = rollout(theta0, PhysicalState(w=w00), traits, boxes, seq,
                   mode="certainty_equivalent")
    theta_T = traj.thetas[-1]
    theta_T = replace(theta_T, week_index=T)
    return traj.final_weight, theta_T


def apply_stochastic_wrapper(
    incentives: dict[str, tuple[float, float]],
    q: float,
    rng: np.random.Generator,
) -> dict[str, tuple[float, float]]:
    """Keep each planned amount with probability q, else zero it;
    independently per participant and reward type. Never increases spend."""
    if not (0.0 < q <= 1.0):
        raise ValueError("q must lie in (0, 1]")
    out = {}
    for pid in sorted(incentives):
        rw, rc = incentives[pid]
        kept_w = rw if rng.random() < q else 0.0
        kept_c = rc if rng.random() < q else 0.0
        out[pid] = (kept_w, kept_c)
    return out
