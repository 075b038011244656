"""Full simulated trials: ground-truth cohort dynamics, weekly adaptive or
fixed incentive policies, run-in period, budget sweeps, replicates, and
outcome metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Boxes, ClampLog
from .dynamics import (
    DAYS_PER_WEEK,
    Demographics,
    MotivationalState,
    ParticipantTraits,
    PhysicalState,
    simulate_week,
)
from .estimation import ObservationSet
from .optimizer import (
    BudgetLedger,
    DiaParticipant,
    LossFunction,
    OptimizerConfig,
    apply_stochastic_wrapper,
    dia_step,
)


@dataclass(frozen=True)
class Policy:
    name: str
    kind: str                 # "dia" or "fixed"
    loss_kind: str = "indicator"
    q: float = 1.0            # probability of keeping the planned incentive

    def __post_init__(self) -> None:
        if self.kind not in ("dia", "fixed"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not (0.0 < self.q <= 1.0):
            raise ValueError("q must lie in (0, 1]")


def default_policies() -> list[Policy]:
    out = []
    for loss_kind in ("indicator", "hinge"):
        for q in (1.0, 0.75, 0.25):
            out.append(Policy(name=f"dia-{loss_kind}-q{q:g}", kind="dia",
                              loss_kind=loss_kind, q=q))
    out.append(Policy(name="fixed", kind="fixed"))
    return out


DEFAULT_BUDGETS = (520.0, 620.0, 720.0, 820.0, 920.0,
                   1171.0, 2343.0, 3514.0, 4686.0, 5857.0)


@dataclass
class TrialConfig:
    weeks: int = 24
    run_in_weeks: int = 2
    run_in_per_type: float = 2.5          # dollars per reward type per week
    fixed_per_type: float = 2.5           # fixed-schedule level after run-in
    budgets: tuple[float, ...] = DEFAULT_BUDGETS
    replicates: int = 5
    master_seed: int = 0
    p_obs: float = 0.7                    # interior-day observation probability
    p_end: float = 0.9                    # day-0/day-6 observation probability
    threshold_fraction: float = 0.05
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self) -> None:
        if not (0 <= self.run_in_weeks < self.weeks):
            raise ValueError("run_in_weeks must be inside the trial")
        if list(self.budgets) != sorted(self.budgets) or min(self.budgets) <= 0:
            raise ValueError("budgets must be positive ascending")


@dataclass(frozen=True)
class CohortMember:
    pid: str
    demographics: Demographics
    w00: float
    theta0: MotivationalState
    traits: ParticipantTraits
    archetype: str = "generic"


@dataclass
class CohortSpec:
    participants: list[CohortMember]

    def __post_init__(self) -> None:
        ids = [p.pid for p in self.participants]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate participant ids")

    def validate(self, boxes: Boxes) -> None:
        for p in self.participants:
            if not boxes.W.contains(p.w00):
                raise ValueError(f"{p.pid}: w00 outside the weight box")
            if not p.theta0.in_boxes(boxes):
                raise ValueError(f"{p.pid}: theta0 outside the boxes")


@dataclass
class TrialCell:
    policy: str
    budget: float
    replicate: int
    weekly_spend: np.ndarray              # (weeks,)
    trajectories: np.ndarray              # (n, weeks, 7) true daily weights
    initial_weights: np.ndarray           # (n,) true w00
    final_weights: np.ndarray             # (n,)
    success_count: int
    bottom5_avg_pct_loss: float
    estimation_failures: int
    clamp_events: int

    @property
    def cumulative_spend(self) -> np.ndarray:
        return np.cumsum(self.weekly_spend)


@dataclass
class TrialResults:
    cells: list[TrialCell]
    config_summary: dict

    def cell(self, policy: str, budget: float, replicate: int) -> TrialCell:
        for c in self.cells:
            if c.policy == policy and c.budget == budget and c.replicate == replicate:
                return c
        raise KeyError((policy, budget, replicate))


def _cell_rng(master_seed: int, tags: tuple[int, ...]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed,) + tags))


def _capped_amounts(requests: list[tuple[str, float]], remaining: float,
                    ) -> dict[str, float]:
    """Grant requested amounts in participant-id order until the budget is
    exhausted (partial grants are not made: a request is granted in full or
    not at all)."""
    out = {}
    for pid, amount in sorted(requests):
        if amount <= remaining + 1e-9:
            out[pid] = amount
            remaining -= amount
        else:
            out[pid] = 0.0
    return out


def run_trial(
    config: TrialConfig,
    cohort: CohortSpec,
    policy: Policy,
    budget: float,
    boxes: Boxes,
    replicate: int = 0,
) -> TrialCell:
    """Simulate one (policy, budget, replicate) cell.

    Weeks before run_in_weeks disburse the fixed run-in schedule; afterwards
    the policy decides weekly incentives (re-estimating from accumulated
    noisy observations for adaptive policies). Ground truth advances through
    the stochastic weekly model; observations get Laplace noise and missing
    days. Deterministic given (config.master_seed, inputs).

    Noise streams are seeded by (budget, replicate) but not by the policy:
    every policy sees the same disturbances within a cell (common random
    numbers), so cross-policy differences reflect the incentives, not the
    seed."""
    n = len(cohort.participants)
    run_in_total = config.run_in_weeks * n * 2.0 * config.run_in_per_type
    if budget < run_in_total - 1e-9:
        raise ValueError(
            f"budget {budget} below the run-in spend {run_in_total}"
        )
    weeks = config.weeks
    ledger = BudgetLedger(G=budget)
    clamp_log = ClampLog()
    members = sorted(cohort.participants, key=lambda m: m.pid)
    phys = {m.pid: PhysicalState(w=m.w00) for m in members}
    theta = {m.pid: m.theta0 for m in members}
    obs_w = {m.pid: np.full((weeks, DAYS_PER_WEEK), np.nan) for m in members}
    obs_g = {m.pid: np.zeros(weeks, dtype=int) for m in members}
    obs_rw = {m.pid: np.zeros(weeks) for m in members}
    obs_rc = {m.pid: np.zeros(weeks) for m in members}
    trajectories = np.empty((n, weeks, DAYS_PER_WEEK))
    weekly_spend = np.zeros(weeks)
    warm: dict[str, np.ndarray] = {}
    failures = 0
    base = (int(round(budget)), replicate)

    for t in range(weeks):
        # --- decide incentives ---
        if t < config.run_in_weeks or policy.kind == "fixed":
            per_type = (config.run_in_per_type if t < config.run_in_weeks
                        else config.fixed_per_type)
            requests = [(m.pid, 2.0 * per_type) for m in members]
            granted = _capped_amounts(requests, ledger.remaining)
            incentives = {pid: (amount / 2.0, amount / 2.0)
                          for pid, amount in granted.items()}
        else:
            dia_cohort = [
                DiaParticipant(
                    pid=m.pid,
                    obs=ObservationSet(
                        weights=obs_w[m.pid][:t].copy(), g=obs_g[m.pid][:t],
                        r_w=obs_rw[m.pid][:t], r_c=obs_rc[m.pid][:t],
                    ),
                    traits=m.traits,
                    w00_ref=float(obs_w[m.pid][0, 0]) if not np.isnan(obs_w[m.pid][0, 0])
                    else float(np.nanmean(obs_w[m.pid][0])) if not np.all(np.isnan(obs_w[m.pid][0]))
                    else m.w00,
                )
                for m in members
            ]
            step = dia_step(
                dia_cohort, ledger, LossFunction(policy.loss_kind,
                                                 config.threshold_fraction),
                week_T=t, total_weeks=weeks, boxes=boxes,
                config=config.optimizer, warm_starts=warm, commit=False,
            )
            failures += len(step.failures)
            for pid, est in step.estimates.items():
                warm[pid] = np.concatenate([[est[0]], [
                    est[1].a1, est[1].a2, est[1].p, est[1].B, est[1].f_b,
                    est[1].r_hat, est[1].k1, est[1].k2, est[1].k_p]])
            incentives = step.incentives
            if policy.q < 1.0:
                wrap_rng = _cell_rng(config.master_seed, base + (9_000_000, t))
                incentives = apply_stochastic_wrapper(incentives, policy.q,
                                                      wrap_rng)
            requests = [(pid, rw + rc) for pid, (rw, rc) in incentives.items()]
            granted = _capped_amounts(requests, ledger.remaining)
            incentives = {
                pid: incentives[pid] if granted[pid] > 0 or
                (incentives[pid][0] + incentives[pid][1]) == 0 else (0.0, 0.0)
                for pid in granted
            }
        week_total = sum(rw + rc for rw, rc in incentives.values())
        ledger.commit(t, week_total)
        weekly_spend[t] = week_total

        # --- advance ground truth and observe ---
        for i, m in enumerate(members):
            rw, rc = incentives[m.pid]
            sim_rng = _cell_rng(config.master_seed, base + (i, t))
            outcome, phys[m.pid], theta[m.pid] = simulate_week(
                phys[m.pid], theta[m.pid], m.traits, (rw, rc), sim_rng, boxes,
                chain_day0=(t > 0), log=clamp_log,
            )
            trajectories[i, t] = outcome.w_path
            obs_rng = _cell_rng(config.master_seed, base + (i, t, 7_000_000))
            noisy = outcome.w_path + obs_rng.laplace(0.0, m.traits.sigma,
                                                     size=DAYS_PER_WEEK)
            u = obs_rng.random(DAYS_PER_WEEK)
            keep = np.full(DAYS_PER_WEEK, config.p_obs)
            keep[0] = config.p_end
            keep[DAYS_PER_WEEK - 1] = config.p_end
            observed = u < keep
            row = np.where(observed, noisy, np.nan)
            obs_w[m.pid][t] = row
            obs_g[m.pid][t] = outcome.g
            obs_rw[m.pid][t] = rw
            obs_rc[m.pid][t] = rc

    initial = np.array([m.w00 for m in members])
    final = trajectories[:, -1, -1]
    pct_loss = (initial - final) / initial
    success = int(np.sum(pct_loss >= config.threshold_fraction))
    k = min(5, n)
    bottom = np.sort(pct_loss)[:k]
    return TrialCell(
        policy=policy.name, budget=budget, replicate=replicate,
        weekly_spend=weekly_spend, trajectories=trajectories,
        initial_weights=initial, final_weights=final,
        success_count=success, bottom5_avg_pct_loss=float(np.mean(bottom)),
        estimation_failures=failures, clamp_events=clamp_log.total,
    )


def budget_sweep(
    config: TrialConfig,
    cohort: CohortSpec,
    policies: list[Policy],
    boxes: Boxes,
    budgets: tuple[float, ...] | None = None,
    progress=None,
) -> TrialResults:
    """Cross policies x budgets x replicates."""
    budgets = budgets if budgets is not None else config.budgets
    cells = []
    for policy in policies:
        for budget in budgets:
            for rep in range(config.replicates):
                cell = run_trial(config, cohort, policy, budget, boxes,
                                 replicate=rep)
                cells.append(cell)
                if progress is not None:
                    progress(cell)
    return TrialResults(
        cells=cells,
        config_summary={
            "weeks": config.weeks, "replicates": config.replicates,
            "budgets": list(budgets), "policies": [p.name for p in policies],
            "master_seed": config.master_seed,
            "cohort_size": len(cohort.participants),
        },
    )


def metrics(results: TrialResults) -> list[dict]:
    """Per (policy, budget): replicate-mean success count, bottom-5 average
    percent loss, and total spend."""
    keyed: dict[tuple[str, float], list[TrialCell]] = {}
    for cell in results.cells:
        keyed.setdefault((cell.policy, cell.budget), []).append(cell)
    rows = []
    for (policy, budget), cells in sorted(keyed.items()):
        rows.append({
            "policy": policy,
            "budget": budget,
            "replicates": len(cells),
            "success_count_mean": float(np.mean([c.success_count for c in cells])),
            "bottom5_avg_pct_loss_mean": float(np.mean(
                [c.bottom5_avg_pct_loss for c in cells])),
            "total_spend_mean": float(np.mean(
                [c.weekly_spend.sum() for c in cells])),
        })
    return rows
