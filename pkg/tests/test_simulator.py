"""Trial-simulator tests: determinism, budget accounting, run-in behavior,
capped grants, and metric aggregation on small cohorts."""
import numpy as np
import pytest

from incentive_design.boxes import Boxes, Interval
from incentive_design.dynamics import (
    Demographics,
    MotivationalState,
    ParticipantTraits,
)
from incentive_design.estimation import EstimationConfig
from incentive_design.optimizer import OptimizerConfig
from incentive_design.simulator import (
    CohortMember,
    CohortSpec,
    Policy,
    TrialConfig,
    _capped_amounts,
    budget_sweep,
    default_policies,
    metrics,
    run_trial,
)

BOXES = Boxes(A_set=Interval(0.0, 1e8), K=Interval(0.0, 1e7))
TRAITS = ParticipantTraits(b=0.9984448243105064, c=1.0 / 3500.0,
                           k=-0.2974285714285714, A=500.0, sigma=2.0)
DEMO = Demographics(age=40.0, sex="male", height_cm=170.0)


def _member(pid, w00=220.0, a1=1.0e5, a2=2.0e7):
    theta = MotivationalState(a1=a1, a2=a2, p=0.6, B=0.45, f_b=2200.0,
                              r_hat=10.0, k1=1.0e4, k2=1.0e6, k_p=0.05)
    return CohortMember(pid=pid, demographics=DEMO, w00=w00, theta0=theta,
                        traits=TRAITS, archetype="generic")


def _cohort(n=2):
    return CohortSpec([_member(f"p{i}", w00=210.0 + 10.0 * i)
                       for i in range(n)])


def _config(weeks=5, run_in=1, seed=0):
    return TrialConfig(
        weeks=weeks, run_in_weeks=run_in, replicates=2, master_seed=seed,
        optimizer=OptimizerConfig(
            reward_grid=(0.0, 15.0, 30.0), delta=15.0, beam_width=8,
            horizon_cap=2,
            estimation=EstimationConfig(inner="zero", n_starts=2, n_refine=1,
                                        sweeps=1, coord_points=3, seed=0)),
    )


class TestValidation:
    def test_policy_kind_and_q(self):
        with pytest.raises(ValueError):
            Policy("x", "random")
        with pytest.raises(ValueError):
            Policy("x", "dia", q=0.0)

    def test_default_policies(self):
        pols = default_policies()
        assert [p.name for p in pols] == [
            "dia-indicator-q1", "dia-indicator-q0.75", "dia-indicator-q0.25",
            "dia-hinge-q1", "dia-hinge-q0.75", "dia-hinge-q0.25", "fixed"]
        assert sum(p.kind == "fixed" for p in pols) == 1

    def test_trial_config(self):
        with pytest.raises(ValueError):
            TrialConfig(weeks=4, run_in_weeks=4)
        with pytest.raises(ValueError):
            TrialConfig(budgets=(100.0, 50.0))

    def test_cohort_duplicate_ids(self):
        with pytest.raises(ValueError):
            CohortSpec([_member("a"), _member("a")])

    def test_cohort_box_validation(self):
        spec = CohortSpec([_member("a", w00=500.0)])
        with pytest.raises(ValueError):
            spec.validate(BOXES)

    def test_budget_below_run_in(self):
        cfg = _config()
        # run-in needs 1 week x 2 people x 2 types x $2.50 = $10
        with pytest.raises(ValueError):
            run_trial(cfg, _cohort(), Policy("fixed", "fixed"), 5.0, BOXES)


class TestCappedAmounts:
    def test_full_or_nothing_in_pid_order(self):
        granted = _capped_amounts([("b", 10.0), ("a", 10.0), ("c", 10.0)],
                                  remaining=15.0)
        assert granted == {"a": 10.0, "b": 0.0, "c": 0.0}

    def test_skips_large_and_grants_later_small(self):
        granted = _capped_amounts([("a", 20.0), ("b", 5.0)], remaining=10.0)
        assert granted == {"a": 0.0, "b": 5.0}


class TestRunTrial:
    def test_fixed_policy_spend_schedule(self):
        cfg = _config(weeks=4, run_in=1)
        cell = run_trial(cfg, _cohort(), Policy("fixed", "fixed"), 100.0,
                         BOXES)
        # 2 people x 2 types x $2.50 every week
        assert np.allclose(cell.weekly_spend, 10.0)
        assert cell.trajectories.shape == (2, 4, 7)
        assert cell.estimation_failures == 0

    def test_spend_never_exceeds_budget(self):
        cfg = _config(weeks=5, run_in=1)
        for policy in (Policy("fixed", "fixed"),
                       Policy("dia", "dia", loss_kind="hinge")):
            cell = run_trial(cfg, _cohort(), policy, 60.0, BOXES)
            assert cell.weekly_spend.sum() <= 60.0 + 1e-9

    def test_deterministic(self):
        cfg = _config()
        pol = Policy("dia", "dia", loss_kind="indicator", q=0.75)
        a = run_trial(cfg, _cohort(), pol, 200.0, BOXES, replicate=1)
        b = run_trial(cfg, _cohort(), pol, 200.0, BOXES, replicate=1)
        assert np.array_equal(a.trajectories, b.trajectories)
        assert np.array_equal(a.weekly_spend, b.weekly_spend)

    def test_replicates_differ(self):
        cfg = _config()
        pol = Policy("fixed", "fixed")
        a = run_trial(cfg, _cohort(), pol, 200.0, BOXES, replicate=0)
        b = run_trial(cfg, _cohort(), pol, 200.0, BOXES, replicate=1)
        assert not np.array_equal(a.trajectories, b.trajectories)

    def test_run_in_identical_across_policies(self):
        cfg = _config(weeks=4, run_in=2)
        a = run_trial(cfg, _cohort(), Policy("fixed", "fixed"), 200.0, BOXES)
        b = run_trial(cfg, _cohort(), Policy("dia", "dia"), 200.0, BOXES)
        # common random numbers: policies share noise streams within a cell,
        # so the run-in weeks (same fixed schedule) produce identical truth
        assert np.array_equal(a.trajectories[:, :2], b.trajectories[:, :2])

    def test_success_and_bottom_metrics_consistent(self):
        cfg = _config(weeks=4, run_in=1)
        cell = run_trial(cfg, _cohort(3), Policy("fixed", "fixed"), 100.0,
                         BOXES)
        pct = (cell.initial_weights - cell.final_weights) / cell.initial_weights
        assert cell.success_count == int(np.sum(pct >= 0.05))
        assert cell.bottom5_avg_pct_loss == pytest.approx(
            float(np.mean(np.sort(pct)[:3])))
        assert np.allclose(cell.final_weights, cell.trajectories[:, -1, -1])

    def test_cumulative_spend(self):
        cfg = _config(weeks=3, run_in=1)
        cell = run_trial(cfg, _cohort(), Policy("fixed", "fixed"), 100.0,
                         BOXES)
        assert np.allclose(cell.cumulative_spend,
                           np.cumsum(cell.weekly_spend))


class TestSweepAndMetrics:
    def test_sweep_shapes_and_lookup(self):
        cfg = _config(weeks=3, run_in=1)
        policies = [Policy("fixed", "fixed"), Policy("dia", "dia")]
        res = budget_sweep(cfg, _cohort(), policies, BOXES,
                           budgets=(50.0, 100.0))
        assert len(res.cells) == 2 * 2 * cfg.replicates
        cell = res.cell("dia", 100.0, 1)
        assert cell.policy == "dia" and cell.replicate == 1
        with pytest.raises(KeyError):
            res.cell("nope", 50.0, 0)
        assert res.config_summary["budgets"] == [50.0, 100.0]

    def test_metrics_rows(self):
        cfg = _config(weeks=3, run_in=1)
        res = budget_sweep(cfg, _cohort(), [Policy("fixed", "fixed")], BOXES,
                           budgets=(50.0,))
        rows = metrics(res)
        assert len(rows) == 1
        row = rows[0]
        assert row["policy"] == "fixed" and row["budget"] == 50.0
        assert row["replicates"] == cfg.replicates
        spends = [c.weekly_spend.sum() for c in res.cells]
        assert row["total_spend_mean"] == pytest.approx(np.mean(spends))
