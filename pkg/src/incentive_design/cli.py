"""Command-line entry point.

Subcommands map 1:1 onto library operations: gen-cohort, fit, predict,
optimize, simulate, sweep, export-mip, bound-check. Every run accepts
--config/--seed/--out, writes a reproducibility manifest alongside its
outputs, and exits 0 on success, 1 on domain errors, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    boxes_from_config,
    config_hash,
    estimation_config_from,
    load_config,
    optimizer_config_from,
    trial_config_from,
)
from .dynamics import PhysicalState, rollout
from .estimation import observations_from_trajectory, solve_smle, surrogate_bound_check, theta_to_vector
from .io import (
    generate_synthetic_cohort,
    load_cohort,
    load_observations,
    save_cohort,
    write_manifest,
)
from .mip import (
    PiecewiseBilinearSpec,
    PlanningParticipant,
    build_smle_mip,
    read_lp_file,
    write_model_file,
)
from .optimizer import BudgetLedger, LossFunction, optimize_incentives
from .prediction import predict_final_weight
from .simulator import Policy, budget_sweep, default_policies, metrics, run_trial


class _Log:
    """Plain-text progress logging on stderr. Color is never emitted, so
    NO_COLOR is honored by construction; --quiet suppresses the messages."""

    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, msg: str) -> None:
        if not self.quiet:
            print(msg, file=sys.stderr)


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", default=None, help="TOML config file")
    sp.add_argument("--seed", type=int, default=None, help="master seed override")
    sp.add_argument("--out", default=".", help="output directory")
    sp.add_argument("--quiet", action="store_true", help="suppress progress logs")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incentive-design",
        description="Personalized financial incentives for weight-loss "
                    "interventions: estimation, prediction, optimization, "
                    "and trial simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-cohort", help="sample a synthetic cohort")
    p.add_argument("--n", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("fit", help="estimate latent parameters from observations")
    p.add_argument("--obs", required=True, help="observation CSV")
    p.add_argument("--cohort", default=None,
                   help="cohort JSON supplying per-participant traits")
    _add_common(p)

    p = sub.add_parser("predict", help="forecast final weights from estimates")
    p.add_argument("--estimates", required=True, help="estimates JSON from fit")
    p.add_argument("--cohort", required=True)
    p.add_argument("--horizon", type=int, default=24)
    _add_common(p)

    p = sub.add_parser("optimize", help="allocate incentives under a budget")
    p.add_argument("--cohort", required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--week", type=int, default=0)
    p.add_argument("--loss", choices=["indicator", "hinge"], default="indicator")
    _add_common(p)

    p = sub.add_parser("simulate", help="run one trial cell")
    p.add_argument("--cohort", default=None)
    p.add_argument("--policy", default="dia-indicator-q1")
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--replicate", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("sweep", help="full policy x budget x replicate sweep")
    p.add_argument("--cohort", default=None)
    _add_common(p)

    p = sub.add_parser("export-mip", help="emit the estimation MILP as LP/MPS text")
    p.add_argument("--weeks", type=int, default=2)
    p.add_argument("--format", choices=["lp", "mps"], default="lp")
    _add_common(p)

    p = sub.add_parser("bound-check", help="fuzz the likelihood sandwich bounds")
    p.add_argument("--samples", type=int, default=10000)
    _add_common(p)

    return parser


def _cohort_for(args, cfg, boxes, seed):
    if getattr(args, "cohort", None):
        return load_cohort(args.cohort)
    return generate_synthetic_cohort(
        cfg["cohort"]["n"], seed, cfg["cohort"], cfg["traits"], boxes)


def _policy_by_name(name: str) -> Policy:
    for p in default_policies():
        if p.name == name:
            return p
    raise ValueError(f"unknown policy {name!r}; known: "
                     + ", ".join(p.name for p in default_policies()))


def _write_results_csv(path: Path, results) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "budget", "replicate", "metric", "value"])
        for cell in results.cells:
            base = [cell.policy, cell.budget, cell.replicate]
            writer.writerow(base + ["success_count", cell.success_count])
            writer.writerow(base + ["bottom5_avg_pct_loss",
                                    cell.bottom5_avg_pct_loss])
            writer.writerow(base + ["total_spend", float(cell.weekly_spend.sum())])
            writer.writerow(base + ["estimation_failures",
                                    cell.estimation_failures])


def _write_curves(out: Path, results) -> list[Path]:
    rows = metrics(results)
    files = []
    for metric_name, fname in (("success_count_mean", "success_vs_budget.csv"),
                               ("bottom5_avg_pct_loss_mean",
                                "bottom5_vs_budget.csv")):
        path = out / fname
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["policy", "budget", metric_name])
            for row in rows:
                writer.writerow([row["policy"], row["budget"], row[metric_name]])
        files.append(path)
    return files


def _run(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg["trial"]["master_seed"]
    boxes = boxes_from_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = _Log(args.quiet)
    files: list[Path] = []

    if args.command == "gen-cohort":
        n = args.n if args.n is not None else cfg["cohort"]["n"]
        cohort = generate_synthetic_cohort(n, seed, cfg["cohort"],
                                           cfg["traits"], boxes)
        cohort.validate(boxes)
        path = out / "cohort.json"
        save_cohort(path, cohort)
        files.append(path)
        log(f"wrote {path} ({n} participants)")

    elif args.command == "fit":
        obs_map = load_observations(args.obs, boxes)
        traits_by_pid = ({m.pid: m.traits
                          for m in load_cohort(args.cohort).participants}
                         if args.cohort else {})
        est_cfg = estimation_config_from(cfg, seed=seed)
        estimates = {}
        for pid, obs in obs_map.items():
            traits = traits_by_pid.get(pid)
            if traits is None:
                raise ValueError(
                    f"no traits for participant {pid!r}; pass --cohort")
            res = solve_smle(obs, traits, boxes, est_cfg)
            estimates[pid] = {
                "vector": theta_to_vector(res.w00_hat, res.theta0_hat).tolist(),
                "objective": res.objective,
                "l1_path": res.l1_path.tolist(),
            }
            log(f"fit {pid}: objective {res.objective:.4f}")
        path = out / "estimates.json"
        path.write_text(json.dumps(estimates, indent=2, sort_keys=True) + "\n")
        files.append(path)

    elif args.command == "predict":
        cohort = load_cohort(args.cohort)
        estimates = json.loads(Path(args.estimates).read_text())
        traits_by_pid = {m.pid: m.traits for m in cohort.participants}
        rng = np.random.default_rng(seed)
        forecasts = {}
        future = np.zeros((args.horizon, 2))
        from .estimation import vector_to_theta
        for pid, item in sorted(estimates.items()):
            w00, theta = vector_to_theta(np.asarray(item["vector"]))
            fc = predict_final_weight(
                (w00, theta), future, traits_by_pid[pid], boxes,
                n_samples=cfg["prediction"]["n_samples"], rng=rng,
                threshold=cfg["prediction"]["threshold"])
            forecasts[pid] = {
                "mean_final_weight": float(np.mean(fc.samples)),
                "p_success": fc.p_success,
                "horizon_weeks": fc.horizon_weeks,
            }
        path = out / "forecast.json"
        path.write_text(json.dumps(forecasts, indent=2, sort_keys=True) + "\n")
        files.append(path)

    elif args.command == "optimize":
        cohort = load_cohort(args.cohort)
        trial_cfg = trial_config_from(cfg, seed=seed)
        parts = [PlanningParticipant(pid=m.pid, w_current=m.w00,
                                     theta=m.theta0, w00_ref=m.w00,
                                     traits=m.traits)
                 for m in cohort.participants]
        plan = optimize_incentives(
            parts, BudgetLedger(G=args.budget), LossFunction(args.loss),
            week_T=args.week, total_weeks=trial_cfg.weeks, boxes=boxes,
            config=optimizer_config_from(cfg, seed=seed), chain_first=False)
        path = out / "plan.json"
        path.write_text(json.dumps({
            "week_start": plan.week_start,
            "total_spend": plan.total_spend,
            "rewards": {pid: np.asarray(seq).tolist()
                        for pid, seq in sorted(plan.rewards.items())},
            "losses": {pid: float(v) for pid, v in sorted(plan.losses.items())},
        }, indent=2) + "\n")
        files.append(path)
        log(f"planned spend {plan.total_spend} over weeks {plan.week_start}+")

    elif args.command == "simulate":
        cohort = _cohort_for(args, cfg, boxes, seed)
        trial_cfg = trial_config_from(cfg, seed=seed)
        cell = run_trial(trial_cfg, cohort, _policy_by_name(args.policy),
                         args.budget, boxes, replicate=args.replicate)
        path = out / "trial.json"
        path.write_text(json.dumps({
            "policy": cell.policy, "budget": cell.budget,
            "replicate": cell.replicate,
            "weekly_spend": cell.weekly_spend.tolist(),
            "final_weights": cell.final_weights.tolist(),
            "initial_weights": cell.initial_weights.tolist(),
            "success_count": cell.success_count,
            "bottom5_avg_pct_loss": cell.bottom5_avg_pct_loss,
            "estimation_failures": cell.estimation_failures,
        }, indent=2) + "\n")
        files.append(path)
        log(f"success {cell.success_count}, "
            f"spend {cell.weekly_spend.sum():.0f}/{cell.budget:.0f}")

    elif args.command == "sweep":
        cohort = _cohort_for(args, cfg, boxes, seed)
        trial_cfg = trial_config_from(cfg, seed=seed)
        results = budget_sweep(
            trial_cfg, cohort, default_policies(), boxes,
            progress=lambda c: log(
                f"cell {c.policy} budget {c.budget:.0f} rep {c.replicate}: "
                f"success {c.success_count}"))
        path = out / "results.csv"
        _write_results_csv(path, results)
        files.append(path)
        files.extend(_write_curves(out, results))

    elif args.command == "export-mip":
        cohort = _cohort_for(args, cfg, boxes, seed)
        m = cohort.participants[0]
        rewards = np.tile([10.0, 5.0], (args.weeks, 1))
        traj = rollout(m.theta0, PhysicalState(w=m.w00), m.traits, boxes,
                       rewards, mode="stochastic",
                       rng=np.random.default_rng(seed))
        obs = observations_from_trajectory(
            traj.w, traj.g, rewards[:, 0], rewards[:, 1],
            rng=np.random.default_rng(seed + 1), sigma=m.traits.sigma)
        model = build_smle_mip(obs, m.traits, boxes,
                               pw=PiecewiseBilinearSpec(segments=4))
        path = out / f"estimation.{args.format}"
        write_model_file(model, args.format, str(path))
        if args.format == "lp":
            read_lp_file(str(path))     # emitted text must parse back
        files.append(path)
        log(f"wrote {path} ({len(model.variables)} vars, "
            f"{len(model.constraints)} constraints)")

    elif args.command == "bound-check":
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(args.samples):
            eps = float(rng.uniform(1e-3, 0.49))
            p = float(rng.uniform(eps, 1.0 - eps))
            g = int(rng.integers(0, 2))
            lower, mid, upper = surrogate_bound_check(p, g, eps)
            worst = max(worst, lower - mid, mid - upper)
        path = out / "bound_check.json"
        path.write_text(json.dumps({
            "samples": args.samples,
            "max_violation": worst,
            "holds": worst <= 0.0,
        }, indent=2) + "\n")
        files.append(path)
        if worst > 0:
            raise RuntimeError(f"sandwich bound violated by {worst}")
        log(f"sandwich bounds hold over {args.samples} samples")

    write_manifest(out, seed, config_hash(cfg), files)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _run(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
