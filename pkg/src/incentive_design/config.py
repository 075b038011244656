"""Configuration loading: one TOML file surfaces every tunable default of
every module. Unknown keys are rejected; values are merged over the defaults
documented here."""
from __future__ import annotations

import hashlib
import json
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .boxes import Boxes, Interval
from .estimation import EstimationConfig
from .optimizer import OptimizerConfig
from .simulator import TrialConfig

# Every default below is either a model constant carried by the behavioral
# model or an implementation choice; each key is consumed by exactly one
# builder in this file, so the config is the single audited source of truth.
DEFAULT_CONFIG: dict[str, Any] = {
    "boxes": {
        # weight (lbs), daily calories (kcal)
        "weight": [90.0, 400.0],
        "calories": [800.0, 4000.0],
        # motivation and gain boxes; wide enough that incentive responses
        # move daily calories by a physically meaningful amount
        "motivation": [0.0, 1.0e8],
        "reward": [0.0, 30.0],
        "gain": [0.0, 1.0e7],
        "eps": 0.05,
    },
    "traits": {
        "calorie_noise_halfwidth": 500.0,
        "weight_noise_scale": 2.0,
        "gamma1": 0.8,
        "gamma2": 0.8,
        "gamma_p": 0.8,
        "gamma_f": 0.98,
        "p_baseline": 0.5,
    },
    "estimation": {
        "beta": 1.0,
        "tau_strict": 1.0e-6,
        "tau_amb": 0.0,            # 0 means "use 2*sigma"
        "branch_cap": 4096,
        "inner": "lp",
        "n_starts": 16,
        "n_refine": 2,
        "sweeps": 8,
        "coord_points": 9,
        "min_rel_step": 2.0e-4,
        "seed": 0,
    },
    "optimizer": {
        "reward_grid": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        "delta": 5.0,
        "beam_width": 64,
        "exhaustive_cap": 20000,
        "horizon_cap": 2,          # receding-horizon lookahead; 0 means "no cap"
        "obs_window": 10,          # weeks of data kept for in-loop refits; 0 means all
        # in-loop estimation: the fast zero-noise inner fit with a light
        # search, warm-started from the previous week
        "inner": "zero",
        "n_starts": 2,
        "n_refine": 1,
        "sweeps": 1,
        "coord_points": 3,
    },
    "trial": {
        "weeks": 24,
        "run_in_weeks": 2,
        "run_in_per_type": 2.5,
        "fixed_per_type": 2.5,
        "budgets": [520.0, 620.0, 720.0, 820.0, 920.0,
                    1171.0, 2343.0, 3514.0, 4686.0, 5857.0],
        "replicates": 5,
        "master_seed": 0,
        "p_obs": 0.7,
        "p_end": 0.9,
        "threshold_fraction": 0.05,
    },
    "cohort": {
        "n": 47,
        # archetype mixing weights; the remainder is the generic archetype
        "p_initial_achiever": 0.10,
        "p_constant_achiever": 0.73,
        "p_intervention_resistant": 0.05,
        "age": [25.0, 60.0],
        "height_cm": [150.0, 195.0],
        "activity_multiplier": [1.3, 1.8],
        # start weight as a multiple of the participant's own calorie
        # equilibrium weight; near 1 means little intrinsic loss without help
        "w00_over_equilibrium": [1.00, 1.25],
        "equilibrium_weight": [150.0, 280.0],
        "p0": [0.4, 0.8],
        "B": [0.4, 0.6],
        "r_hat": [5.0, 15.0],
        "k_p": [0.01, 0.1],
        # motivation scales (fractions of the motivation box are not used;
        # these are absolute draws, truncated to the boxes)
        "a1_high": [1.0e5, 2.0e5],
        "a1_mid": [1.0e4, 6.0e4],
        "a1_low": [0.0, 2.0e4],
        "a2_high": [1.0e7, 2.0e7],
        "a2_mid": [1.0e6, 5.0e6],
        "a2_low": [0.0, 5.0e5],
        "k1_responsive": [5.0e3, 2.0e4],
        "k2_responsive": [2.0e5, 1.0e6],
        "k1_flat": [0.0, 5.0e2],
        "k2_flat": [0.0, 1.0e3],
    },
    "prediction": {
        "n_samples": 1000,
        "threshold": 0.05,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise KeyError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise TypeError(f"config key {where!r} must be a table")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    """Merge a TOML file over the defaults; None yields pure defaults."""
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return _merge(DEFAULT_CONFIG, data)


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()
    ).hexdigest()


def boxes_from_config(config: dict) -> Boxes:
    b = config["boxes"]
    return Boxes(
        W=Interval(*b["weight"]),
        F=Interval(*b["calories"]),
        A_set=Interval(*b["motivation"]),
        R=Interval(*b["reward"]),
        K=Interval(*b["gain"]),
        eps=b["eps"],
    )


def estimation_config_from(config: dict, seed: int | None = None) -> EstimationConfig:
    e = config["estimation"]
    return EstimationConfig(
        beta=e["beta"], tau_strict=e["tau_strict"],
        tau_amb=None if e["tau_amb"] == 0.0 else e["tau_amb"],
        branch_cap=int(e["branch_cap"]), inner=e["inner"],
        n_starts=int(e["n_starts"]), n_refine=int(e["n_refine"]),
        sweeps=int(e["sweeps"]), coord_points=int(e["coord_points"]),
        min_rel_step=e["min_rel_step"],
        seed=int(e["seed"]) if seed is None else seed,
    )


def optimizer_config_from(config: dict, seed: int | None = None) -> OptimizerConfig:
    o = config["optimizer"]
    est = EstimationConfig(
        inner=o["inner"], n_starts=int(o["n_starts"]),
        n_refine=int(o["n_refine"]), sweeps=int(o["sweeps"]),
        coord_points=int(o["coord_points"]),
        seed=0 if seed is None else seed,
    )
    return OptimizerConfig(
        reward_grid=tuple(float(r) for r in o["reward_grid"]),
        delta=o["delta"], beam_width=int(o["beam_width"]),
        exhaustive_cap=int(o["exhaustive_cap"]),
        horizon_cap=None if int(o["horizon_cap"]) == 0 else int(o["horizon_cap"]),
        obs_window=None if int(o["obs_window"]) == 0 else int(o["obs_window"]),
        estimation=est,
    )


def trial_config_from(config: dict, seed: int | None = None) -> TrialConfig:
    t = config["trial"]
    return TrialConfig(
        weeks=int(t["weeks"]), run_in_weeks=int(t["run_in_weeks"]),
        run_in_per_type=t["run_in_per_type"], fixed_per_type=t["fixed_per_type"],
        budgets=tuple(float(b) for b in t["budgets"]),
        replicates=int(t["replicates"]),
        master_seed=int(t["master_seed"]) if seed is None else seed,
        p_obs=t["p_obs"], p_end=t["p_end"],
        threshold_fraction=t["threshold_fraction"],
        optimizer=optimizer_config_from(config, seed=0),
    )
