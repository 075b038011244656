"""File formats and synthetic cohorts: observation CSV round-tripping,
cohort JSON, reproducibility manifests, and the archetype-mixing cohort
generator."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .boxes import Boxes
from .dynamics import (
    Demographics,
    MotivationalState,
    ParticipantTraits,
    mifflin_traits,
    plan_day_coefficients,
)
from .estimation import ObservationSet
from .simulator import CohortMember, CohortSpec

OBS_HEADER = ["participant_id", "week", "day",
              "weight_lbs", "goal_met", "reward_w", "reward_c"]

MANIFEST_SCHEMA = "incentive-design/manifest/1.0.0"


class ObservationFileError(ValueError):
    """Schema violation in an observation CSV; carries row-level messages."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        shown = errors[:10]
        msg = "; ".join(shown)
        if len(errors) > 10:
            msg += f" (+{len(errors) - 10} more)"
        super().__init__(msg)


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def load_observations(path: str | Path, boxes: Boxes | None = None,
                      ) -> dict[str, ObservationSet]:
    """Parse an observation CSV into per-participant ObservationSets.

    Rows carry (participant, week, day, weight); goal_met and the two reward
    amounts appear only on day-6 rows. Malformed rows are collected with
    their line numbers and reported together (first 10)."""
    boxes = boxes or Boxes()
    errors: list[str] = []
    rows: dict[str, dict[tuple[int, int], float]] = {}
    week_meta: dict[str, dict[int, tuple[int, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != OBS_HEADER:
            raise ObservationFileError(
                [f"line 1: header must be {', '.join(OBS_HEADER)}"]
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(OBS_HEADER):
                errors.append(f"line {lineno}: expected {len(OBS_HEADER)} fields")
                continue
            pid, week_s, day_s, w_s, g_s, rw_s, rc_s = [c.strip() for c in row]
            try:
                week = int(week_s)
                day = int(day_s)
            except ValueError:
                errors.append(f"line {lineno}: week/day must be integers")
                continue
            if not (0 <= week <= 23):
                errors.append(f"line {lineno}: week {week} outside [0, 23]")
                continue
            if not (0 <= day <= 6):
                errors.append(f"line {lineno}: day {day} outside [0, 6]")
                continue
            if w_s:
                try:
                    w = float(w_s)
                except ValueError:
                    errors.append(f"line {lineno}: bad weight {w_s!r}")
                    continue
            else:
                w = np.nan
            if day == 6:
                try:
                    g = int(g_s)
                    rw = float(rw_s)
                    rc = float(rc_s)
                except ValueError:
                    errors.append(f"line {lineno}: bad goal/reward fields")
                    continue
                if g not in (0, 1):
                    errors.append(f"line {lineno}: goal_met must be 0 or 1")
                    continue
                if not (boxes.R.contains(rw) and boxes.R.contains(rc)):
                    errors.append(
                        f"line {lineno}: reward outside "
                        f"[{boxes.R.lo}, {boxes.R.hi}]"
                    )
                    continue
                week_meta.setdefault(pid, {})[week] = (g, rw, rc)
            elif g_s or rw_s or rc_s:
                errors.append(
                    f"line {lineno}: goal/reward fields only belong on day-6 rows"
                )
                continue
            rows.setdefault(pid, {})[(week, day)] = w
            if len(errors) >= 10:
                break
    if errors:
        raise ObservationFileError(errors)
    out: dict[str, ObservationSet] = {}
    for pid in sorted(rows):
        weeks = max(w for (w, _) in rows[pid]) + 1
        weights = np.full((weeks, 7), np.nan)
        for (week, day), w in rows[pid].items():
            weights[week, day] = w
        g = np.zeros(weeks, dtype=int)
        r_w = np.zeros(weeks)
        r_c = np.zeros(weeks)
        missing = [t for t in range(weeks) if t not in week_meta.get(pid, {})]
        if missing:
            raise ObservationFileError(
                [f"participant {pid}: no day-6 row for week {t}" for t in missing]
            )
        for week, (gv, rw, rc) in week_meta[pid].items():
            g[week] = gv
            r_w[week] = rw
            r_c[week] = rc
        out[pid] = ObservationSet(weights=weights, g=g, r_w=r_w, r_c=r_c)
    return out


def save_observations(path: str | Path, obs_map: dict[str, ObservationSet]) -> None:
    """Write the canonical observation CSV (load(save(x)) == x, and
    save(load(f)) == f byte-for-byte for canonical files)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBS_HEADER)
        for pid in sorted(obs_map):
            obs = obs_map[pid]
            for week in range(obs.weeks):
                for day in range(7):
                    w = obs.weights[week, day]
                    w_s = "" if np.isnan(w) else _fmt(w)
                    if day == 6:
                        writer.writerow([pid, week, day, w_s,
                                         int(obs.g[week]),
                                         _fmt(obs.r_w[week]),
                                         _fmt(obs.r_c[week])])
                    else:
                        writer.writerow([pid, week, day, w_s, "", "", ""])


# --- cohort files -------------------------------------------------------------


def save_cohort(path: str | Path, cohort: CohortSpec) -> None:
    payload = []
    for m in cohort.participants:
        payload.append({
            "pid": m.pid,
            "archetype": m.archetype,
            "w00": m.w00,
            "demographics": dataclasses.asdict(m.demographics),
            "theta0": dataclasses.asdict(m.theta0),
            "traits": dataclasses.asdict(m.traits),
        })
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_cohort(path: str | Path) -> CohortSpec:
    payload = json.loads(Path(path).read_text())
    members = []
    for item in payload:
        members.append(CohortMember(
            pid=item["pid"],
            demographics=Demographics(**item["demographics"]),
            w00=float(item["w00"]),
            theta0=MotivationalState(**item["theta0"]),
            traits=ParticipantTraits(**item["traits"]),
            archetype=item.get("archetype", "generic"),
        ))
    return CohortSpec(members)


# --- synthetic cohorts --------------------------------------------------------

ARCHETYPES = ("initial_achiever", "constant_achiever",
              "intervention_resistant", "generic")


def _draw(rng: np.random.Generator, bounds) -> float:
    lo, hi = float(bounds[0]), float(bounds[1])
    return float(rng.uniform(lo, hi))


def generate_synthetic_cohort(
    n: int,
    master_seed: int,
    cohort_cfg: dict,
    traits_cfg: dict,
    boxes: Boxes,
) -> CohortSpec:
    """Sample a cohort mixing behavioral archetypes.

    Initial achievers start highly motivated but decay toward low baselines;
    constant achievers hold their motivation (baseline equals start);
    intervention-resistant participants have low motivation and near-zero
    incentive gains; the generic remainder draws broadly. All draws are
    truncated into the boxes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, 101)))
    probs = [cohort_cfg["p_initial_achiever"],
             cohort_cfg["p_constant_achiever"],
             cohort_cfg["p_intervention_resistant"]]
    p_generic = 1.0 - sum(probs)
    if p_generic < -1e-9:
        raise ValueError("archetype proportions exceed 1")
    probs = probs + [max(p_generic, 0.0)]
    members = []
    width = len(str(max(n - 1, 1)))
    for i in range(n):
        arch = ARCHETYPES[int(rng.choice(4, p=np.asarray(probs) / sum(probs)))]
        demo = Demographics(
            age=round(_draw(rng, cohort_cfg["age"])),
            sex="male" if rng.random() < 0.5 else "female",
            height_cm=_draw(rng, cohort_cfg["height_cm"]),
            activity_multiplier=_draw(rng, cohort_cfg["activity_multiplier"]),
        )
        b, c, k = mifflin_traits(demo)
        if arch == "initial_achiever":
            a1 = _draw(rng, cohort_cfg["a1_high"])
            a2 = _draw(rng, cohort_cfg["a2_high"])
            k1 = _draw(rng, cohort_cfg["k1_responsive"])
            k2 = _draw(rng, cohort_cfg["k2_responsive"])
            gamma1 = gamma2 = 0.5      # fast decay to a low baseline
            a1_b, a2_b = 0.0, 0.0
        elif arch == "constant_achiever":
            a1 = _draw(rng, cohort_cfg["a1_mid"])
            a2 = _draw(rng, cohort_cfg["a2_mid"])
            k1 = _draw(rng, cohort_cfg["k1_responsive"])
            k2 = _draw(rng, cohort_cfg["k2_responsive"])
            gamma1 = gamma2 = traits_cfg["gamma1"]
            a1_b, a2_b = a1, a2        # motivation holds without help
        elif arch == "intervention_resistant":
            a1 = _draw(rng, cohort_cfg["a1_low"])
            a2 = _draw(rng, cohort_cfg["a2_low"])
            k1 = _draw(rng, cohort_cfg["k1_flat"])
            k2 = _draw(rng, cohort_cfg["k2_flat"])
            gamma1 = gamma2 = traits_cfg["gamma1"]
            a1_b, a2_b = 0.0, 0.0
        else:
            a1 = _draw(rng, cohort_cfg["a1_mid"])
            a2 = _draw(rng, cohort_cfg["a2_mid"])
            k1 = _draw(rng, cohort_cfg["k1_responsive"])
            k2 = _draw(rng, cohort_cfg["k2_responsive"])
            gamma1 = _draw(rng, (0.6, 0.9))
            gamma2 = _draw(rng, (0.6, 0.9))
            a1_b = a1 * rng.random()
            a2_b = a2 * rng.random()
        traits = ParticipantTraits(
            b=b, c=c, k=k,
            A=traits_cfg["calorie_noise_halfwidth"],
            sigma=traits_cfg["weight_noise_scale"],
            gamma1=gamma1, gamma2=gamma2,
            gamma_p=traits_cfg["gamma_p"], gamma_f=traits_cfg["gamma_f"],
            a1_b=boxes.A_set.clamp(a1_b), a2_b=boxes.A_set.clamp(a2_b),
            p_b=traits_cfg["p_baseline"],
        )
        a1 = boxes.A_set.clamp(a1)
        a2 = boxes.A_set.clamp(a2)
        r_hat = boxes.R.clamp(_draw(rng, cohort_cfg["r_hat"]))
        # caloric preference set so the unassisted weekly plan sustains a
        # target equilibrium weight: the intake that balances w_eq plus the
        # plan's motivational deficit
        w_eq = _draw(rng, cohort_cfg["equilibrium_weight"])
        s, bpow = plan_day_coefficients(b)
        mean_offset = float(np.mean(
            a1 * c * s / 2.0
            + a2 * r_hat * c * bpow / (4.0 * traits.A)))
        f_b = boxes.F.clamp(((1.0 - b) * w_eq - k) / c + mean_offset)
        theta0 = MotivationalState(
            a1=a1, a2=a2,
            p=boxes.P.clamp(_draw(rng, cohort_cfg["p0"])),
            B=boxes.P.clamp(_draw(rng, cohort_cfg["B"])),
            f_b=f_b,
            r_hat=r_hat,
            k1=boxes.K.clamp(k1), k2=boxes.K.clamp(k2),
            k_p=boxes.K.clamp(_draw(rng, cohort_cfg["k_p"])),
        )
        # start weight relative to the equilibrium: near 1.0 they barely
        # lose on their own, well above 1.0 they lose regardless
        members.append(CohortMember(
            pid=f"p{i:0{width}d}",
            demographics=demo,
            w00=boxes.W.clamp(
                w_eq * _draw(rng, cohort_cfg["w00_over_equilibrium"])),
            theta0=theta0,
            traits=traits,
            archetype=arch,
        ))
    return CohortSpec(members)


# --- manifests ----------------------------------------------------------------


@dataclass
class RunManifest:
    schema: str
    master_seed: int
    config_hash: str
    package_version: str
    outputs: dict[str, str]      # filename -> sha256 hex digest

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: str | Path, master_seed: int, cfg_hash: str,
                   files: list[str | Path]) -> Path:
    out_dir = Path(out_dir)
    manifest = RunManifest(
        schema=MANIFEST_SCHEMA,
        master_seed=master_seed,
        config_hash=cfg_hash,
        package_version=__version__,
        outputs={Path(f).name: file_digest(f) for f in files},
    )
    path = out_dir / "manifest.json"
    path.write_text(manifest.to_json())
    return path


def verify_manifest(out_dir: str | Path) -> bool:
    out_dir = Path(out_dir)
    data = json.loads((out_dir / "manifest.json").read_text())
    return all(file_digest(out_dir / name) == digest
               for name, digest in data["outputs"].items())
