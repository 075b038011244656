"""Solver-agnostic mixed-integer model assembly.

Builds the estimation MILP (trajectory fitting with weekly indicator
binaries, big-M links, and piecewise-McCormick bilinear terms) and the
budget-coupled incentive-planning MILP (finite reward grids, exact
binary-times-continuous linearization). Also emits/parses LP-text and MPS
files and checks assignments against constraints.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .boxes import Boxes, Interval
from .dynamics import DAYS_PER_WEEK, MotivationalState, ParticipantTraits, plan_day_coefficients
from .estimation import ObservationSet

CONTINUOUS = "continuous"
BINARY = "binary"

_FORMAT_VERSION = "1"


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float
    upper: float
    kind: str = CONTINUOUS


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple[tuple[float, str], ...]   # (coefficient, variable name)
    sense: str                             # "<=", "=", ">="
    rhs: float


@dataclass
class MipModel:
    """Immutable-after-build linear model: variables with bounds and
    integrality, linear constraints, a minimization objective, and a
    bidirectional map between model symbols and file-legal names."""

    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: tuple[tuple[float, str], ...] = ()
    name_map: dict[str, str] = field(default_factory=dict)   # symbol -> var name
    _index: dict[str, Variable] = field(default_factory=dict, repr=False)

    def add_var(self, symbol: str, lower: float, upper: float,
                kind: str = CONTINUOUS) -> str:
        name = sanitize_name(symbol)
        if name in self._index:
            raise ValueError(f"duplicate variable {symbol!r}")
        if not (math.isfinite(lower) and math.isfinite(upper)):
            raise ValueError(f"non-finite bounds for {symbol!r}")
        if kind == BINARY and not (lower == 0.0 and upper == 1.0):
            raise ValueError(f"binary {symbol!r} must have bounds [0, 1]")
        v = Variable(name, lower, upper, kind)
        self.variables.append(v)
        self._index[name] = v
        self.name_map[symbol] = name
        return name

    def add_constr(self, name: str, terms, sense: str, rhs: float) -> None:
        if sense not in ("<=", "=", ">="):
            raise ValueError(f"bad sense {sense!r}")
        clean = tuple((float(c), v) for c, v in terms if c != 0.0)
        for _, v in clean:
            if v not in self._index:
                raise ValueError(f"constraint {name!r} references unknown variable {v!r}")
        self.constraints.append(Constraint(sanitize_name(name), clean, sense, float(rhs)))

    def set_objective(self, terms) -> None:
        clean = tuple((float(c), v) for c, v in terms if c != 0.0)
        for _, v in clean:
            if v not in self._index:
                raise ValueError(f"objective references unknown variable {v!r}")
        self.objective = clean

    def var(self, symbol: str) -> str:
        return self.name_map[symbol]

    @property
    def inverse_name_map(self) -> dict[str, str]:
        return {v: k for k, v in self.name_map.items()}

    def binaries(self) -> list[str]:
        return [v.name for v in self.variables if v.kind == BINARY]


def sanitize_name(symbol: str) -> str:
    """Map a model symbol like 'a1[3]' to a file-legal name like 'a1_3_';
    injective over the bracket/comma/space alphabet."""
    out = symbol.replace("[", "_").replace("]", "_").replace(",", "_").replace(" ", "")
    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.]*", out):
        raise ValueError(f"cannot sanitize symbol {symbol!r}")
    return out


@dataclass(frozen=True)
class BigMBundle:
    M1: float    # weekly weight change
    M2: float    # p - B gap
    Mz1: float   # reward-bounded products
    Mz2: float   # gain-bounded products (a2 channel)
    Mz3: float   # gain-bounded products (a1 channel)

    def validate(self, boxes: Boxes) -> None:
        tight = {
            "M1": boxes.W.width, "M2": boxes.P.width, "Mz1": boxes.R.hi,
            "Mz2": boxes.K.hi, "Mz3": boxes.K.hi,
        }
        for name, bound in tight.items():
            m = getattr(self, name)
            if m < bound:
                raise ValueError(f"{name}={m} below its tight bound {bound}")
            if m > 10.0 * bound:
                raise ValueError(f"{name}={m} looser than 10x its tight bound {bound}")


@dataclass(frozen=True)
class PiecewiseBilinearSpec:
    segments: int = 8
    pairs: tuple[str, ...] = ("a2*r_hat",)

    def __post_init__(self) -> None:
        if self.segments < 1:
            raise ValueError("segments must be >= 1")


def derive_big_m(boxes: Boxes) -> BigMBundle:
    for name in ("W", "F", "A_set", "R", "K"):
        box = getattr(boxes, name)
        if not (math.isfinite(box.lo) and math.isfinite(box.hi)):
            raise ValueError(f"box {name} must be bounded")
    bundle = BigMBundle(
        M1=boxes.W.width, M2=boxes.P.width,
        Mz1=boxes.R.hi, Mz2=boxes.K.hi, Mz3=boxes.K.hi,
    )
    bundle.validate(boxes)
    return bundle


def mccormick_error_bound(x_box: Interval, y_box: Interval, segments: int) -> float:
    """Worst-case absolute error of the piecewise-McCormick envelope of x*y
    when the y range is split into equal segments."""
    return x_box.width * (y_box.width / segments) / 4.0


# --- shared constraint blocks -------------------------------------------------


def _add_product_binary_cont(model: MipModel, z: str, x: str, l: str,
                             x_upper: float, tag: str) -> None:
    """Exact linearization of z = x * l for continuous x in [0, x_upper] and
    binary l."""
    model.add_constr(f"{tag}_cap", [(1.0, z), (-x_upper, l)], "<=", 0.0)
    model.add_constr(f"{tag}_le_x", [(1.0, z), (-1.0, x)], "<=", 0.0)
    model.add_constr(f"{tag}_ge", [(1.0, z), (-1.0, x), (-x_upper, l)], ">=", -x_upper)


def _add_l1_link(model: MipModel, w0: str, w6: str, l1: str, M1: float,
                 tau: float, tag: str) -> None:
    """Two-sided link making l1 = 1{w0 - w6 > 0} (tau on the open side)."""
    model.add_constr(f"{tag}_up", [(1.0, w0), (-1.0, w6), (-M1, l1)], "<=", 0.0)
    model.add_constr(
        f"{tag}_lo",
        [(1.0, w0), (-1.0, w6), (-(M1 + tau), l1)], ">=", -M1,
    )


def _add_l2_link(model: MipModel, p: str, B: str, l2: str, M2: float,
                 tau: float, tag: str) -> None:
    """Two-sided link making l2 = 1{p - B >= 0} (tau on the open side)."""
    model.add_constr(f"{tag}_lo", [(1.0, p), (-1.0, B), (-M2, l2)], ">=", -M2)
    model.add_constr(
        f"{tag}_up",
        [(1.0, p), (-1.0, B), (-(M2 + tau), l2)], "<=", -tau,
    )


def _add_mccormick_product(model: MipModel, q: str, x: str, y: str,
                           x_box: Interval, y_box: Interval,
                           segments: int, tag: str) -> None:
    """Piecewise-McCormick envelope for q = x*y, partitioning the y range
    into equal segments selected by binaries."""
    edges = np.linspace(y_box.lo, y_box.hi, segments + 1)
    s_names, xs_names, ys_names, qs_names = [], [], [], []
    for j in range(segments):
        s = model.add_var(f"{tag}.s[{j}]", 0.0, 1.0, BINARY)
        xs = model.add_var(f"{tag}.x[{j}]", min(x_box.lo, 0.0), x_box.hi)
        ys = model.add_var(f"{tag}.y[{j}]", min(y_box.lo, 0.0), y_box.hi)
        qs = model.add_var(
            f"{tag}.q[{j}]",
            min(0.0, x_box.lo * y_box.lo, x_box.lo * y_box.hi,
                x_box.hi * y_box.lo),
            max(x_box.hi * y_box.hi, 0.0),
        )
        s_names.append(s); xs_names.append(xs); ys_names.append(ys); qs_names.append(qs)
    model.add_constr(f"{tag}_pick", [(1.0, s) for s in s_names], "=", 1.0)
    model.add_constr(f"{tag}_xsum", [(1.0, n) for n in xs_names] + [(-1.0, x)], "=", 0.0)
    model.add_constr(f"{tag}_ysum", [(1.0, n) for n in ys_names] + [(-1.0, y)], "=", 0.0)
    model.add_constr(f"{tag}_qsum", [(1.0, n) for n in qs_names] + [(-1.0, q)], "=", 0.0)
    xL, xU = x_box.lo, x_box.hi
    for j in range(segments):
        yL, yU = edges[j], edges[j + 1]
        s, xs, ys, qs = s_names[j], xs_names[j], ys_names[j], qs_names[j]
        # disaggregated variables vanish unless segment selected
        model.add_constr(f"{tag}_xlo[{j}]", [(1.0, xs), (-xL, s)], ">=", 0.0)
        model.add_constr(f"{tag}_xup[{j}]", [(1.0, xs), (-xU, s)], "<=", 0.0)
        model.add_constr(f"{tag}_ylo[{j}]", [(1.0, ys), (-yL, s)], ">=", 0.0)
        model.add_constr(f"{tag}_yup[{j}]", [(1.0, ys), (-yU, s)], "<=", 0.0)
        # McCormick envelope within the segment
        model.add_constr(f"{tag}_mc1[{j}]",
                         [(1.0, qs), (-yL, xs), (-xL, ys), (xL * yL, s)], ">=", 0.0)
        model.add_constr(f"{tag}_mc2[{j}]",
                         [(1.0, qs), (-yU, xs), (-xU, ys), (xU * yU, s)], ">=", 0.0)
        model.add_constr(f"{tag}_mc3[{j}]",
                         [(1.0, qs), (-yU, xs), (-xL, ys), (xL * yU, s)], "<=", 0.0)
        model.add_constr(f"{tag}_mc4[{j}]",
                         [(1.0, qs), (-yL, xs), (-xU, ys), (xU * yL, s)], "<=", 0.0)


# --- estimation model ---------------------------------------------------------


def build_smle_mip(
    obs: ObservationSet,
    traits: ParticipantTraits,
    boxes: Boxes,
    pw: PiecewiseBilinearSpec | None = None,
    weights: tuple[float, float] | None = None,
    tau_strict: float = 1e-6,
) -> MipModel:
    """Estimation MILP: fit latent trajectories and initial conditions to
    observed weights and recording indicators.

    Objective alpha*sum|w - w_obs| + beta*sum|p - g| via slack pairs; weekly
    loss and recording-threshold indicators with two-sided big-M links; the
    a2*r_hat plan product via piecewise McCormick.
    """
    pw = pw or PiecewiseBilinearSpec()
    alpha, beta = weights if weights is not None else (1.0 / traits.sigma, 1.0)
    T = obs.weeks
    if T < 2:
        raise ValueError("estimation model requires at least 2 weeks")
    big_m = derive_big_m(boxes)
    m = MipModel()
    s_coef, bpow = plan_day_coefficients(traits.b)

    for t in range(T):
        for d in range(DAYS_PER_WEEK):
            m.add_var(f"w[{t},{d}]", boxes.W.lo, boxes.W.hi)
            m.add_var(f"xi[{t},{d}]", -traits.A, traits.A)
            m.add_var(f"f[{t},{d}]", boxes.F.lo, boxes.F.hi)
            m.add_var(f"c[{t},{d}]", boxes.F.lo - traits.A, boxes.F.hi + traits.A)
    for t in range(T):
        m.add_var(f"a1[{t}]", boxes.A_set.lo, boxes.A_set.hi)
        m.add_var(f"a2[{t}]", boxes.A_set.lo, boxes.A_set.hi)
        m.add_var(f"p[{t}]", boxes.P.lo, boxes.P.hi)
        m.add_var(f"fb[{t}]", boxes.F.lo, boxes.F.hi)
        m.add_var(f"rhat[{t}]", boxes.R.lo, boxes.R.hi)
        m.add_var(f"l1[{t}]", 0.0, 1.0, BINARY)
        m.add_var(f"l2[{t}]", 0.0, 1.0, BINARY)
        m.add_var(f"q[{t}]", boxes.A_set.lo * boxes.R.lo, boxes.A_set.hi * boxes.R.hi)
    m.add_var("B", boxes.P.lo, boxes.P.hi)
    m.add_var("k1", boxes.K.lo, boxes.K.hi)
    m.add_var("k2", boxes.K.lo, boxes.K.hi)
    m.add_var("kp", boxes.K.lo, boxes.K.hi)
    for t in range(T - 1):
        m.add_var(f"z2[{t}]", 0.0, big_m.Mz2)   # k2 * l1[t]
        m.add_var(f"z3[{t}]", 0.0, big_m.Mz3)   # k1 * l1[t]
        m.add_var(f"u[{t}]", 0.0, big_m.Mz1)    # rhat[t] * l1[t]

    obj = []
    mask = ~np.isnan(obs.weights)
    for t in range(T):
        for d in range(DAYS_PER_WEEK):
            if mask[t, d]:
                sp = m.add_var(f"sw_pos[{t},{d}]", 0.0, 2.0 * boxes.W.width + 1e3)
                sn = m.add_var(f"sw_neg[{t},{d}]", 0.0, 2.0 * boxes.W.width + 1e3)
                m.add_constr(
                    f"obs_w[{t},{d}]",
                    [(1.0, m.var(f"w[{t},{d}]")), (-1.0, sp), (1.0, sn)],
                    "=", float(obs.weights[t, d]),
                )
                obj += [(alpha, sp), (alpha, sn)]
    for t in range(T):
        sp = m.add_var(f"sp_pos[{t}]", 0.0, 1.0)
        sn = m.add_var(f"sp_neg[{t}]", 0.0, 1.0)
        m.add_constr(
            f"obs_g[{t}]",
            [(1.0, m.var(f"p[{t}]")), (-1.0, sp), (1.0, sn)],
            "=", float(obs.g[t]),
        )
        if beta != 0.0:
            obj += [(beta, sp), (beta, sn)]
    m.set_objective(obj)

    # in-week physics and the plan equality
    for t in range(T):
        for d in range(DAYS_PER_WEEK):
            m.add_constr(
                f"cal[{t},{d}]",
                [(1.0, m.var(f"f[{t},{d}]")), (-1.0, m.var(f"c[{t},{d}]")),
                 (-1.0, m.var(f"xi[{t},{d}]"))],
                "=", 0.0,
            )
            m.add_constr(
                f"plan[{t},{d}]",
                [(1.0, m.var(f"c[{t},{d}]")), (-1.0, m.var(f"fb[{t}]")),
                 (traits.c * s_coef[d] / 2.0, m.var(f"a1[{t}]")),
                 (traits.c * bpow[d] / (4.0 * traits.A), m.var(f"q[{t}]"))],
                "=", 0.0,
            )
            if t == 0 and d == 0:
                continue
            prev = f"w[{t},{d - 1}]" if d > 0 else f"w[{t - 1},{DAYS_PER_WEEK - 1}]"
            m.add_constr(
                f"roll[{t},{d}]",
                [(1.0, m.var(f"w[{t},{d}]")), (-traits.b, m.var(prev)),
                 (-traits.c, m.var(f"f[{t},{d}]"))],
                "=", traits.k,
            )
        _add_mccormick_product(
            m, m.var(f"q[{t}]"), m.var(f"a2[{t}]"), m.var(f"rhat[{t}]"),
            boxes.A_set, boxes.R, pw.segments, f"mc[{t}]",
        )
        _add_l1_link(m, m.var(f"w[{t},0]"), m.var(f"w[{t},{DAYS_PER_WEEK - 1}]"),
                     m.var(f"l1[{t}]"), big_m.M1, tau_strict, f"link1[{t}]")
        _add_l2_link(m, m.var(f"p[{t}]"), m.var("B"), m.var(f"l2[{t}]"),
                     big_m.M2, tau_strict, f"link2[{t}]")

    # between-week dynamics
    for t in range(T - 1):
        g1, g2, gp, gf = traits.gamma1, traits.gamma2, traits.gamma_p, traits.gamma_f
        _add_product_binary_cont(m, m.var(f"z3[{t}]"), m.var("k1"),
                                 m.var(f"l1[{t}]"), big_m.Mz3, f"pz3[{t}]")
        _add_product_binary_cont(m, m.var(f"z2[{t}]"), m.var("k2"),
                                 m.var(f"l1[{t}]"), big_m.Mz2, f"pz2[{t}]")
        _add_product_binary_cont(m, m.var(f"u[{t}]"), m.var(f"rhat[{t}]"),
                                 m.var(f"l1[{t}]"), big_m.Mz1, f"pu[{t}]")
        m.add_constr(
            f"dyn_a1[{t}]",
            [(1.0, m.var(f"a1[{t + 1}]")), (-g1, m.var(f"a1[{t}]")),
             (-1.0, m.var(f"z3[{t}]")),
             (-float(obs.r_c[t]), m.var(f"l2[{t}]"))],
            "=", (1.0 - g1) * traits.a1_b,
        )
        m.add_constr(
            f"dyn_a2[{t}]",
            [(1.0, m.var(f"a2[{t + 1}]")), (-g2, m.var(f"a2[{t}]")),
             (-float(obs.r_w[t]), m.var(f"z2[{t}]"))],
            "=", (1.0 - g2) * traits.a2_b,
        )
        m.add_constr(
            f"dyn_p[{t}]",
            [(1.0, m.var(f"p[{t + 1}]")), (-gp, m.var(f"p[{t}]")),
             (-float(obs.g[t]), m.var("kp"))],
            "=", (1.0 - gp) * traits.p_b,
        )
        m.add_constr(
            f"dyn_fb[{t}]",
            [(1.0, m.var(f"fb[{t + 1}]")), (-gf, m.var(f"fb[{t}]"))]
            + [(-(1.0 - gf) / DAYS_PER_WEEK, m.var(f"f[{t},{d}]"))
               for d in range(DAYS_PER_WEEK)],
            "=", 0.0,
        )
        # rhat' = rhat - l1*rhat/(t+1) + l1*r_w/(t+1)
        m.add_constr(
            f"dyn_rhat[{t}]",
            [(1.0, m.var(f"rhat[{t + 1}]")), (-1.0, m.var(f"rhat[{t}]")),
             (1.0 / (t + 1.0), m.var(f"u[{t}]")),
             (-float(obs.r_w[t]) / (t + 1.0), m.var(f"l1[{t}]"))],
            "=", 0.0,
        )
    return m


# --- incentive planning model -------------------------------------------------


@dataclass(frozen=True)
class PlanningParticipant:
    """Per-participant planning inputs: current Sunday weight (or initial
    weight at week 0), motivational state entering the planning horizon,
    trial-start reference weight for the loss threshold, and traits."""

    pid: str
    w_current: float
    theta: MotivationalState
    w00_ref: float
    traits: ParticipantTraits


def build_incentive_mip(
    participants: list[PlanningParticipant],
    budget_remaining: float,
    loss_kind: str,
    reward_grid: list[float],
    horizon: int,
    boxes: Boxes,
    threshold_fraction: float = 0.05,
    pw: PiecewiseBilinearSpec | None = None,
    tau_strict: float = 1e-6,
    first_week_chained: bool = True,
) -> MipModel:
    """Budget-coupled incentive planning under certainty equivalence.

    One binary per (participant, week, grid level, reward type) with
    pick-one rows; the probability path is reward-independent so the
    threshold indicators are constants; weekly loss indicators use big-M
    links; reward-state products are exact binary-times-continuous
    linearizations; hinge loss as a linear epigraph, indicator loss via a
    failure binary.
    """
    if not reward_grid:
        raise ValueError("empty reward grid")
    grid = [float(r) for r in reward_grid]
    if sorted(grid) != grid:
        raise ValueError("reward grid must be ascending")
    for r in grid:
        if not boxes.R.contains(r):
            raise ValueError(f"grid level {r} outside the reward box")
    if budget_remaining < 0:
        raise ValueError("negative remaining budget")
    if loss_kind not in ("indicator", "hinge"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    pw = pw or PiecewiseBilinearSpec()
    big_m = derive_big_m(boxes)
    m = MipModel()
    budget_terms = []
    loss_terms = []

    for part in participants:
        u, tr, th = part.pid, part.traits, part.theta
        s_coef, bpow = plan_day_coefficients(tr.b)
        # reward-independent probability path and threshold constants
        p_vals = [th.p]
        for h in range(horizon - 1):
            p_vals.append(boxes.P.clamp(
                tr.gamma_p * (p_vals[-1] - tr.p_b) + tr.p_b + th.k_p * p_vals[-1]
            ))
        C_vals = [1.0 if p >= th.B else 0.0 for p in p_vals]

        for h in range(horizon):
            for d in range(DAYS_PER_WEEK):
                m.add_var(f"w[{u},{h},{d}]", boxes.W.lo, boxes.W.hi)
                m.add_var(f"c[{u},{h},{d}]", boxes.F.lo - tr.A, boxes.F.hi + tr.A)
            m.add_var(f"a1[{u},{h}]", boxes.A_set.lo, boxes.A_set.hi)
            m.add_var(f"a2[{u},{h}]", boxes.A_set.lo, boxes.A_set.hi)
            m.add_var(f"fb[{u},{h}]", boxes.F.lo, boxes.F.hi)
            m.add_var(f"rhat[{u},{h}]", boxes.R.lo, boxes.R.hi)
            m.add_var(f"l1[{u},{h}]", 0.0, 1.0, BINARY)
            m.add_var(f"q[{u},{h}]", boxes.A_set.lo * boxes.R.lo,
                      boxes.A_set.hi * boxes.R.hi)
            m.add_var(f"rw[{u},{h}]", boxes.R.lo, boxes.R.hi)
            m.add_var(f"rc[{u},{h}]", boxes.R.lo, boxes.R.hi)
            for kind in ("w", "c"):
                names = [
                    m.add_var(f"y{kind}[{u},{h},{i}]", 0.0, 1.0, BINARY)
                    for i in range(len(grid))
                ]
                m.add_constr(f"pick_{kind}[{u},{h}]",
                             [(1.0, n) for n in names], "=", 1.0)
                m.add_constr(
                    f"rdef_{kind}[{u},{h}]",
                    [(1.0, m.var(f"r{kind}[{u},{h}]"))]
                    + [(-grid[i], names[i]) for i in range(len(grid))],
                    "=", 0.0,
                )
            budget_terms += [(1.0, m.var(f"rw[{u},{h}]")), (1.0, m.var(f"rc[{u},{h}]"))]
        for h in range(horizon - 1):
            m.add_var(f"zrw[{u},{h}]", 0.0, big_m.Mz1)   # rw * l1
            m.add_var(f"zrh[{u},{h}]", 0.0, big_m.Mz1)   # rhat * l1

        # initial conditions
        m.add_constr(f"init_a1[{u}]", [(1.0, m.var(f"a1[{u},0]"))], "=", th.a1)
        m.add_constr(f"init_a2[{u}]", [(1.0, m.var(f"a2[{u},0]"))], "=", th.a2)
        m.add_constr(f"init_fb[{u}]", [(1.0, m.var(f"fb[{u},0]"))], "=", th.f_b)
        m.add_constr(f"init_rhat[{u}]", [(1.0, m.var(f"rhat[{u},0]"))], "=", th.r_hat)

        for h in range(horizon):
            for d in range(DAYS_PER_WEEK):
                m.add_constr(
                    f"plan[{u},{h},{d}]",
                    [(1.0, m.var(f"c[{u},{h},{d}]")), (-1.0, m.var(f"fb[{u},{h}]")),
                     (tr.c * s_coef[d] / 2.0, m.var(f"a1[{u},{h}]")),
                     (tr.c * bpow[d] / (4.0 * tr.A), m.var(f"q[{u},{h}]"))],
                    "=", 0.0,
                )
                if d == 0:
                    if h == 0:
                        if first_week_chained:
                            m.add_constr(
                                f"roll[{u},0,0]",
                                [(1.0, m.var(f"w[{u},0,0]")),
                                 (-tr.c, m.var(f"c[{u},0,0]"))],
                                "=", tr.b * part.w_current + tr.k,
                            )
                        else:
                            m.add_constr(
                                f"roll[{u},0,0]",
                                [(1.0, m.var(f"w[{u},0,0]"))],
                                "=", part.w_current,
                            )
                        continue
                    prev = f"w[{u},{h - 1},{DAYS_PER_WEEK - 1}]"
                else:
                    prev = f"w[{u},{h},{d - 1}]"
                m.add_constr(
                    f"roll[{u},{h},{d}]",
                    [(1.0, m.var(f"w[{u},{h},{d}]")), (-tr.b, m.var(prev)),
                     (-tr.c, m.var(f"c[{u},{h},{d}]"))],
                    "=", tr.k,
                )
            _add_mccormick_product(
                m, m.var(f"q[{u},{h}]"), m.var(f"a2[{u},{h}]"),
                m.var(f"rhat[{u},{h}]"), boxes.A_set, boxes.R,
                pw.segments, f"mc[{u},{h}]",
            )
            _add_l1_link(m, m.var(f"w[{u},{h},0]"),
                         m.var(f"w[{u},{h},{DAYS_PER_WEEK - 1}]"),
                         m.var(f"l1[{u},{h}]"), big_m.M1, tau_strict,
                         f"link1[{u},{h}]")

        for h in range(horizon - 1):
            g1, g2, gf = tr.gamma1, tr.gamma2, tr.gamma_f
            _add_product_binary_cont(m, m.var(f"zrw[{u},{h}]"),
                                     m.var(f"rw[{u},{h}]"), m.var(f"l1[{u},{h}]"),
                                     big_m.Mz1, f"przw[{u},{h}]")
            _add_product_binary_cont(m, m.var(f"zrh[{u},{h}]"),
                                     m.var(f"rhat[{u},{h}]"), m.var(f"l1[{u},{h}]"),
                                     big_m.Mz1, f"przh[{u},{h}]")
            m.add_constr(
                f"dyn_a1[{u},{h}]",
                [(1.0, m.var(f"a1[{u},{h + 1}]")), (-g1, m.var(f"a1[{u},{h}]")),
                 (-th.k1, m.var(f"l1[{u},{h}]")),
                 (-C_vals[h], m.var(f"rc[{u},{h}]"))],
                "=", (1.0 - g1) * tr.a1_b,
            )
            m.add_constr(
                f"dyn_a2[{u},{h}]",
                [(1.0, m.var(f"a2[{u},{h + 1}]")), (-g2, m.var(f"a2[{u},{h}]")),
                 (-th.k2, m.var(f"zrw[{u},{h}]"))],
                "=", (1.0 - g2) * tr.a2_b,
            )
            m.add_constr(
                f"dyn_fb[{u},{h}]",
                [(1.0, m.var(f"fb[{u},{h + 1}]")), (-gf, m.var(f"fb[{u},{h}]"))]
                + [(-(1.0 - gf) / DAYS_PER_WEEK, m.var(f"c[{u},{h},{d}]"))
                   for d in range(DAYS_PER_WEEK)],
                "=", 0.0,
            )
            t_abs = th.week_index + h
            m.add_constr(
                f"dyn_rhat[{u},{h}]",
                [(1.0, m.var(f"rhat[{u},{h + 1}]")), (-1.0, m.var(f"rhat[{u},{h}]")),
                 (1.0 / (t_abs + 1.0), m.var(f"zrh[{u},{h}]")),
                 (-1.0 / (t_abs + 1.0), m.var(f"zrw[{u},{h}]"))],
                "=", 0.0,
            )

        w_final = m.var(f"w[{u},{horizon - 1},{DAYS_PER_WEEK - 1}]")
        goal = (1.0 - threshold_fraction) * part.w00_ref
        if loss_kind == "hinge":
            hv = m.add_var(f"loss[{u}]", 0.0, boxes.W.width)
            m.add_constr(f"hinge[{u}]", [(1.0, hv), (-1.0, w_final)], ">=", -goal)
            loss_terms.append((1.0, hv))
        else:
            fail = m.add_var(f"fail[{u}]", 0.0, 1.0, BINARY)
            m.add_constr(f"fail_link[{u}]",
                         [(1.0, w_final), (-big_m.M1, fail)], "<=", goal)
            loss_terms.append((1.0, fail))

    m.add_constr("budget", budget_terms, "<=", budget_remaining)
    m.set_objective(loss_terms)
    return m


# --- assignment checking ------------------------------------------------------


@dataclass
class ResidualReport:
    residuals: dict[str, float]          # signed violation per constraint (>0 = violated)
    objective: float
    max_violation: float
    worst_constraint: str | None


def check_assignment(model: MipModel, assignment: dict[str, float],
                     include_bounds: bool = True) -> ResidualReport:
    """Signed constraint violations and objective value for a full
    assignment (keys are variable names)."""
    for v in model.variables:
        if v.name not in assignment:
            raise KeyError(f"assignment missing variable {v.name!r}")
    residuals: dict[str, float] = {}
    for con in model.constraints:
        lhs = sum(c * assignment[v] for c, v in con.terms)
        if con.sense == "<=":
            r = lhs - con.rhs
        elif con.sense == ">=":
            r = con.rhs - lhs
        else:
            r = abs(lhs - con.rhs)
        residuals[con.name] = r
    if include_bounds:
        for v in model.variables:
            x = assignment[v.name]
            residuals[f"_lb_{v.name}"] = v.lower - x
            residuals[f"_ub_{v.name}"] = x - v.upper
            if v.kind == BINARY:
                residuals[f"_int_{v.name}"] = abs(x - round(x))
    objective = sum(c * assignment[v] for c, v in model.objective)
    if residuals:
        worst = max(residuals, key=lambda k: residuals[k])
        max_violation = residuals[worst]
    else:
        worst, max_violation = None, 0.0
    return ResidualReport(residuals=residuals, objective=objective,
                          max_violation=max_violation, worst_constraint=worst)


# --- model file emission and parsing ------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_model_file(model: MipModel, fmt: str, path: str) -> None:
    """Write the model as LP text or free MPS; both round-trip through the
    matching reader."""
    if fmt == "lp":
        text = _to_lp(model)
    elif fmt == "mps":
        text = _to_mps(model)
    else:
        raise ValueError(f"unknown format {fmt!r} (use 'lp' or 'mps')")
    with open(path, "w") as fh:
        fh.write(text)


def _terms_str(terms) -> str:
    if not terms:
        return "0 " + "__zero__"
    parts = []
    for i, (c, v) in enumerate(terms):
        sign = "-" if c < 0 else ("+" if i > 0 else "")
        parts.append(f"{sign} {_fmt(abs(c))} {v}".strip())
    return " ".join(parts)


def _to_lp(model: MipModel) -> str:
    lines = [f"\\ lp format version {_FORMAT_VERSION}", "Minimize"]
    obj = _terms_str(model.objective) if model.objective else "0 " + (
        model.variables[0].name if model.variables else "x0"
    )
    lines.append(f" obj: {obj}")
    lines.append("Subject To")
    sense_map = {"<=": "<=", ">=": ">=", "=": "="}
    for con in model.constraints:
        lines.append(
            f" {con.name}: {_terms_str(con.terms)} {sense_map[con.sense]} {_fmt(con.rhs)}"
        )
    lines.append("Bounds")
    for v in model.variables:
        lines.append(f" {_fmt(v.lower)} <= {v.name} <= {_fmt(v.upper)}")
    bins = model.binaries()
    if bins:
        lines.append("Binary")
        for name in bins:
            lines.append(f" {name}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def read_lp_file(path: str) -> MipModel:
    with open(path) as fh:
        raw = [ln.rstrip() for ln in fh]
    lines = [ln for ln in raw if ln.strip() and not ln.lstrip().startswith("\\")]
    model = MipModel()
    section = None
    bounds: dict[str, tuple[float, float]] = {}
    binaries: set[str] = set()
    obj_terms: list[tuple[float, str]] = []
    cons: list[tuple[str, list, str, float]] = []

    def parse_terms(tokens: list[str]) -> list[tuple[float, str]]:
        terms = []
        sign = 1.0
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            if tok == "+":
                sign = 1.0
            elif tok == "-":
                sign = -1.0
            else:
                coef = sign * float(tok)
                var = tokens[i + 1]
                terms.append((coef, var))
                i += 1
                sign = 1.0
            i += 1
        return terms

    for ln in lines:
        word = ln.strip()
        low = word.lower()
        if low in ("minimize", "subject to", "bounds", "binary", "end"):
            section = low
            continue
        if section == "minimize":
            body = word.split(":", 1)[1].strip()
            obj_terms += parse_terms(body.split())
        elif section == "subject to":
            name, body = word.split(":", 1)
            tokens = body.split()
            for si, s in enumerate(tokens):
                if s in ("<=", ">=", "="):
                    cons.append((name.strip(), parse_terms(tokens[:si]), s,
                                 float(tokens[si + 1])))
                    break
        elif section == "bounds":
            toks = word.split()
            bounds[toks[2]] = (float(toks[0]), float(toks[4]))
        elif section == "binary":
            binaries.add(word)
    for name, (lo, hi) in bounds.items():
        model.add_var(name, lo, hi, BINARY if name in binaries else CONTINUOUS)
    for name, terms, sense, rhs in cons:
        model.add_constr(name, terms, sense, rhs)
    model.set_objective([(c, v) for c, v in obj_terms if v != "__zero__"])
    return model


def _to_mps(model: MipModel) -> str:
    lines = [f"* mps format version {_FORMAT_VERSION}", "NAME model", "ROWS",
             " N obj"]
    sense_code = {"<=": "L", ">=": "G", "=": "E"}
    for con in model.constraints:
        lines.append(f" {sense_code[con.sense]} {con.name}")
    lines.append("COLUMNS")
    col_terms: dict[str, list[tuple[str, float]]] = {v.name: [] for v in model.variables}
    for c, v in model.objective:
        col_terms[v].append(("obj", c))
    for con in model.constraints:
        for c, v in con.terms:
            col_terms[v].append((con.name, c))
    in_int = False
    marker_i = 0
    for v in model.variables:
        want_int = v.kind == BINARY
        if want_int != in_int:
            tag = "INTORG" if want_int else "INTEND"
            lines.append(f" MARKER{marker_i} 'MARKER' '{tag}'")
            marker_i += 1
            in_int = want_int
        for row, coef in col_terms[v.name]:
            lines.append(f" {v.name} {row} {_fmt(coef)}")
        if not col_terms[v.name]:
            lines.append(f" {v.name} obj 0.0")
    if in_int:
        lines.append(f" MARKER{marker_i} 'MARKER' 'INTEND'")
    lines.append("RHS")
    for con in model.constraints:
        lines.append(f" rhs {con.name} {_fmt(con.rhs)}")
    lines.append("BOUNDS")
    for v in model.variables:
        lines.append(f" LO bnd {v.name} {_fmt(v.lower)}")
        lines.append(f" UP bnd {v.name} {_fmt(v.upper)}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def read_mps_file(path: str) -> MipModel:
    with open(path) as fh:
        raw = [ln.rstrip() for ln in fh]
    lines = [ln for ln in raw if ln.strip() and not ln.startswith("*")]
    section = None
    senses: dict[str, str] = {}
    row_order: list[str] = []
    col_entries: dict[str, list[tuple[str, float]]] = {}
    col_order: list[str] = []
    integral: set[str] = set()
    rhs: dict[str, float] = {}
    lb: dict[str, float] = {}
    ub: dict[str, float] = {}
    in_int = False
    code_sense = {"L": "<=", "G": ">=", "E": "="}
    for ln in lines:
        toks = ln.split()
        if toks[0] in ("NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"):
            section = toks[0]
            continue
        if section == "ROWS":
            code, name = toks
            if code == "N":
                continue
            senses[name] = code_sense[code]
            row_order.append(name)
        elif section == "COLUMNS":
            if len(toks) >= 3 and toks[1] == "'MARKER'":
                in_int = toks[2] == "'INTORG'"
                continue
            var, row, coef = toks[0], toks[1], float(toks[2])
            if var not in col_entries:
                col_entries[var] = []
                col_order.append(var)
                if in_int:
                    integral.add(var)
            col_entries[var].append((row, coef))
        elif section == "RHS":
            rhs[toks[1]] = float(toks[2])
        elif section == "BOUNDS":
            kind, _, var, val = toks
            (lb if kind == "LO" else ub)[var] = float(val)
    model = MipModel()
    for var in col_order:
        model.add_var(var, lb.get(var, 0.0), ub.get(var, 0.0),
                      BINARY if var in integral else CONTINUOUS)
    obj = []
    con_terms: dict[str, list[tuple[float, str]]] = {r: [] for r in row_order}
    for var in col_order:
        for row, coef in col_entries[var]:
            if row == "obj":
                if coef != 0.0:
                    obj.append((coef, var))
            else:
                con_terms[row].append((coef, var))
    for row in row_order:
        model.add_constr(row, con_terms[row], senses[row], rhs.get(row, 0.0))
    model.set_objective(obj)
    return model


def _terms_close(ta, tb, tol: float) -> bool:
    """Order-insensitive coefficient comparison (file formats may emit a
    row's terms in column order)."""
    da: dict[str, float] = {}
    db: dict[str, float] = {}
    for c, v in ta:
        da[v] = da.get(v, 0.0) + c
    for c, v in tb:
        db[v] = db.get(v, 0.0) + c
    if set(da) != set(db):
        return False
    return all(abs(da[v] - db[v]) <= tol for v in da)


def models_equivalent(a: MipModel, b: MipModel, tol: float = 0.0) -> bool:
    """Structural equality: same variables (order, bounds, kind), same
    constraints (order, coefficient maps, sense, rhs), same objective."""
    if len(a.variables) != len(b.variables) or len(a.constraints) != len(b.constraints):
        return False
    for va, vb in zip(a.variables, b.variables):
        if va.name != vb.name or va.kind != vb.kind:
            return False
        if abs(va.lower - vb.lower) > tol or abs(va.upper - vb.upper) > tol:
            return False
    for ca, cb in zip(a.constraints, b.constraints):
        if ca.name != cb.name or ca.sense != cb.sense:
            return False
        if abs(ca.rhs - cb.rhs) > tol:
            return False
        if not _terms_close(ca.terms, cb.terms, tol):
            return False
    return _terms_close(a.objective, b.objective, tol)
