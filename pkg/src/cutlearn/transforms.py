"""Censoring unbiased transformations and learner-specific (weight, outcome) pairs.

Each transformation maps one observed tuple (time, cause, arm) plus a
:class:`~cutlearn.curves.NuisanceSet` into a real number whose conditional
expectation given (arm, covariates) equals the target functional: survival
probability at t, restricted mean up to tau, cause-specific cumulative
incidence, restricted mean time lost, or their separable direct/indirect
analogues built from hybrid-arm hazard mixes.

Variants per estimand: model-based imputation ("bj"), inverse censoring
weighting ("ipcw", plus "ipcw1"/"ipcw2" for survival) and the doubly robust
augmented version ("aipcw"), the latter in two algebraic forms (a censoring
martingale form and an event martingale form) that agree to machine precision
when the curves derive from one hazard set.  The survival inverse-weighting
variants coincide numerically with jackknife pseudo-observations in which the
product-limit estimate of the at-risk probability is replaced by inverse
censoring weights; they are provided directly rather than via the jackknife.

Discrete-time conventions (shared with :mod:`cutlearn.survival`): events
resolve before censoring at tied grid times, so censoring-martingale
compensators skip a tied event time and divide by the right-continuous
censoring survival, while event-martingale terms divide by its left limit.
These choices are what make the algebraic-form agreement and the adding-up
identities exact rather than O(grid) approximations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curves import CurveBundle, NuisanceSet
from .survival import Observation

__all__ = [
    "EstimandSpec",
    "CutKind",
    "TransformedSample",
    "Diagnostics",
    "cut_values",
    "separable_cut_values",
    "if_transform_values",
    "implied_mean",
    "cut_value",
    "cut_separable",
    "if_transform",
    "minimization_target",
    "transform_targets",
    "SURVIVAL_KINDS",
    "COMPETING_KINDS",
    "TRANSFORM_LEARNERS",
]

SURVIVAL_FAMILIES = ("survival", "rmst")
COMPETING_FAMILIES = ("cif", "rmtl")
SEPARABLE_FAMILIES = ("sep_direct_cif", "sep_direct_rmtl", "sep_indirect_cif", "sep_indirect_rmtl")
SURVIVAL_KINDS = ("bj", "ipcw1", "ipcw2", "aipcw")
COMPETING_KINDS = ("bj", "ipcw", "aipcw")
TRANSFORM_LEARNERS = ("iptw", "ra", "aiptw", "if", "mc", "mcea", "r", "u")

DEFAULT_FLOOR = 0.01
PROPENSITY_RESIDUAL_FLOOR = 1e-3


@dataclass(frozen=True)
class EstimandSpec:
    """Target functional: family, horizon, and (for competing risks) cause.

    For separable families ``fixed_arm`` is the arm assigned to the component
    held fixed: the competing-cause component for direct effects, the
    cause-of-interest component for indirect effects.
    """

    family: str
    horizon: float
    cause: int | None = None
    fixed_arm: int | None = None

    def __post_init__(self):
        if self.family not in SURVIVAL_FAMILIES + COMPETING_FAMILIES + SEPARABLE_FAMILIES:
            raise ValueError(f"unknown estimand family {self.family!r}")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError("horizon must be positive")
        if self.family in SURVIVAL_FAMILIES:
            if self.cause is not None:
                raise ValueError(f"{self.family} takes no cause")
        else:
            if self.cause is None or self.cause < 1:
                raise ValueError(f"{self.family} requires a cause >= 1")
        if self.is_separable:
            if self.fixed_arm not in (0, 1):
                raise ValueError("separable estimands require fixed_arm in {0, 1}")
        elif self.fixed_arm is not None:
            raise ValueError(f"{self.family} takes no fixed_arm")

    @property
    def is_separable(self) -> bool:
        return self.family in SEPARABLE_FAMILIES

    @property
    def is_time_scale(self) -> bool:
        """True when the outcome lives on the time scale (bounded by horizon)."""
        return self.family.endswith("rmst") or self.family.endswith("rmtl")

    @property
    def outcome_bound(self) -> float:
        return self.horizon if self.is_time_scale else 1.0

    # constructors -----------------------------------------------------------
    @classmethod
    def survival(cls, t: float) -> "EstimandSpec":
        return cls("survival", t)

    @classmethod
    def rmst(cls, tau: float) -> "EstimandSpec":
        return cls("rmst", tau)

    @classmethod
    def cif(cls, cause: int, t: float) -> "EstimandSpec":
        return cls("cif", t, cause)

    @classmethod
    def rmtl(cls, cause: int, tau: float) -> "EstimandSpec":
        return cls("rmtl", tau, cause)

    @classmethod
    def separable_direct_cif(cls, cause: int, t: float, competing_arm: int) -> "EstimandSpec":
        return cls("sep_direct_cif", t, cause, competing_arm)

    @classmethod
    def separable_direct_rmtl(cls, cause: int, tau: float, competing_arm: int) -> "EstimandSpec":
        return cls("sep_direct_rmtl", tau, cause, competing_arm)

    @classmethod
    def separable_indirect_cif(cls, cause: int, t: float, cause_arm: int) -> "EstimandSpec":
        return cls("sep_indirect_cif", t, cause, cause_arm)

    @classmethod
    def separable_indirect_rmtl(cls, cause: int, tau: float, cause_arm: int) -> "EstimandSpec":
        return cls("sep_indirect_rmtl", tau, cause, cause_arm)

    def label(self) -> str:
        bits = [self.family]
        if self.cause is not None:
            bits.append(f"j{self.cause}")
        bits.append(f"h{self.horizon:g}")
        if self.fixed_arm is not None:
            bits.append(f"fix{self.fixed_arm}")
        return "_".join(bits)


class CutKind:
    """Validation for transformation variants per estimand family."""

    ALL = ("bj", "ipcw", "ipcw1", "ipcw2", "aipcw")
    AIPCW_FORMS = ("event", "censoring")

    @staticmethod
    def validate(kind: str, spec: EstimandSpec) -> str:
        kind = kind.lower()
        if kind not in CutKind.ALL:
            raise ValueError(f"unknown transformation kind {kind!r}")
        if spec.is_separable and kind != "aipcw":
            raise ValueError("separable estimands admit only the aipcw transformation")
        if kind in ("ipcw1", "ipcw2") and spec.family != "survival":
            raise ValueError(f"{kind} is defined for the survival family only")
        if kind == "ipcw" and spec.family == "survival":
            kind = "ipcw2"
        return kind


@dataclass(frozen=True)
class TransformedSample:
    """One (weight, outcome) pair ready for weighted regression on X."""

    weight: float
    outcome: float
    learner_kind: str
    source_id: int | None = None
    fold: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.outcome):
            raise ValueError("transformed outcome must be finite")
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ValueError("weight must be finite and nonnegative")


@dataclass
class Diagnostics:
    """Counts observations whose transformation touched a floored denominator."""

    floored: dict = field(default_factory=dict)
    totals: dict = field(default_factory=dict)
    warn_fraction: float = 0.05

    def record(self, key: str, n_floored: int, n_total: int):
        self.floored[key] = self.floored.get(key, 0) + int(n_floored)
        self.totals[key] = self.totals.get(key, 0) + int(n_total)

    def fraction(self, key: str) -> float:
        tot = self.totals.get(key, 0)
        return self.floored.get(key, 0) / tot if tot else 0.0

    def warnings(self) -> list[str]:
        return [
            f"{k}: floored denominators in {self.fraction(k):.1%} of observations"
            for k in sorted(self.totals)
            if self.fraction(k) > self.warn_fraction
        ]

    def as_dict(self) -> dict:
        return {
            k: {"floored": self.floored[k], "total": self.totals[k], "fraction": self.fraction(k)}
            for k in sorted(self.totals)
        }


# ---------------------------------------------------------------------------
# low-level batch machinery
# ---------------------------------------------------------------------------


class _Engine:
    """Evaluates martingale integrals of one observation batch over one bundle.

    All denominators are floored at ``floor`` and a per-observation flag
    records whether any floored value actually entered that observation's
    transformation.
    """

    def __init__(self, bundle: CurveBundle, times, causes, horizon: float, floor: float):
        self.b = bundle
        self.t = np.atleast_1d(np.asarray(times, dtype=float))
        self.cause = np.atleast_1d(np.asarray(causes, dtype=int))
        self.h = float(horizon)
        self.floor = floor
        cap = np.minimum(self.t, self.h)
        self.k = bundle.idx(cap)  # last grid index <= horizon ^ time
        self.jt = bundle.idx(self.t)  # last grid index <= time
        grid = bundle.grid
        on_grid = (self.k >= 0) & (np.where(self.k >= 0, grid[np.clip(self.k, 0, None)], -1.0) == self.t)
        # events-before-censoring: an event at a grid time is not at risk for
        # the censoring draw at that same time
        self.k_cens = np.where((self.cause >= 1) & on_grid, self.k - 1, self.k)
        self.floored_any = np.zeros(self.t.shape, dtype=bool)

    # -- flooring -----------------------------------------------------------
    def fl(self, x):
        return np.maximum(x, self.floor)

    def _mark_grid_floors(self, mask_grid: np.ndarray, upto_idx: np.ndarray):
        hit = np.cumsum(mask_grid.astype(int), axis=1)
        touched = self.b.at(hit, upto_idx, 0.0) > 0
        self.floored_any |= touched

    def _mark_point_floors(self, active: np.ndarray, *values):
        low = np.zeros(self.t.shape, dtype=bool)
        for v in values:
            low |= np.asarray(v) < self.floor
        self.floored_any |= active & low

    # -- martingale integrals -------------------------------------------------
    def event_integral(self, f_grid: np.ndarray, increments: np.ndarray, counting_mask, f_at_t):
        """int f dM for an event-type counting process, truncated at horizon.

        ``f_grid`` is the integrand on the grid (already floored); ``f_at_t``
        the integrand at the exact observation times; ``counting_mask`` says
        whose counting process jumps within the horizon.
        """
        prefix = np.cumsum(f_grid * increments, axis=1)
        comp = self.b.at(prefix, self.k, 0.0)
        return np.where(counting_mask, f_at_t, 0.0) - comp

    def cens_integral(self, f_grid: np.ndarray, counting_mask, f_at_t):
        """int f dM^C with the events-first at-risk correction at tied times."""
        prefix = np.cumsum(f_grid * self.b.censoring_increments, axis=1)
        comp = self.b.at(prefix, self.k_cens, 0.0)
        return np.where(counting_mask, f_at_t, 0.0) - comp

    # -- common lookups --------------------------------------------------------
    def s_at_t(self):
        return self.b.at(self.b.survival, self.jt, 1.0)

    def g_at_t(self):
        return self.b.at(self.b.censoring_survival, self.jt, 1.0)

    def g_left_at_t(self):
        return self.b.at_left(self.b.censoring_survival, self.t, 1.0)

    def g_left_at(self, x):
        return self.b.at_left(self.b.censoring_survival, np.broadcast_to(x, self.t.shape), 1.0)


def _event_mask(engine: _Engine, causes: set[int] | None):
    if causes is None:  # all-cause
        fires = engine.cause >= 1
    else:
        fires = np.isin(engine.cause, list(causes))
    return fires & (engine.t <= engine.h)


def _floored_grid_dens(engine: _Engine, *dens):
    """Floor each grid denominator; record which grid points were floored."""
    out = []
    mask = np.zeros_like(dens[0], dtype=bool)
    for d in dens:
        mask |= d < engine.floor
        out.append(engine.fl(d))
    return out, mask


# ---------------------------------------------------------------------------
# per-family transformations
# ---------------------------------------------------------------------------


def _survival_cut(spec, kind, form, b: CurveBundle, eng: _Engine):
    t = spec.horizon
    it = b.idx(np.array([t]))[0]
    s_t = b.at(b.survival, np.full(eng.t.shape, it), 1.0)
    at_risk = eng.t > t
    event = eng.cause >= 1

    if kind == "bj":
        s_cap = np.where(at_risk, s_t, eng.s_at_t())
        eng._mark_point_floors(np.ones_like(at_risk), s_cap)
        return (s_t - event * (~at_risk) * s_t) / eng.fl(s_cap)
    if kind == "ipcw1":
        g_t = b.at(b.censoring_survival, np.full(eng.t.shape, it), 1.0)
        eng._mark_point_floors(at_risk, g_t)
        return at_risk / eng.fl(g_t)
    if kind == "ipcw2":
        g_left = eng.g_left_at_t()
        eng._mark_point_floors(at_risk & event, g_left)
        return event * at_risk / eng.fl(g_left)

    # aipcw
    if form == "event":
        (s_g, g_prev), mask = _floored_grid_dens(eng, b.survival, b.censoring_survival_prev)
        f_grid = 1.0 / (s_g * g_prev)
        f_at = 1.0 / (eng.fl(eng.s_at_t()) * eng.fl(eng.g_left_at_t()))
        eng._mark_grid_floors(mask, eng.k)
        eng._mark_point_floors(_event_mask(eng, None), eng.s_at_t(), eng.g_left_at_t())
        return s_t * (1.0 - eng.event_integral(f_grid, b.all_increments, _event_mask(eng, None), f_at))
    # censoring-martingale form
    g_t = b.at(b.censoring_survival, np.full(eng.t.shape, it), 1.0)
    (s_g, g_g), mask = _floored_grid_dens(eng, b.survival, b.censoring_survival)
    f_grid = 1.0 / (s_g * g_g)
    f_at = 1.0 / (eng.fl(eng.s_at_t()) * eng.fl(eng.g_at_t()))
    cens_mask = (eng.cause == 0) & (eng.t <= t)
    eng._mark_grid_floors(mask, eng.k_cens)
    eng._mark_point_floors(cens_mask, eng.s_at_t(), eng.g_at_t())
    eng._mark_point_floors(at_risk, g_t)
    return (eng.t > t) / eng.fl(g_t) + s_t * eng.cens_integral(f_grid, cens_mask, f_at)


def _rmst_cut(spec, kind, form, b: CurveBundle, eng: _Engine):
    tau = spec.horizon
    r_tau = b.rmst_at(np.full(eng.t.shape, tau))
    cap = np.minimum(eng.t, tau)
    mint = cap
    delta_tau = (eng.cause >= 1) | (eng.t >= tau)

    if kind == "bj":
        s_cap = b.at(b.survival, b.idx(cap), 1.0)
        eng._mark_point_floors(~delta_tau, s_cap)
        return mint + (1.0 - delta_tau) * (r_tau - b.rmst_at(cap)) / eng.fl(s_cap)
    if kind == "ipcw":
        g_left_cap = b.at_left(b.censoring_survival, cap, 1.0)
        eng._mark_point_floors(delta_tau, g_left_cap)
        return delta_tau * mint / eng.fl(g_left_cap)

    if form == "event":
        (s_g, g_prev), mask = _floored_grid_dens(eng, b.survival, b.censoring_survival_prev)
        r_tau_grid = b.rmst_at(np.full((b.n_rows,), tau))
        f_grid = (r_tau_grid[:, None] - b.rmst_grid) / (s_g * g_prev)
        f_at = (r_tau - b.rmst_at(eng.t)) / (eng.fl(eng.s_at_t()) * eng.fl(eng.g_left_at_t()))
        eng._mark_grid_floors(mask, eng.k)
        eng._mark_point_floors(_event_mask(eng, None), eng.s_at_t(), eng.g_left_at_t())
        return r_tau - eng.event_integral(f_grid, b.all_increments, _event_mask(eng, None), f_at)

    # censoring-martingale form
    g_left_cap = b.at_left(b.censoring_survival, cap, 1.0)
    lead = delta_tau * mint / eng.fl(g_left_cap)
    (s_g, g_g), mask = _floored_grid_dens(eng, b.survival, b.censoring_survival)
    r_tau_grid = b.rmst_at(np.full((b.n_rows,), tau))
    f1_grid = b.grid[None, :] / g_g
    f2_grid = (r_tau_grid[:, None] - b.rmst_grid) / (s_g * g_g)
    cens_mask = (eng.cause == 0) & (eng.t <= tau)
    f1_at = eng.t / eng.fl(eng.g_at_t())
    f2_at = (r_tau - b.rmst_at(eng.t)) / (eng.fl(eng.s_at_t()) * eng.fl(eng.g_at_t()))
    eng._mark_grid_floors(mask, eng.k_cens)
    eng._mark_point_floors(cens_mask, eng.s_at_t(), eng.g_at_t())
    eng._mark_point_floors(delta_tau, g_left_cap)
    return lead + eng.cens_integral(f1_grid, cens_mask, f1_at) + eng.cens_integral(f2_grid, cens_mask, f2_at)


def _cif_cut(spec, kind, form, b: CurveBundle, eng: _Engine):
    t, j = spec.horizon, spec.cause
    if j not in b.cause_increments:
        raise ValueError(f"nuisance curves carry no cause {j}")
    fj = b.cif[j]
    it = b.idx(np.array([t]))[0]
    fj_t = b.at(fj, np.full(eng.t.shape, it), 0.0)
    hit = (eng.cause == j) & (eng.t <= t)
    censored_before = (eng.cause == 0) & (eng.t <= t)

    if kind == "bj":
        s_tt = eng.s_at_t()
        eng._mark_point_floors(censored_before, s_tt)
        return hit * 1.0 + censored_before * (fj_t - b.at(fj, eng.jt, 0.0)) / eng.fl(s_tt)
    if kind == "ipcw":
        g_left = eng.g_left_at_t()
        eng._mark_point_floors(hit, g_left)
        return hit / eng.fl(g_left)

    if form == "event":
        (s_g, g_prev), mask = _floored_grid_dens(eng, b.survival, b.censoring_survival_prev)
        fj_t_rows = b.at(fj, np.full((b.n_rows,), it), 0.0)
        w_grid = fj_t_rows[:, None] - fj
        f_all = w_grid / (s_g * g_prev)
        f_all_at = (fj_t - b.at(fj, eng.jt, 0.0)) / (eng.fl(eng.s_at_t()) * eng.fl(eng.g_left_at_t()))
        g_prev_f, mask_j = _floored_grid_dens(eng, b.censoring_survival_prev)
        f_j = 1.0 / g_prev_f[0]
        f_j_at = 1.0 / eng.fl(eng.g_left_at_t())
        eng._mark_grid_floors(mask | mask_j, eng.k)
        eng._mark_point_floors(_event_mask(eng, None), eng.s_at_t(), eng.g_left_at_t())
        return (
            fj_t
            - eng.event_integral(f_all, b.all_increments, _event_mask(eng, None), f_all_at)
            + eng.event_integral(f_j, b.cause_increments[j], _event_mask(eng, {j}), f_j_at)
        )

    # censoring-martingale form
    g_left = eng.g_left_at_t()
    lead = hit / eng.fl(g_left)
    (s_g, g_g), mask = _floored_grid_dens(eng, b.survival, b.censoring_survival)
    fj_t_rows = b.at(fj, np.full((b.n_rows,), it), 0.0)
    f_grid = (fj_t_rows[:, None] - fj) / (s_g * g_g)
    f_at = (fj_t - b.at(fj, eng.jt, 0.0)) / (eng.fl(eng.s_at_t()) * eng.fl(eng.g_at_t()))
    eng._mark_grid_floors(mask, eng.k_cens)
    eng._mark_point_floors(censored_before, eng.s_at_t(), eng.g_at_t())
    eng._mark_point_floors(hit, g_left)
    return lead + eng.cens_integral(f_grid, censored_before, f_at)


def _rmtl_cut(spec, kind, form, b: CurveBundle, eng: _Engine):
    tau, j = spec.horizon, spec.cause
    if j not in b.cause_increments:
        raise ValueError(f"nuisance curves carry no cause {j}")
    fj = b.cif[j]
    cap = np.minimum(eng.t, tau)
    lost = tau - cap
    rl_tau = b.rmtl_at(j, np.full(eng.t.shape, tau))
    rl_tau_rows = b.rmtl_at(j, np.full((b.n_rows,), tau))
    delta_tau = (eng.cause >= 1) | (eng.t >= tau)
    hit = eng.cause == j

    if kind == "bj":
        s_cap = b.at(b.survival, b.idx(cap), 1.0)
        eng._mark_point_floors(~delta_tau, s_cap)
        bracket = rl_tau - b.rmtl_at(j, cap) - b.at(fj, b.idx(cap), 0.0) * lost
        return lost * hit + (1.0 - delta_tau) * bracket / eng.fl(s_cap)
    if kind == "ipcw":
        g_left = eng.g_left_at_t()
        eng._mark_point_floors(hit & (lost > 0), g_left)
        return lost * hit / eng.fl(g_left)

    if form == "event":
        (s_g, g_prev), mask = _floored_grid_dens(eng, b.survival, b.censoring_survival_prev)
        f_j = (tau - b.grid[None, :]) / g_prev
        f_j_at = (tau - eng.t) / eng.fl(eng.g_left_at_t())
        w_grid = (rl_tau_rows[:, None] - b.rmtl_grid[j]) - (tau - b.grid[None, :]) * fj
        f_all = w_grid / (s_g * g_prev)
        f_all_at = ((rl_tau - b.rmtl_at(j, eng.t)) - (tau - eng.t) * b.at(fj, eng.jt, 0.0)) / (
            eng.fl(eng.s_at_t()) * eng.fl(eng.g_left_at_t())
        )
        eng._mark_grid_floors(mask, eng.k)
        eng._mark_point_floors(_event_mask(eng, None), eng.s_at_t(), eng.g_left_at_t())
        return (
            rl_tau
            + eng.event_integral(f_j, b.cause_increments[j], _event_mask(eng, {j}), f_j_at)
            - eng.event_integral(f_all, b.all_increments, _event_mask(eng, None), f_all_at)
        )

    # censoring-martingale form
    g_left = eng.g_left_at_t()
    lead = lost * hit / eng.fl(g_left)
    (s_g, g_g), mask = _floored_grid_dens(eng, b.survival, b.censoring_survival)
    w_grid = (rl_tau_rows[:, None] - b.rmtl_grid[j]) - (tau - b.grid[None, :]) * fj
    f_grid = w_grid / (s_g * g_g)
    cens_mask = (eng.cause == 0) & (eng.t <= tau)
    f_at = ((rl_tau - b.rmtl_at(j, eng.t)) - (tau - eng.t) * b.at(fj, eng.jt, 0.0)) / (
        eng.fl(eng.s_at_t()) * eng.fl(eng.g_at_t())
    )
    eng._mark_grid_floors(mask, eng.k_cens)
    eng._mark_point_floors(cens_mask, eng.s_at_t(), eng.g_at_t())
    return lead + eng.cens_integral(f_grid, cens_mask, f_at)


_FAMILY_CUTS = {"survival": _survival_cut, "rmst": _rmst_cut, "cif": _cif_cut, "rmtl": _rmtl_cut}


def cut_values(
    spec: EstimandSpec,
    kind: str,
    bundle: CurveBundle,
    times,
    causes,
    *,
    form: str = "event",
    floor: float = DEFAULT_FLOOR,
    diag: Diagnostics | None = None,
) -> np.ndarray:
    """Transformation values for a batch of observations over one arm bundle.

    ``bundle`` may carry one curve row shared by all observations or one row
    per observation.  ``form`` selects the algebraic form of the augmented
    transformation ("event" or "censoring").
    """
    kind = CutKind.validate(kind, spec)
    if form not in CutKind.AIPCW_FORMS:
        raise ValueError(f"unknown aipcw form {form!r}")
    if spec.is_separable:
        raise ValueError("use separable_cut_values for separable estimands")
    eng = _Engine(bundle, times, causes, spec.horizon, floor)
    if bundle.n_rows not in (1, eng.t.size):
        raise ValueError("bundle rows must be 1 or match the number of observations")
    out = _FAMILY_CUTS[spec.family](spec, kind, form, bundle, eng)
    if diag is not None:
        diag.record(f"cut_{spec.label()}_{kind}", int(eng.floored_any.sum()), eng.t.size)
    return np.asarray(out, dtype=float)


# ---------------------------------------------------------------------------
# separable transformations (competing risks, hybrid-arm hazard mixes)
# ---------------------------------------------------------------------------


def _hybrid_curves(nus: NuisanceSet, j: int, cause_arm: int, competing_arm: int) -> CurveBundle:
    """CIF/RMTL of cause j when its hazard follows ``cause_arm`` and the
    competing hazard follows ``competing_arm``; exact discrete analog of the
    exp(-L_j - L_jbar) dL_j mix."""
    dlj = nus.arm(cause_arm).cause_increments[j]
    bo = nus.arm(competing_arm)
    dlo = bo.all_increments - bo.cause_increments[j]
    rows = max(dlj.shape[0], dlo.shape[0])
    m = nus.grid.size
    dlj = np.broadcast_to(dlj, (rows, m)).copy()
    dlo = np.broadcast_to(dlo, (rows, m)).copy()
    total = dlj + dlo
    over = total > 1.0
    if over.any():  # mixing arms can stack increments past a unit atom
        scale = np.where(over, 1.0 / total, 1.0)
        dlj, dlo = dlj * scale, dlo * scale
    return CurveBundle(nus.grid, {j: dlj, j + 1000: dlo}, np.zeros((1, m)))


def separable_cut_values(
    spec: EstimandSpec,
    nus: NuisanceSet,
    obs_arm: int,
    times,
    causes,
    *,
    form: str = "expanded",
    floor: float = DEFAULT_FLOOR,
    collapse: bool = True,
    diag: Diagnostics | None = None,
) -> np.ndarray:
    """Augmented transformation for separable direct/indirect estimands.

    All observations in the batch must share ``obs_arm``.  For direct
    estimands the cause-of-interest hazard follows ``obs_arm`` and the
    competing hazard the spec's ``fixed_arm``; for indirect estimands the
    roles are swapped.  When both components follow ``obs_arm`` the hybrid
    curves coincide with the plain ones and, with ``collapse`` set, the value
    is exactly the plain cif/rmtl transformation (the influence-function
    machinery passes ``collapse=False`` to keep the competing-cause
    martingale term explicit).
    """
    if not spec.is_separable:
        raise ValueError("separable_cut_values requires a separable estimand")
    if form not in ("expanded", "grouped"):
        raise ValueError(f"unknown separable form {form!r}")
    j = spec.cause
    b = nus.arm(obs_arm)
    if len(b.cause_increments) < 2:
        raise ValueError("separable estimands require at least two competing causes")
    if j not in b.cause_increments:
        raise ValueError(f"nuisance curves carry no cause {j}")
    direct = spec.family.startswith("sep_direct")
    time_scale = spec.family.endswith("rmtl")
    if direct:
        cause_arm, competing_arm = obs_arm, spec.fixed_arm
        a_star = spec.fixed_arm
    else:
        cause_arm, competing_arm = spec.fixed_arm, obs_arm
        a_star = 1 - spec.fixed_arm
    if collapse and cause_arm == competing_arm:
        base = EstimandSpec(("rmtl" if time_scale else "cif"), spec.horizon, j)
        return cut_values(base, "aipcw", b, times, causes, form="event", floor=floor, diag=diag)

    eng = _Engine(b, times, causes, spec.horizon, floor)
    h = spec.horizon
    grid = b.grid
    n = eng.t.size

    # competing-cause survival ratio between the fixed-arm and own-arm curves
    s_bar_own = b.competing_survival[j]
    s_bar_star = nus.arm(a_star).competing_survival[j]
    (s_bar_own_f,), mask_ratio = _floored_grid_dens(eng, s_bar_own)
    ratio = np.atleast_2d(s_bar_star / s_bar_own_f)
    ratio_at = b.at(ratio, eng.jt, 1.0) if ratio.shape[0] in (1, n) else None
    if ratio_at is None:
        raise ValueError("ratio rows must be 1 or match the number of observations")

    hyb_lead = _hybrid_curves(nus, j, cause_arm, competing_arm)
    hyb_bar = _hybrid_curves(nus, j, 1 - a_star, a_star)
    it = b.idx(np.array([h]))[0]

    (s_g, g_prev), mask = _floored_grid_dens(eng, b.survival, b.censoring_survival_prev)
    g_prev_at = eng.fl(eng.g_left_at_t())
    s_at = eng.fl(eng.s_at_t())
    fj = b.cif[j]
    d_all = b.all_increments
    d_j = b.cause_increments[j]
    d_bar = d_all - d_j
    mask_j = _event_mask(eng, {j})
    mask_all = _event_mask(eng, None)
    bar_causes = set(b.causes) - {j}
    mask_bar = _event_mask(eng, bar_causes)

    if not time_scale:
        lead = hyb_lead.at(hyb_lead.cif[j], np.full((n,), it), 0.0)
        fj_h = b.at(fj, np.full((b.n_rows,), it), 0.0)
        w_all = fj_h[:, None] - fj
        w_all_at = b.at(fj, np.full(eng.t.shape, it), 0.0) - b.at(fj, eng.jt, 0.0)
        fbar_h = hyb_bar.at(hyb_bar.cif[j], np.full((hyb_bar.n_rows,), it), 0.0)
        w_bar = fbar_h[:, None] - hyb_bar.cif[j]
        w_bar_at = hyb_bar.at(hyb_bar.cif[j], np.full(eng.t.shape, it), 0.0) - hyb_bar.at(
            hyb_bar.cif[j], eng.jt, 0.0
        )
        if form == "expanded":
            term_j = eng.event_integral(ratio / g_prev, d_j, mask_j, ratio_at / g_prev_at)
            term_all = eng.event_integral(ratio * w_all / (s_g * g_prev), d_all, mask_all,
                                          ratio_at * w_all_at / (s_at * g_prev_at))
            term_bar = eng.event_integral(w_bar / (s_g * g_prev), d_bar, mask_bar,
                                          w_bar_at / (s_at * g_prev_at))
            if direct:
                out = lead + term_j - term_all + term_bar
            else:
                one_m = 1.0 - ratio
                one_m_at = 1.0 - ratio_at
                term_j = eng.event_integral(one_m / g_prev, d_j, mask_j, one_m_at / g_prev_at)
                term_all = eng.event_integral(one_m * w_all / (s_g * g_prev), d_all, mask_all,
                                              one_m_at * w_all_at / (s_at * g_prev_at))
                out = lead + term_j - term_all - term_bar
        else:  # grouped form
            if direct:
                br_j = (ratio / g_prev) * (1.0 - w_all / s_g)
                br_j_at = (ratio_at / g_prev_at) * (1.0 - w_all_at / s_at)
                br_bar = (w_bar - ratio * w_all) / (s_g * g_prev)
                br_bar_at = (w_bar_at - ratio_at * w_all_at) / (s_at * g_prev_at)
                out = (
                    lead
                    + eng.event_integral(br_j, d_j, mask_j, br_j_at)
                    + eng.event_integral(br_bar, d_bar, mask_bar, br_bar_at)
                )
            else:
                one_m = 1.0 - ratio
                one_m_at = 1.0 - ratio_at
                br_j = (one_m / g_prev) * (1.0 - w_all / s_g)
                br_j_at = (one_m_at / g_prev_at) * (1.0 - w_all_at / s_at)
                br_bar = (-w_bar - one_m * w_all) / (s_g * g_prev)
                br_bar_at = (-w_bar_at - one_m_at * w_all_at) / (s_at * g_prev_at)
                out = (
                    lead
                    + eng.event_integral(br_j, d_j, mask_j, br_j_at)
                    + eng.event_integral(br_bar, d_bar, mask_bar, br_bar_at)
                )
    else:
        tau = h
        lead = hyb_lead.rmtl_at(j, np.full((n,), tau)) if hyb_lead.n_rows == n else np.broadcast_to(
            hyb_lead.rmtl_at(j, np.array([tau])), (n,)
        ).copy()
        rl_tau_rows = b.rmtl_at(j, np.full((b.n_rows,), tau))
        w_all = (rl_tau_rows[:, None] - b.rmtl_grid[j]) - (tau - grid[None, :]) * fj
        w_all_at = (b.rmtl_at(j, np.full(eng.t.shape, tau)) - b.rmtl_at(j, eng.t)) - (
            tau - eng.t
        ) * b.at(fj, eng.jt, 0.0)
        rlbar_rows = hyb_bar.rmtl_at(j, np.full((hyb_bar.n_rows,), tau))
        w_bar = (rlbar_rows[:, None] - hyb_bar.rmtl_grid[j]) - (tau - grid[None, :]) * hyb_bar.cif[j]
        w_bar_at = (hyb_bar.rmtl_at(j, np.full(eng.t.shape, tau)) - hyb_bar.rmtl_at(j, eng.t)) - (
            tau - eng.t
        ) * hyb_bar.at(hyb_bar.cif[j], eng.jt, 0.0)
        factor = ratio if direct else 1.0 - ratio
        factor_at = ratio_at if direct else 1.0 - ratio_at
        sign_bar = 1.0 if direct else -1.0
        term_j = eng.event_integral((tau - grid[None, :]) * factor / g_prev, d_j, mask_j,
                                    (tau - eng.t) * factor_at / g_prev_at)
        term_all = eng.event_integral(factor * w_all / (s_g * g_prev), d_all, mask_all,
                                      factor_at * w_all_at / (s_at * g_prev_at))
        term_bar = eng.event_integral(w_bar / (s_g * g_prev), d_bar, mask_bar,
                                      w_bar_at / (s_at * g_prev_at))
        out = lead + term_j - term_all + sign_bar * term_bar

    eng._mark_grid_floors(mask | mask_ratio, eng.k)
    eng._mark_point_floors(mask_all, eng.s_at_t(), eng.g_left_at_t())
    if diag is not None:
        diag.record(f"cut_{spec.label()}_aipcw", int(eng.floored_any.sum()), n)
    return np.asarray(out, dtype=float)


# ---------------------------------------------------------------------------
# influence-function transformations and eta-implied conditional means
# ---------------------------------------------------------------------------


def implied_mean(spec: EstimandSpec, bundle: CurveBundle) -> np.ndarray:
    """Conditional mean of the target outcome implied by the hazard curves."""
    n = bundle.n_rows
    it = bundle.idx(np.array([spec.horizon]))[0]
    if spec.family == "survival":
        return bundle.at(bundle.survival, np.full((n,), it), 1.0)
    if spec.family == "rmst":
        return bundle.rmst_at(np.full((n,), spec.horizon))
    if spec.family == "cif":
        return bundle.at(bundle.cif[spec.cause], np.full((n,), it), 0.0)
    if spec.family == "rmtl":
        return bundle.rmtl_at(spec.cause, np.full((n,), spec.horizon))
    raise ValueError("implied_mean covers non-separable estimands; use separable_implied_mean")


def separable_implied_mean(spec: EstimandSpec, nus: NuisanceSet, cause_arm: int, competing_arm: int) -> np.ndarray:
    hyb = _hybrid_curves(nus, spec.cause, cause_arm, competing_arm)
    it = hyb.idx(np.array([spec.horizon]))[0]
    if spec.family.endswith("rmtl"):
        return hyb.rmtl_at(spec.cause, np.full((hyb.n_rows,), spec.horizon))
    return hyb.at(hyb.cif[spec.cause], np.full((hyb.n_rows,), it), 0.0)


def if_transform_values(
    spec: EstimandSpec,
    nus: NuisanceSet,
    arms,
    times,
    causes,
    *,
    floor: float = DEFAULT_FLOOR,
    diag: Diagnostics | None = None,
) -> np.ndarray:
    """Uncentered influence-function transformation of the arm contrast.

    For non-separable estimands this is exactly the inverse-propensity
    augmented version of the augmented transformation: plug-in mean plus
    (2A-1)/pi(A|X) times the own-arm residual.  For separable estimands the
    competing-cause martingale term carries the two-arm indicator contrast.
    """
    arms = np.atleast_1d(np.asarray(arms, dtype=int))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    causes = np.atleast_1d(np.asarray(causes, dtype=int))
    n = times.size
    pi1 = np.broadcast_to(nus.pi1, (n,))
    pi_a = np.where(arms == 1, pi1, 1.0 - pi1)

    if not spec.is_separable:
        out = np.zeros(n)
        for a in (0, 1):
            mu_a = np.broadcast_to(implied_mean(spec, nus.arm(a)), (n,))
            sign = 1.0 if a == 1 else -1.0
            own = arms == a
            out += sign * mu_a
            if own.any():
                y = cut_values(spec, "aipcw", nus.arm(a), times, causes, form="event", floor=floor, diag=None)
                out += np.where(own, sign * (y - mu_a) / np.where(arms == a, pi_a, 1.0), 0.0)
        if diag is not None:
            diag.record(f"if_{spec.label()}", 0, n)
        return out

    # separable families: phi(., a_j=1, fix) - phi(., a_j=0, fix) for direct,
    # phi(., fix, a_jbar=1) - phi(., fix, a_jbar=0) for indirect
    j = spec.cause
    direct = spec.family.startswith("sep_direct")
    time_scale = spec.family.endswith("rmtl")
    out = np.zeros(n)
    for a in (0, 1):
        sign = 1.0 if a == 1 else -1.0
        if direct:
            cause_arm, competing_arm, a_star = a, spec.fixed_arm, spec.fixed_arm
        else:
            cause_arm, competing_arm, a_star = spec.fixed_arm, a, 1 - spec.fixed_arm
        mu = np.broadcast_to(separable_implied_mean(spec, nus, cause_arm, competing_arm), (n,))
        out += sign * mu
        # own-arm residual term, exactly the augmented transformation
        own = arms == a
        if own.any():
            y = separable_cut_values(
                spec, nus, a, times, causes, form="expanded", floor=floor, collapse=False, diag=None
            )
            out += np.where(own, sign * (y - mu) / np.maximum(pi_a, 1e-12), 0.0)
        # indicator-contrast correction on the competing-cause martingale for
        # observations in the fixed component's arm, compensated at that arm
        other = (arms == a_star) & (arms != a)
        if other.any():
            tbar = _competing_bar_term(spec, nus, a_star, a_star, times, causes, floor, time_scale)
            bar_sign = -1.0 if direct else 1.0
            pi_star = np.where(arms == 1, pi1, 1.0 - pi1)
            out += np.where(other, sign * bar_sign * tbar / np.maximum(pi_star, 1e-12), 0.0)
    if diag is not None:
        diag.record(f"if_{spec.label()}", 0, n)
    return out


def _competing_bar_term(spec, nus, comp_arm, a_star, times, causes, floor, time_scale):
    """Integral of the hybrid difference against dM_jbar(.|comp_arm)."""
    j = spec.cause
    b = nus.arm(comp_arm)
    eng = _Engine(b, times, causes, spec.horizon, floor)
    (s_g, g_prev), _ = _floored_grid_dens(eng, b.survival, b.censoring_survival_prev)
    s_at = eng.fl(eng.s_at_t())
    g_at = eng.fl(eng.g_left_at_t())
    hyb_bar = _hybrid_curves(nus, j, 1 - a_star, a_star)
    d_bar = b.all_increments - b.cause_increments[j]
    bar_causes = set(b.causes) - {j}
    mask_bar = _event_mask(eng, bar_causes)
    it = b.idx(np.array([spec.horizon]))[0]
    if not time_scale:
        fbar_h = hyb_bar.at(hyb_bar.cif[j], np.full((hyb_bar.n_rows,), it), 0.0)
        w_bar = fbar_h[:, None] - hyb_bar.cif[j]
        w_bar_at = hyb_bar.at(hyb_bar.cif[j], np.full(eng.t.shape, it), 0.0) - hyb_bar.at(hyb_bar.cif[j], eng.jt, 0.0)
    else:
        tau = spec.horizon
        rl_rows = hyb_bar.rmtl_at(j, np.full((hyb_bar.n_rows,), tau))
        w_bar = (rl_rows[:, None] - hyb_bar.rmtl_grid[j]) - (tau - b.grid[None, :]) * hyb_bar.cif[j]
        w_bar_at = (hyb_bar.rmtl_at(j, np.full(eng.t.shape, tau)) - hyb_bar.rmtl_at(j, eng.t)) - (
            tau - eng.t
        ) * hyb_bar.at(hyb_bar.cif[j], eng.jt, 0.0)
    return eng.event_integral(w_bar / (s_g * g_prev), d_bar, mask_bar, w_bar_at / (s_at * g_at))


# ---------------------------------------------------------------------------
# scalar wrappers (one observation at a time)
# ---------------------------------------------------------------------------


def cut_value(
    obs: Observation,
    nus: NuisanceSet,
    spec: EstimandSpec,
    kind: str,
    arm: int,
    *,
    form: str = "event",
    floor: float = DEFAULT_FLOOR,
    diag: Diagnostics | None = None,
) -> float:
    """Transformation of one observation for the given arm's curves."""
    vals = cut_values(spec, kind, nus.arm(arm), [obs.time], [obs.cause], form=form, floor=floor, diag=diag)
    return float(vals[0])


def cut_separable(
    obs: Observation,
    nus: NuisanceSet,
    spec: EstimandSpec,
    arm: int,
    a_star: int | None = None,
    *,
    form: str = "expanded",
    floor: float = DEFAULT_FLOOR,
    collapse: bool = True,
    diag: Diagnostics | None = None,
) -> float:
    """Separable transformation of one observation (arm = the varying component)."""
    implied = spec.fixed_arm if spec.family.startswith("sep_direct") else 1 - spec.fixed_arm
    if a_star is not None and a_star != implied:
        raise ValueError(f"a_star={a_star} conflicts with the spec's fixed arm (expected {implied})")
    vals = separable_cut_values(
        spec, nus, arm, [obs.time], [obs.cause], form=form, floor=floor, collapse=collapse, diag=diag
    )
    return float(vals[0])


def if_transform(
    obs: Observation,
    nus: NuisanceSet,
    spec: EstimandSpec,
    *,
    floor: float = DEFAULT_FLOOR,
    diag: Diagnostics | None = None,
) -> float:
    vals = if_transform_values(spec, nus, [obs.arm], [obs.time], [obs.cause], floor=floor, diag=diag)
    return float(vals[0])


# ---------------------------------------------------------------------------
# learner-specific (weight, outcome) construction
# ---------------------------------------------------------------------------


def transform_targets(
    kind: str,
    y_cut,
    arms,
    mu0,
    mu1,
    pi1,
    *,
    ra_cross_arm: bool = True,
    residual_floor: float = PROPENSITY_RESIDUAL_FLOOR,
    diag: Diagnostics | None = None,
):
    """Vectorized (weight, outcome) pairs for the transformed-minimization learners.

    ``mu0``/``mu1`` are arm-specific conditional means of the transformed
    outcome and the marginal mean is their propensity mix
    mu = pi0 * mu0 + pi1 * mu1.  ``ra_cross_arm`` selects the cross-arm
    imputation (treated rows use mu0) which is the version whose conditional
    mean is the effect itself; the own-arm variant is kept for completeness.
    """
    kind = kind.lower()
    if kind not in TRANSFORM_LEARNERS:
        raise ValueError(f"unknown transformed learner {kind!r}")
    y = np.atleast_1d(np.asarray(y_cut, dtype=float))
    a = np.atleast_1d(np.asarray(arms, dtype=float))
    mu0 = np.broadcast_to(np.asarray(mu0, dtype=float), y.shape)
    mu1 = np.broadcast_to(np.asarray(mu1, dtype=float), y.shape)
    pi1 = np.broadcast_to(np.asarray(pi1, dtype=float), y.shape)
    pi0 = 1.0 - pi1
    mu = pi0 * mu0 + pi1 * mu1
    ones = np.ones_like(y)
    n_floored = 0

    if kind == "iptw":
        w, ystar = ones, y * (a - pi1) / (pi0 * pi1)
    elif kind == "ra":
        if ra_cross_arm:
            ystar = np.where(a == 1, y - mu0, mu1 - y)
        else:
            ystar = np.where(a == 1, y - mu1, mu0 - y)
        w = ones
    elif kind == "aiptw":
        w = ones
        ystar = mu1 - mu0 + a * (y - mu1) / pi1 - (1.0 - a) * (y - mu0) / pi0
    elif kind == "if":
        w, ystar = ones, y
    elif kind in ("mc", "mcea"):
        w = (2.0 * a - 1.0) * (a - pi1) / (4.0 * pi0 * pi1)
        ystar = 2.0 * (2.0 * a - 1.0) * (y - mu if kind == "mcea" else y)
    else:  # r or u
        resid = a - pi1
        low = np.abs(resid) < residual_floor
        n_floored = int(low.sum())
        resid = np.where(low, np.sign(resid) * residual_floor + (resid == 0) * residual_floor, resid)
        ystar = (y - mu) / resid
        w = resid**2 if kind == "r" else ones
    if diag is not None:
        diag.record(f"target_{kind}", n_floored, y.size)
    return w, ystar


def minimization_target(
    learner_kind: str,
    y_cut: float,
    obs: Observation,
    mu0: float,
    mu1: float,
    pi1: float,
    *,
    ra_cross_arm: bool = True,
    fold: int | None = None,
    diag: Diagnostics | None = None,
) -> TransformedSample:
    """One (w*, Y*) pair per the transformed-minimization catalog."""
    w, ystar = transform_targets(
        learner_kind, [y_cut], [obs.arm], mu0, mu1, pi1, ra_cross_arm=ra_cross_arm, diag=diag
    )
    return TransformedSample(float(w[0]), float(ystar[0]), learner_kind.lower(), obs.id, fold)
