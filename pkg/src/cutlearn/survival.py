"""Right-continuous step functions and discrete-time survival primitives.

Everything downstream (nuisance curves, outcome transformations) is built on
the objects in this module: a cumulative hazard is a nondecreasing step
function with per-jump increments in [0, 1], survival curves come from the
discrete product integral S = prod(1 - dL), and cumulative incidence curves
from F_j(t) = sum_{u<=t} S(u-) dL_j(u).  With these conventions the adding-up
identity S(t) + sum_j F_j(t) = 1 holds exactly at every grid point, which is
what makes the per-observation transformation identities testable to machine
precision.

Tied event/censoring times are resolved events-first: at a shared jump time a
subject is at risk for the event draw, and only subjects who survive it are at
risk for the censoring draw.  This matches the left-limit convention G(T-)
used by inverse-censoring weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidHazardError",
    "GridMismatchError",
    "Observation",
    "StepFunction",
    "CumulativeHazard",
    "SurvivalCurve",
    "CifCurve",
    "step_eval",
    "step_left_limit",
    "product_limit",
    "cif_from_hazards",
    "restricted_integral",
    "martingale_integral",
]


class InvalidHazardError(ValueError):
    """A cumulative hazard violates the discrete-hazard constraints."""


class GridMismatchError(ValueError):
    """Two curves that must share a jump grid do not."""


@dataclass(frozen=True)
class Observation:
    """One subject: covariates, binary arm, follow-up time and cause.

    ``cause`` is 0 for censoring and 1..j* for failure causes; with a single
    failure type it doubles as the usual event indicator.
    """

    id: int
    covariates: np.ndarray
    arm: int
    time: float
    cause: int

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        object.__setattr__(self, "covariates", x)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"observation {self.id}: non-finite covariates")
        if self.arm not in (0, 1):
            raise ValueError(f"observation {self.id}: arm must be 0 or 1")
        if not (np.isfinite(self.time) and self.time > 0):
            raise ValueError(f"observation {self.id}: time must be positive")
        if self.cause < 0:
            raise ValueError(f"observation {self.id}: cause must be >= 0")

    @property
    def event(self) -> int:
        return int(self.cause > 0)


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous piecewise-constant function with left limits.

    ``jump_values[i]`` is the value on [jump_times[i], jump_times[i+1]) and
    ``initial_value`` the value on [0, jump_times[0]).
    """

    jump_times: np.ndarray
    jump_values: np.ndarray
    initial_value: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float)
        v = np.asarray(self.jump_values, dtype=float)
        if t.ndim != 1 or v.shape != t.shape:
            raise ValueError("jump_times and jump_values must be 1-d and aligned")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] <= 0):
            raise ValueError("jump_times must be strictly increasing and positive")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "jump_values", v)

    def __call__(self, t):
        return step_eval(self, t)

    def left_limit(self, t):
        return step_left_limit(self, t)

    @property
    def increments(self) -> np.ndarray:
        if self.jump_times.size == 0:
            return np.empty(0)
        prev = np.concatenate(([self.initial_value], self.jump_values[:-1]))
        return self.jump_values - prev


def step_eval(f: StepFunction, t):
    """Right-continuous evaluation f(t) for scalar or array t >= 0."""
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(f.jump_times, t, side="right") - 1
    padded = np.concatenate(([f.initial_value], f.jump_values))
    out = padded[idx + 1]
    return float(out) if out.ndim == 0 else out


def step_left_limit(f: StepFunction, t):
    """Left limit f(t-) for scalar or array t > 0."""
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(f.jump_times, t, side="left") - 1
    padded = np.concatenate(([f.initial_value], f.jump_values))
    out = padded[idx + 1]
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CumulativeHazard(StepFunction):
    """Nondecreasing step function starting at 0 with increments in [0, 1]."""

    initial_value: float = field(default=0.0, init=False)

    def __post_init__(self):
        super().__post_init__()
        inc = self.increments
        if inc.size and (np.any(inc < -1e-12) or np.any(inc > 1 + 1e-12)):
            raise InvalidHazardError("hazard increments must lie in [0, 1]")


@dataclass(frozen=True)
class SurvivalCurve(StepFunction):
    initial_value: float = field(default=1.0, init=False)

    def __post_init__(self):
        super().__post_init__()
        v = self.jump_values
        if v.size and (np.any(v < -1e-12) or np.any(v > 1 + 1e-12) or np.any(np.diff(np.concatenate(([1.0], v))) > 1e-12)):
            raise ValueError("survival curve must be nonincreasing in [0, 1]")


@dataclass(frozen=True)
class CifCurve(StepFunction):
    initial_value: float = field(default=0.0, init=False)

    def __post_init__(self):
        super().__post_init__()
        v = self.jump_values
        if v.size and (np.any(v < -1e-12) or np.any(v > 1 + 1e-12) or np.any(np.diff(np.concatenate(([0.0], v))) < -1e-12)):
            raise ValueError("CIF must be nondecreasing in [0, 1]")


def product_limit(hazard: CumulativeHazard) -> SurvivalCurve:
    """Discrete product integral S(t) = prod_{u<=t} (1 - dL(u))."""
    inc = hazard.increments
    if inc.size and np.any(inc > 1 + 1e-12):
        raise InvalidHazardError("hazard increment exceeds 1")
    return SurvivalCurve(hazard.jump_times, np.cumprod(1.0 - inc))


def cif_from_hazards(cause_hazard: CumulativeHazard, all_hazard: CumulativeHazard) -> CifCurve:
    """Cause-specific CIF F_j(t) = sum_{u<=t} S_all(u-) dL_j(u) on a shared grid."""
    if cause_hazard.jump_times.shape != all_hazard.jump_times.shape or not np.array_equal(
        cause_hazard.jump_times, all_hazard.jump_times
    ):
        raise GridMismatchError("cause and all-cause hazards must share one grid")
    d_j = cause_hazard.increments
    d_all = all_hazard.increments
    if np.any(d_j > d_all + 1e-12):
        raise InvalidHazardError("cause-specific increment exceeds all-cause increment")
    surv = np.concatenate(([1.0], np.cumprod(1.0 - d_all)[:-1]))
    return CifCurve(cause_hazard.jump_times, np.cumsum(surv * d_j))


def restricted_integral(curve: StepFunction, horizon: float) -> float:
    """Exact integral of a right-continuous step function over [0, horizon]."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    t = curve.jump_times
    k = int(np.searchsorted(t, horizon, side="right"))
    knots = np.concatenate(([0.0], t[:k], [horizon]))
    vals = np.concatenate(([curve.initial_value], curve.jump_values[:k]))
    return float(np.sum(vals * np.diff(knots)))


def martingale_integral(
    obs: Observation,
    integrand: StepFunction,
    hazard: CumulativeHazard,
    event_filter: frozenset | set,
    horizon: float,
) -> float:
    """Compute int_0^{horizon ^ T} f(u) dM(u) for one subject.

    The counting process is selected by ``event_filter`` (a set of causes:
    {1,...,j*} for all-cause, {j} for cause j, {0} for censoring) and
    compensated by ``hazard``: the result is
    f(T) 1{cause in filter, T <= horizon} - sum_{u <= horizon ^ T} f(u) dL(u),
    the at-risk indicator entering through the upper limit of the sum.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    cap = min(obs.time, horizon)
    counting = 0.0
    if obs.cause in event_filter and obs.time <= horizon:
        counting = step_eval(integrand, obs.time)
    t = hazard.jump_times
    k = int(np.searchsorted(t, cap, side="right"))
    compensator = float(np.sum(step_eval(integrand, t[:k]) * hazard.increments[:k]))
    return counting - compensator
