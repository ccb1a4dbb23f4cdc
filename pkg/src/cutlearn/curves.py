"""Per-subject, per-arm nuisance curve bundles on a shared time grid.

A :class:`CurveBundle` stores discrete hazard increments for every failure
cause and for censoring, as (B, m) arrays over a common grid of m jump times;
B is 1 when one curve set is shared by many observations (e.g. Monte Carlo
draws at a fixed covariate value) or the number of subjects when each row has
its own predicted curves.  All derived quantities (survival, censoring
survival, CIFs, restricted-mean integrals) follow the discrete product-limit
conventions of :mod:`cutlearn.survival`, so S(t) + sum_j F_j(t) = 1 holds
exactly on the grid.

:class:`NuisanceSet` pairs the two arm bundles with propensity values; it is
the eta = {pi, Lambda_C, Lambda, Lambda_j} object every outcome
transformation consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .survival import CumulativeHazard, GridMismatchError

__all__ = ["CurveBundle", "NuisanceSet", "bundle_from_step_hazards"]


def _as_batch(a, m: int) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] != m:
        raise GridMismatchError(f"curve array has {a.shape[1]} columns, grid has {m}")
    return a


@dataclass
class CurveBundle:
    """Discrete hazards and derived curves for one arm.

    ``cause_increments`` maps cause label (1..j*) to a (B, m) array of
    per-grid-point hazard increments; ``censoring_increments`` is (B, m).
    The all-cause increment is their sum, so cause-specific hazards add up to
    the all-cause hazard by construction.
    """

    grid: np.ndarray
    cause_increments: dict[int, np.ndarray]
    censoring_increments: np.ndarray
    _eps: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 1 or (self.grid.size and (np.any(np.diff(self.grid) <= 0) or self.grid[0] <= 0)):
            raise ValueError("grid must be strictly increasing and positive")
        m = self.grid.size
        self.cause_increments = {int(j): _as_batch(v, m) for j, v in self.cause_increments.items()}
        if not self.cause_increments or any(j < 1 for j in self.cause_increments):
            raise ValueError("cause labels must be integers >= 1")
        self.censoring_increments = _as_batch(self.censoring_increments, m)
        for arr in (*self.cause_increments.values(), self.censoring_increments):
            if np.any(arr < -self._eps) or np.any(arr > 1 + self._eps):
                raise ValueError("hazard increments must lie in [0, 1]")
        total = self.all_increments
        if np.any(total > 1 + 1e-9):
            raise ValueError("cause-specific increments sum above 1")

    @property
    def causes(self) -> list[int]:
        return sorted(self.cause_increments)

    @property
    def n_rows(self) -> int:
        return self.censoring_increments.shape[0]

    @cached_property
    def all_increments(self) -> np.ndarray:
        return np.clip(sum(self.cause_increments.values()), 0.0, 1.0)

    @cached_property
    def survival(self) -> np.ndarray:
        """S at grid points, S(u_i) = prod_{k<=i} (1 - dL(u_k))."""
        return np.cumprod(1.0 - self.all_increments, axis=1)

    @cached_property
    def survival_prev(self) -> np.ndarray:
        """Left limits S(u_i -) on the grid."""
        s = self.survival
        return np.concatenate([np.ones((s.shape[0], 1)), s[:, :-1]], axis=1)

    @cached_property
    def censoring_survival(self) -> np.ndarray:
        return np.cumprod(1.0 - self.censoring_increments, axis=1)

    @cached_property
    def censoring_survival_prev(self) -> np.ndarray:
        g = self.censoring_survival
        return np.concatenate([np.ones((g.shape[0], 1)), g[:, :-1]], axis=1)

    @cached_property
    def cif(self) -> dict[int, np.ndarray]:
        """F_j(u_i) = sum_{k<=i} S(u_k -) dL_j(u_k); S + sum_j F_j = 1 exactly."""
        sp = self.survival_prev
        return {j: np.cumsum(sp * dlj, axis=1) for j, dlj in self.cause_increments.items()}

    @cached_property
    def _cell_widths(self) -> np.ndarray:
        return np.diff(np.concatenate(([0.0], self.grid)))

    @cached_property
    def rmst_grid(self) -> np.ndarray:
        """Integral of S over [0, u_i], exactly, at each grid point."""
        return np.cumsum(self.survival_prev * self._cell_widths, axis=1)

    @cached_property
    def rmtl_grid(self) -> dict[int, np.ndarray]:
        w = self._cell_widths
        out = {}
        for j, f in self.cif.items():
            f_prev = np.concatenate([np.zeros((f.shape[0], 1)), f[:, :-1]], axis=1)
            out[j] = np.cumsum(f_prev * w, axis=1)
        return out

    @cached_property
    def competing_survival(self) -> dict[int, np.ndarray]:
        """Product limit of the competing-cause hazard sum, per cause of interest."""
        out = {}
        for j in self.cause_increments:
            other = self.all_increments - self.cause_increments[j]
            out[j] = np.cumprod(1.0 - np.clip(other, 0.0, 1.0), axis=1)
        return out

    # -- point evaluation helpers -------------------------------------------------

    def idx(self, t) -> np.ndarray:
        """Index of the last grid point <= t (-1 when t precedes the grid)."""
        return np.searchsorted(self.grid, np.asarray(t, dtype=float), side="right") - 1

    def at(self, values: np.ndarray, idx, init: float) -> np.ndarray:
        """Right-continuous lookup of a (B, m) grid array at per-row indices."""
        idx = np.asarray(idx)
        safe = np.clip(idx, 0, values.shape[1] - 1)
        if values.shape[0] == 1:
            picked = values[0, safe]
        else:
            picked = values[np.arange(idx.size), safe]
        return np.where(idx < 0, init, picked)

    def at_left(self, values: np.ndarray, t, init: float) -> np.ndarray:
        """Left-limit lookup at exact times t (handles t on or off the grid)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.grid, t, side="left") - 1
        return self.at(values, idx, init)

    def rmst_at(self, t) -> np.ndarray:
        """Integral of S over [0, t] for arbitrary t (piecewise linear in t)."""
        t = np.asarray(t, dtype=float)
        idx = self.idx(t)
        base = self.at(self.rmst_grid, idx, 0.0)
        s = self.at(self.survival, idx, 1.0)
        anchor = np.where(idx < 0, 0.0, self.grid[np.clip(idx, 0, None)])
        return base + s * (t - anchor)

    def rmtl_at(self, j: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = self.idx(t)
        base = self.at(self.rmtl_grid[j], idx, 0.0)
        f = self.at(self.cif[j], idx, 0.0)
        anchor = np.where(idx < 0, 0.0, self.grid[np.clip(idx, 0, None)])
        return base + f * (t - anchor)

    def row(self, i: int) -> "CurveBundle":
        """Single-subject view (row i) of a batch bundle."""
        if self.n_rows == 1:
            return self
        return CurveBundle(
            self.grid,
            {j: v[i : i + 1] for j, v in self.cause_increments.items()},
            self.censoring_increments[i : i + 1],
        )

    def row_subset(self, indexes) -> "CurveBundle":
        """Row-subset view; a shared single-row bundle is returned as is."""
        if self.n_rows == 1:
            return self
        return CurveBundle(
            self.grid,
            {j: v[indexes] for j, v in self.cause_increments.items()},
            self.censoring_increments[indexes],
        )


def bundle_from_step_hazards(
    cause_hazards: dict[int, CumulativeHazard],
    censoring_hazard: CumulativeHazard,
) -> CurveBundle:
    """Build a single-row bundle from step-function hazards on one shared grid."""
    grids = [h.jump_times for h in cause_hazards.values()] + [censoring_hazard.jump_times]
    ref = grids[0]
    for g in grids[1:]:
        if g.shape != ref.shape or not np.array_equal(g, ref):
            raise GridMismatchError("all hazards must share one grid")
    return CurveBundle(
        ref,
        {j: h.increments[None, :] for j, h in cause_hazards.items()},
        censoring_hazard.increments[None, :],
    )


@dataclass
class NuisanceSet:
    """Per-subject (or per-batch) nuisance bundle: propensity plus both arms.

    ``pi1`` is P(A=1|X) with shape broadcastable against the bundles' rows;
    the complement P(A=0|X) is always computed as 1 - pi1 so the two sum to
    one exactly.  ``fold`` records which cross-fitting fold produced the
    underlying models.
    """

    pi1: np.ndarray
    arms: dict[int, CurveBundle]
    fold: int | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.pi1 = np.atleast_1d(np.asarray(self.pi1, dtype=float))
        if set(self.arms) != {0, 1}:
            raise ValueError("nuisance set must contain arms 0 and 1")
        g0, g1 = self.arms[0].grid, self.arms[1].grid
        if g0.shape != g1.shape or not np.array_equal(g0, g1):
            raise GridMismatchError("arm bundles must share one grid")

    def pi(self, a: int) -> np.ndarray:
        return self.pi1 if a == 1 else 1.0 - self.pi1

    def arm(self, a: int) -> CurveBundle:
        return self.arms[int(a)]

    @property
    def grid(self) -> np.ndarray:
        return self.arms[0].grid

    def row(self, i: int) -> "NuisanceSet":
        pi = self.pi1 if self.pi1.size == 1 else self.pi1[i : i + 1]
        ids = None if self.ids is None else self.ids[i : i + 1]
        return NuisanceSet(pi, {a: b.row(i) for a, b in self.arms.items()}, self.fold, ids)
