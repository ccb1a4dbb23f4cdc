"""Nuisance estimation: base regressors, propensity, discrete-time hazards,
and the cross-validated convex ensemble selector.

Hazard models are discrete-time probability regressions on a person-period
expansion: one (subject, interval) row per grid interval at risk, aggregated
per (subject, baseline bin) so the expansion stays small.  The censoring
model treats cause 0 as the event and respects the events-first convention
(a subject failing at a grid time is not at risk for the censoring draw at
that same time).  A covariate-free stratified occurrence/exposure estimator
("nelson_aalen") is available as a deliberately misspecified alternative for
double-robustness experiments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree
from sklearn.ensemble import RandomForestRegressor
from sklearn.linear_model import LogisticRegression

from .curves import CurveBundle, NuisanceSet
from .survival import Observation

__all__ = [
    "ObservationBatch",
    "NuisanceConfig",
    "make_regressor",
    "REGRESSOR_NAMES",
    "ConstantRegressor",
    "RidgeRegressor",
    "KnnRegressor",
    "ForestRegressor",
    "GroupMeanRegressor",
    "PropensityModel",
    "HazardModel",
    "NuisanceModels",
    "EnsembleWeights",
    "fit_propensity",
    "fit_hazard",
    "fit_nuisance_models",
    "predict_nuisances",
    "ensemble_select",
    "project_simplex",
    "EnsembleRegressor",
]


@dataclass
class ObservationBatch:
    """Columnar view of an observation set."""

    ids: np.ndarray
    covariates: np.ndarray
    arms: np.ndarray
    times: np.ndarray
    causes: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids)
        self.covariates = np.asarray(self.covariates, dtype=float)
        self.arms = np.asarray(self.arms, dtype=int)
        self.times = np.asarray(self.times, dtype=float)
        self.causes = np.asarray(self.causes, dtype=int)
        n = self.ids.shape[0]
        if self.covariates.ndim != 2 or any(
            arr.shape[0] != n for arr in (self.covariates, self.arms, self.times, self.causes)
        ):
            raise ValueError("observation columns must align")
        if np.any(self.times <= 0):
            raise ValueError("times must be positive")

    @classmethod
    def from_observations(cls, observations: list[Observation]) -> "ObservationBatch":
        return cls(
            np.array([o.id for o in observations]),
            np.vstack([o.covariates for o in observations]),
            np.array([o.arm for o in observations]),
            np.array([o.time for o in observations]),
            np.array([o.cause for o in observations]),
        )

    def __len__(self) -> int:
        return self.ids.shape[0]

    def subset(self, mask_or_index) -> "ObservationBatch":
        return ObservationBatch(
            self.ids[mask_or_index],
            self.covariates[mask_or_index],
            self.arms[mask_or_index],
            self.times[mask_or_index],
            self.causes[mask_or_index],
        )

    @property
    def n_causes(self) -> int:
        return int(max(1, self.causes.max()))


@dataclass
class NuisanceConfig:
    """Knobs for nuisance fitting; serializable to/from plain dicts."""

    base_learners: tuple = ("constant", "ridge", "knn", "forest")
    learner_params: dict = field(default_factory=dict)
    clip_bounds: tuple = (0.01, 0.99)
    curve_floor: float = 0.01  # positivity guard on survival quantities in denominators
    grid_cap: int = 512
    hazard_learner: str = "ridge"
    hazard_bins: int = 32
    hazard_cap: float = 0.99
    arm_handling: str = "single"  # or "per_arm"
    cv_folds: int = 5
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "NuisanceConfig":
        kwargs = dict(d)
        if "base_learners" in kwargs:
            kwargs["base_learners"] = tuple(kwargs["base_learners"])
        if "clip_bounds" in kwargs:
            kwargs["clip_bounds"] = tuple(kwargs["clip_bounds"])
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown nuisance config fields: {sorted(unknown)}")
        return cls(**kwargs)

    def with_seed(self, seed: int) -> "NuisanceConfig":
        return replace(self, seed=seed)


# ---------------------------------------------------------------------------
# base regressors
# ---------------------------------------------------------------------------


def _weights_or_ones(y, w):
    if w is None:
        return np.ones_like(np.asarray(y, dtype=float))
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative with a positive sum")
    return w


class ConstantRegressor:
    """Weighted global mean."""

    def fit(self, X, y, sample_weight=None):
        w = _weights_or_ones(y, sample_weight)
        self.mean_ = float(np.average(np.asarray(y, dtype=float), weights=w))
        return self

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.mean_)


class RidgeRegressor:
    """Weighted ridge on standardized features, intercept unpenalized.

    The penalty scales with the sample size (alpha_scale * n), keeping the
    fit linear in the targets so scale equivariance is exact.
    """

    def __init__(self, alpha_scale: float = 1e-3):
        self.alpha_scale = alpha_scale

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        w = _weights_or_ones(y, sample_weight)
        w = w / w.mean()
        self.center_ = np.average(X, axis=0, weights=w)
        var = np.average((X - self.center_) ** 2, axis=0, weights=w)
        self.scale_ = np.sqrt(np.maximum(var, 1e-12))
        xs = (X - self.center_) / self.scale_
        y_mean = np.average(y, weights=w)
        lam = self.alpha_scale * len(y)
        a = (xs * w[:, None]).T @ xs + lam * np.eye(xs.shape[1])
        b = (xs * w[:, None]).T @ (y - y_mean)
        self.coef_ = np.linalg.solve(a, b)
        self.intercept_ = y_mean
        return self

    def predict(self, X):
        xs = (np.asarray(X, dtype=float) - self.center_) / self.scale_
        return self.intercept_ + xs @ self.coef_


class KnnRegressor:
    """k-nearest-neighbor weighted mean; k defaults to ceil(sqrt(n))."""

    def __init__(self, k: int | None = None):
        self.k = k

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=float)
        self.y_ = np.asarray(y, dtype=float)
        self.w_ = _weights_or_ones(y, sample_weight)
        self.center_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), 1e-9)
        self.tree_ = cKDTree((X - self.center_) / self.scale_)
        self.k_ = self.k or int(np.ceil(np.sqrt(len(self.y_))))
        self.k_ = min(self.k_, len(self.y_))
        return self

    def predict(self, X):
        xs = (np.asarray(X, dtype=float) - self.center_) / self.scale_
        _, idx = self.tree_.query(xs, k=self.k_)
        idx = np.atleast_2d(idx)
        if idx.shape[0] != xs.shape[0]:
            idx = idx.reshape(xs.shape[0], -1)
        wn = self.w_[idx]
        yn = self.y_[idx]
        tot = wn.sum(axis=1)
        out = np.where(tot > 0, (wn * yn).sum(axis=1) / np.where(tot > 0, tot, 1.0), yn.mean(axis=1))
        return out


class ForestRegressor:
    """Depth-limited random forest (200 trees, depth 4) with sample weights."""

    def __init__(self, n_estimators: int = 200, max_depth: int = 4, seed: int = 0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        self.model_ = RandomForestRegressor(
            n_estimators=self.n_estimators,
            max_depth=self.max_depth,
            random_state=self.seed,
            n_jobs=1,
        )
        self.model_.fit(np.asarray(X, dtype=float), np.asarray(y, dtype=float), sample_weight=sample_weight)
        return self

    def predict(self, X):
        return self.model_.predict(np.asarray(X, dtype=float))


class GroupMeanRegressor:
    """Exact weighted mean per unique feature row; saturated model for discrete X."""

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        w = _weights_or_ones(y, sample_weight)
        self.table_ = {}
        acc: dict[bytes, list[float]] = {}
        for row, yi, wi in zip(X, y, w):
            key = row.tobytes()
            s = acc.setdefault(key, [0.0, 0.0])
            s[0] += wi * yi
            s[1] += wi
        self.table_ = {k: (s[0] / s[1] if s[1] > 0 else np.nan) for k, s in acc.items()}
        self.default_ = float(np.average(y, weights=w))
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            v = self.table_.get(row.tobytes(), self.default_)
            out[i] = self.default_ if np.isnan(v) else v
        return out


REGRESSOR_NAMES = ("constant", "ridge", "knn", "forest", "group_mean")


def make_regressor(name: str, seed: int = 0, params: dict | None = None):
    params = dict(params or {})
    name = name.lower()
    if name == "constant":
        return ConstantRegressor()
    if name == "ridge":
        return RidgeRegressor(**params)
    if name == "knn":
        return KnnRegressor(**params)
    if name == "forest":
        return ForestRegressor(seed=seed, **params)
    if name == "group_mean":
        return GroupMeanRegressor()
    raise ValueError(f"unknown base learner {name!r}")


# ---------------------------------------------------------------------------
# propensity
# ---------------------------------------------------------------------------


@dataclass
class PropensityModel:
    """Clipped treatment-probability model; pi0 is always the exact complement."""

    model: object
    clip_bounds: tuple = (0.01, 0.99)

    def predict_pi1(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.model is None:
            p = np.full(X.shape[0], self._mean)
        else:
            p = self.model.predict_proba(X)[:, 1]
        lo, hi = self.clip_bounds
        return np.clip(p, lo, hi)

    def predict_pi(self, a: int, X) -> np.ndarray:
        p1 = self.predict_pi1(X)
        return p1 if a == 1 else 1.0 - p1


def fit_propensity(data: ObservationBatch, config: NuisanceConfig) -> PropensityModel:
    """Logistic treatment model, clipped to the configured bounds."""
    arms = data.arms
    if len(np.unique(arms)) < 2:
        raise ValueError("propensity fit requires both arms in the data")
    model = LogisticRegression(penalty=None, max_iter=1000)
    model.fit(data.covariates, arms)
    return PropensityModel(model, config.clip_bounds)


# ---------------------------------------------------------------------------
# discrete-time hazards
# ---------------------------------------------------------------------------


def _build_grid(times: np.ndarray, cap: int) -> np.ndarray:
    grid = np.unique(times)
    if grid.size > cap:
        q = np.linspace(0.0, 1.0, cap)
        grid = np.unique(np.quantile(grid, q, method="lower"))
    return grid


def _risk_counts(grid: np.ndarray, times: np.ndarray, causes: np.ndarray, censoring: bool):
    """Per subject: number of at-risk grid points and the event point index.

    A subject is at risk at grid index k when time > grid[k-1]; the event (if
    any) lands on the first grid point >= time.  For the censoring model an
    event subject is removed from the risk set at its own event point.
    """
    m = grid.size
    sl = np.searchsorted(grid, times, side="left")
    in_grid = sl <= m - 1
    n_risk = np.minimum(sl, m - 1) + 1
    event_idx = np.where(in_grid, np.minimum(sl, m - 1), -1)
    if censoring:
        fires = (causes == 0) & in_grid
        n_risk = n_risk - ((causes >= 1) & in_grid)
    else:
        fires = (causes >= 1) & in_grid
    event_idx = np.where(fires, event_idx, -1)
    return n_risk, event_idx


@dataclass
class HazardModel:
    """Discrete-time hazard model for one counting process.

    Fitted on a person-period expansion over ``grid`` with piecewise-constant
    baseline bins; predictions are per-interval probabilities in [0, cap].
    """

    grid: np.ndarray
    bin_of_point: np.ndarray
    bin_edges: np.ndarray
    target_causes: tuple
    censoring: bool
    arm_handling: str
    cap: float
    learner: str
    models: dict  # arm -> fitted regressor, or {"both": model} for single mode
    degenerate: bool = False
    covariate_free: bool = False
    na_curves: dict | None = None

    def predict_increments(self, X, arm: int) -> np.ndarray:
        """(n, m) per-interval hazard for every subject at the given arm."""
        X = np.asarray(X, dtype=float)
        n, m = X.shape[0], self.grid.size
        if self.degenerate:
            return np.zeros((n, m))
        if self.covariate_free:
            return np.broadcast_to(self.na_curves[arm][None, :], (n, m)).copy()
        n_bins = int(self.bin_of_point.max()) + 1
        bins_onehot = np.eye(n_bins)
        if self.arm_handling == "per_arm":
            feats = np.concatenate(
                [np.repeat(bins_onehot, n, axis=0), np.tile(X, (n_bins, 1))], axis=1
            )
            pred = self.models[arm].predict(feats)
        else:
            a_col = np.full((n * n_bins, 1), float(arm))
            x_rep = np.tile(X, (n_bins, 1))
            feats = np.concatenate(
                [np.repeat(bins_onehot, n, axis=0), a_col, x_rep, arm * x_rep], axis=1
            )
            pred = self.models["both"].predict(feats)
        per_bin = pred.reshape(n_bins, n).T
        per_point = per_bin[:, self.bin_of_point]
        return np.clip(per_point, 0.0, self.cap)

    def cumulative_at(self, X, arm: int, t: float) -> np.ndarray:
        inc = self.predict_increments(X, arm)
        k = np.searchsorted(self.grid, t, side="right")
        return inc[:, :k].sum(axis=1)


def fit_hazard(
    data: ObservationBatch,
    cause: int | str,
    config: NuisanceConfig,
    *,
    arm_handling: str | None = None,
) -> HazardModel:
    """Fit a discrete-time hazard model for one counting process.

    ``cause`` is "censoring", "all", or a cause label; ``arm_handling``
    "single" fits one model on (A, X, AX), "per_arm" one model per arm.
    The covariate-free "nelson_aalen" learner ignores X entirely (stratified
    occurrence/exposure rates), useful as a deliberately misspecified
    nuisance.
    """
    arm_handling = arm_handling or config.arm_handling
    if arm_handling not in ("single", "per_arm"):
        raise ValueError("arm_handling must be 'single' or 'per_arm'")
    censoring = cause == "censoring"
    if censoring:
        targets: tuple = (0,)
    elif cause == "all":
        targets = tuple(range(1, data.n_causes + 1))
    else:
        targets = (int(cause),)

    grid = _build_grid(data.times, config.grid_cap)
    m = grid.size
    relevant = np.isin(data.causes, targets) if censoring else np.isin(
        np.where(data.causes >= 1, data.causes, -1), targets
    )
    causes_for_risk = data.causes
    n_risk, event_idx = _risk_counts(grid, data.times, causes_for_risk, censoring)
    if not censoring:
        event_idx = np.where(np.isin(data.causes, targets), event_idx, -1)

    n_bins = min(config.hazard_bins, m)
    edges = np.unique(np.quantile(np.arange(m), np.linspace(0, 1, n_bins + 1), method="lower").astype(int))
    bin_of_point = np.clip(np.searchsorted(edges, np.arange(m), side="right") - 1, 0, len(edges) - 2)
    n_bins = len(edges) - 1

    degenerate = not np.any(event_idx >= 0)
    model = HazardModel(
        grid=grid,
        bin_of_point=bin_of_point,
        bin_edges=edges,
        target_causes=targets,
        censoring=censoring,
        arm_handling=arm_handling,
        cap=config.hazard_cap,
        learner=config.hazard_learner,
        models={},
        degenerate=degenerate,
    )
    if degenerate:
        warnings.warn(f"no events for cause {cause!r}; hazard model is identically zero")
        return model

    # aggregated person-period rows: (subject, bin) with trials and events
    points_per_bin = np.bincount(bin_of_point, minlength=n_bins)
    cum_points = np.concatenate(([0], np.cumsum(points_per_bin)))

    def rows_for(indexes):
        trials = np.zeros((indexes.size, n_bins))
        events = np.zeros((indexes.size, n_bins))
        nr = n_risk[indexes]
        ev = event_idx[indexes]
        for b in range(n_bins):
            lo, hi = cum_points[b], cum_points[b + 1]
            trials[:, b] = np.clip(nr - lo, 0, hi - lo)
        rows_with_event = ev >= 0
        events[rows_with_event, bin_of_point[ev[rows_with_event]]] = 1.0
        return trials, events

    if config.hazard_learner == "nelson_aalen":
        model.covariate_free = True
        model.na_curves = {}
        for a in (0, 1):
            sel = np.flatnonzero(data.arms == a)
            if sel.size == 0:
                model.na_curves[a] = np.zeros(m)
                continue
            nr, ev = n_risk[sel], event_idx[sel]
            # subjects at risk at point k are those with n_risk > k
            counts = np.bincount(nr, minlength=m + 1)
            risk_per_point = sel.size - np.cumsum(counts)[:m]
            ev_per_point = np.zeros(m)
            good = ev[ev >= 0]
            np.add.at(ev_per_point, good, 1.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                model.na_curves[a] = np.where(risk_per_point > 0, ev_per_point / risk_per_point, 0.0)
        return model

    def fit_group(indexes, features_fn):
        trials, events = rows_for(indexes)
        keep = trials > 0
        subj_rep, bin_rep = np.nonzero(keep)
        y = events[keep] / trials[keep]
        w = trials[keep]
        feats = features_fn(indexes[subj_rep], bin_rep)
        reg = make_regressor(config.hazard_learner, seed=config.seed)
        return reg.fit(feats, y, sample_weight=w)

    bins_eye = np.eye(n_bins)
    if arm_handling == "per_arm":
        for a in (0, 1):
            sel = np.flatnonzero(data.arms == a)
            if sel.size == 0:
                raise ValueError(f"no subjects in arm {a} for per-arm hazard fit")
            model.models[a] = fit_group(
                sel, lambda si, bi: np.concatenate([bins_eye[bi], data.covariates[si]], axis=1)
            )
    else:
        idx_all = np.arange(len(data))
        model.models["both"] = fit_group(
            idx_all,
            lambda si, bi: np.concatenate(
                [
                    bins_eye[bi],
                    data.arms[si, None].astype(float),
                    data.covariates[si],
                    data.arms[si, None] * data.covariates[si],
                ],
                axis=1,
            ),
        )
    return model


@dataclass
class NuisanceModels:
    """Fitted propensity + hazard models for one training fold."""

    propensity: PropensityModel
    censoring: HazardModel
    events: dict  # cause label -> HazardModel (label 1 with n_causes == 1)
    fold: int | None = None


def fit_nuisance_models(
    data: ObservationBatch,
    config: NuisanceConfig,
    *,
    fold: int | None = None,
    causes: list[int] | None = None,
) -> NuisanceModels:
    causes = causes or list(range(1, data.n_causes + 1))
    prop = fit_propensity(data, config)
    cens = fit_hazard(data, "censoring", config)
    if len(causes) == 1:
        events = {causes[0]: fit_hazard(data, "all", config)}
    else:
        events = {j: fit_hazard(data, j, config) for j in causes}
    return NuisanceModels(prop, cens, events, fold)


def _resample_increments(train_grid, inc, eval_grid, kind: str):
    """Transfer per-interval hazards from the training grid to an evaluation
    grid via survival ratios, keeping increments valid and sums exact."""
    surv = np.cumprod(1.0 - inc, axis=1)
    k = np.searchsorted(train_grid, eval_grid, side="right") - 1
    def take(arr, init):
        safe = np.clip(k, 0, arr.shape[1] - 1)
        picked = arr[:, safe]
        return np.where(k < 0, init, picked)
    s_at = take(surv, 1.0)
    s_prev = np.concatenate([np.ones((surv.shape[0], 1)), s_at[:, :-1]], axis=1)
    if kind == "survival":
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(s_prev > 0, 1.0 - s_at / s_prev, 0.0)
        return np.clip(d, 0.0, 1.0)
    raise ValueError(kind)


def _resample_cause_increments(train_grid, incs: dict, eval_grid):
    """Cause-specific transfer: dL_j = dF_j / S(prev); sums stay consistent."""
    total = np.clip(sum(incs.values()), 0.0, 1.0)
    surv = np.cumprod(1.0 - total, axis=1)
    surv_prev = np.concatenate([np.ones((surv.shape[0], 1)), surv[:, :-1]], axis=1)
    k = np.searchsorted(train_grid, eval_grid, side="right") - 1

    def take(arr, init):
        safe = np.clip(k, 0, arr.shape[1] - 1)
        picked = arr[:, safe]
        return np.where(k < 0, init, picked)

    s_at = take(surv, 1.0)
    s_prev_eval = np.concatenate([np.ones((s_at.shape[0], 1)), s_at[:, :-1]], axis=1)
    out = {}
    for j, dlj in incs.items():
        f = np.cumsum(surv_prev * dlj, axis=1)
        f_at = take(f, 0.0)
        f_prev = np.concatenate([np.zeros((f_at.shape[0], 1)), f_at[:, :-1]], axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(s_prev_eval > 0, (f_at - f_prev) / s_prev_eval, 0.0)
        out[j] = np.clip(d, 0.0, 1.0)
    return out


def predict_nuisances(
    models: NuisanceModels,
    covariates,
    grid,
    *,
    ids=None,
) -> NuisanceSet:
    """Evaluate fitted models for a covariate batch on an evaluation grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("evaluation grid is empty")
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    arms = {}
    for a in (0, 1):
        cause_inc = {
            j: hm.predict_increments(X, a) for j, hm in models.events.items()
        }
        cause_eval = _resample_cause_increments(
            next(iter(models.events.values())).grid, cause_inc, grid
        )
        cens_inc = models.censoring.predict_increments(X, a)
        cens_eval = _resample_increments(models.censoring.grid, cens_inc, grid, "survival")
        total = sum(cause_eval.values())
        over = total > 1.0
        if np.any(over):
            scale = np.where(over, 1.0 / np.where(over, total, 1.0), 1.0)
            cause_eval = {j: v * scale for j, v in cause_eval.items()}
        arms[a] = CurveBundle(grid, cause_eval, cens_eval)
    pi1 = models.propensity.predict_pi1(X)
    return NuisanceSet(pi1, arms, models.fold, None if ids is None else np.asarray(ids))


# ---------------------------------------------------------------------------
# convex ensemble selection
# ---------------------------------------------------------------------------


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, v.size + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class EnsembleWeights:
    """Simplex weights over candidate learners with their achieved CV loss."""

    weights: np.ndarray
    cv_loss: float
    candidate_losses: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < -1e-10) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("ensemble weights must lie on the simplex")
        object.__setattr__(self, "weights", w)


def ensemble_select(
    cv_predictions: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    *,
    max_iter: int = 10_000,
    tol: float = 1e-12,
) -> EnsembleWeights:
    """Simplex-constrained weighted least squares over candidate predictions.

    Minimizes sum_i w_i (y_i - P_i rho)^2 / n over the simplex by projected
    gradient descent started at the best single candidate, so the achieved
    loss never exceeds the best vertex loss.
    """
    p = np.asarray(cv_predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if p.ndim != 2 or p.shape[0] != y.shape[0] or p.shape[1] < 1:
        raise ValueError("cv_predictions must be (n, v) aligned with targets")
    if not np.all(np.isfinite(p)) or not np.all(np.isfinite(y)):
        raise ValueError("inputs must be finite")
    w = _weights_or_ones(y, weights)
    n, v = p.shape

    def loss(rho):
        r = p @ rho - y
        return float(np.sum(w * r * r) / n)

    cand = np.array([loss(np.eye(v)[i]) for i in range(v)])
    if v == 1:
        return EnsembleWeights(np.ones(1), cand[0], cand)

    h = (p * w[:, None]).T @ p / n
    b = (p * w[:, None]).T @ y / n
    lip = 2.0 * float(np.linalg.eigvalsh(h)[-1])
    if lip <= 0:
        rho = np.eye(v)[int(np.argmin(cand))]
        return EnsembleWeights(rho, loss(rho), cand)
    rho = np.eye(v)[int(np.argmin(cand))]
    prev = loss(rho)
    for _ in range(max_iter):
        grad = 2.0 * (h @ rho - b)
        rho = project_simplex(rho - grad / lip)
        cur = loss(rho)
        # purely relative criterion keeps the iterate path scale invariant
        if prev - cur <= tol * abs(prev):
            prev = min(prev, cur)
            break
        prev = cur
    return EnsembleWeights(rho, min(prev, loss(rho)), cand)


class EnsembleRegressor:
    """Cross-validated convex combination of the configured base learners."""

    def __init__(self, config: NuisanceConfig, seed: int = 0, learners: tuple | None = None):
        self.config = config
        self.seed = seed
        self.learner_names = tuple(learners or config.base_learners)

    def _folds(self, n: int):
        k = max(2, min(self.config.cv_folds, n))
        order = np.random.default_rng(self.seed).permutation(n)
        return np.array_split(order, k)

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        w = _weights_or_ones(y, sample_weight)
        keep = w > 0  # zero-weight rows influence nothing, drop them up front
        if not keep.all():
            X, y, w = X[keep], y[keep], w[keep]
        n = len(y)
        names = self.learner_names
        cv_pred = np.zeros((n, len(names)))
        if n >= 4 and len(names) > 1:
            for val_idx in self._folds(n):
                train = np.setdiff1d(np.arange(n), val_idx)
                if not np.any(w[train] > 0):
                    continue
                for c, name in enumerate(names):
                    reg = make_regressor(name, seed=self.seed, params=self.config.learner_params.get(name))
                    reg.fit(X[train], y[train], sample_weight=w[train])
                    cv_pred[val_idx, c] = reg.predict(X[val_idx])
            self.ensemble_ = ensemble_select(cv_pred, y, w)
        else:
            self.ensemble_ = EnsembleWeights(
                np.full(len(names), 1.0 / len(names)), float("nan"), np.full(len(names), np.nan)
            )
        self.models_ = []
        for name in names:
            reg = make_regressor(name, seed=self.seed, params=self.config.learner_params.get(name))
            self.models_.append(reg.fit(X, y, sample_weight=w))
        return self

    def predict(self, X):
        preds = np.column_stack([m.predict(X) for m in self.models_])
        return preds @ self.ensemble_.weights
