"""Heterogeneous-effect learners fitted on transformed outcomes.

Two families: conditional-mean-difference learners (single-surface "s",
per-arm "t", the cross-fitted imputation "x", and the influence-function
regression "if") and transformed-minimization learners ("iptw", "ra",
"aiptw", "mc", "mcea", "r", "u") that run one weighted regression of Y* on X
with weight w*.  Every regression is the cross-validated convex ensemble
over the configured base learners.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nuisance import EnsembleRegressor, NuisanceConfig
from .transforms import TRANSFORM_LEARNERS, Diagnostics, EstimandSpec

__all__ = [
    "LEARNER_KINDS",
    "MEAN_DIFFERENCE_KINDS",
    "HteEstimate",
    "fit_mean_difference",
    "fit_transformed",
    "fit_x_learner",
    "predict_hte",
]

MEAN_DIFFERENCE_KINDS = ("s", "t")
LEARNER_KINDS = MEAN_DIFFERENCE_KINDS + ("x",) + TRANSFORM_LEARNERS


@dataclass
class HteEstimate:
    """Fitted conditional-effect predictor with provenance.

    Predictions are clipped to the estimand's logical range: [-1, 1] for
    probability-scale effects, [-horizon, horizon] for time-scale effects.
    """

    spec: EstimandSpec
    learner: str
    _predict: callable
    n_features: int
    ensemble_weights: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    fold_sizes: tuple = ()

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        bound = self.spec.outcome_bound
        return np.clip(self._predict(X), -bound, bound)

    def summary(self) -> dict:
        """Serializable description: learner kind, target, ensemble weights,
        floored-denominator diagnostics."""
        return {
            "learner": self.learner,
            "estimand": self.spec.label(),
            "horizon": self.spec.horizon,
            "n_features": self.n_features,
            "prediction_bound": self.spec.outcome_bound,
            "ensemble_weights": self.ensemble_weights,
            "diagnostics": self.diagnostics,
            "fold_sizes": list(self.fold_sizes),
        }


def predict_hte(model: HteEstimate, X) -> np.ndarray:
    return model.predict(X)


def _s_features(X, a):
    a = np.asarray(a, dtype=float)[:, None]
    return np.concatenate([a, X, a * X], axis=1)


def fit_mean_difference(
    kind: str,
    X,
    arms,
    y_cut,
    spec: EstimandSpec,
    config: NuisanceConfig,
    *,
    seed: int = 0,
    min_arm_size: int = 5,
    weights=None,
) -> HteEstimate:
    """Single-surface ("s") or per-arm ("t") conditional mean difference."""
    kind = kind.lower()
    if kind not in MEAN_DIFFERENCE_KINDS:
        raise ValueError(f"kind must be one of {MEAN_DIFFERENCE_KINDS}")
    X = np.asarray(X, dtype=float)
    arms = np.asarray(arms, dtype=int)
    y = np.asarray(y_cut, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("transformed outcomes must be finite")

    if kind == "s":
        reg = EnsembleRegressor(config, seed=seed).fit(_s_features(X, arms), y, weights)

        def predict(xq):
            ones = np.ones(xq.shape[0])
            return reg.predict(_s_features(xq, ones)) - reg.predict(_s_features(xq, 0 * ones))

        ens = {"s": reg.ensemble_.weights.tolist()}
    else:
        models = {}
        for a in (0, 1):
            sel = arms == a
            if sel.sum() < min_arm_size:
                raise ValueError(f"arm {a} has {int(sel.sum())} rows; t-learner needs >= {min_arm_size}")
            w_a = None if weights is None else np.asarray(weights)[sel]
            models[a] = EnsembleRegressor(config, seed=seed + a).fit(X[sel], y[sel], w_a)

        def predict(xq):
            return models[1].predict(xq) - models[0].predict(xq)

        ens = {f"t{a}": models[a].ensemble_.weights.tolist() for a in (0, 1)}

    return HteEstimate(spec, kind, predict, X.shape[1], ens)


def fit_transformed(
    kind: str,
    X,
    weights,
    outcomes,
    spec: EstimandSpec,
    config: NuisanceConfig,
    *,
    seed: int = 0,
    diag: Diagnostics | None = None,
) -> HteEstimate:
    """Weighted ensemble regression of Y* on X (one run of the final stage)."""
    kind = kind.lower()
    if kind not in TRANSFORM_LEARNERS:
        raise ValueError(f"kind must be one of {TRANSFORM_LEARNERS}")
    X = np.asarray(X, dtype=float)
    w = np.asarray(weights, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative with at least one positive entry")
    reg = EnsembleRegressor(config, seed=seed).fit(X, y, w)
    est = HteEstimate(spec, kind, reg.predict, X.shape[1], {kind: reg.ensemble_.weights.tolist()})
    if diag is not None:
        est.diagnostics = diag.as_dict()
    return est


def fit_x_learner(
    X,
    arms,
    y_cut,
    mu0,
    mu1,
    pi1,
    spec: EstimandSpec,
    config: NuisanceConfig,
    *,
    seed: int = 0,
    weight_mode: str = "propensity",
    min_arm_size: int = 5,
) -> HteEstimate:
    """Cross-arm imputed effects, regressed per arm and propensity-combined.

    Treated rows impute Y - mu0(X), control rows mu1(X) - Y; the final
    prediction is pi1(x) * psi_control(x) + (1 - pi1(x)) * psi_treated(x)
    (constant weights 0/1 available via ``weight_mode``).
    """
    X = np.asarray(X, dtype=float)
    arms = np.asarray(arms, dtype=int)
    y = np.asarray(y_cut, dtype=float)
    mu0 = np.broadcast_to(np.asarray(mu0, dtype=float), y.shape)
    mu1 = np.broadcast_to(np.asarray(mu1, dtype=float), y.shape)
    imputed = np.where(arms == 1, y - mu0, mu1 - y)

    models = {}
    for a in (0, 1):
        sel = arms == a
        if sel.sum() < min_arm_size:
            raise ValueError(f"arm {a} has {int(sel.sum())} rows; x-learner needs >= {min_arm_size}")
        models[a] = EnsembleRegressor(config, seed=seed + a).fit(X[sel], imputed[sel])

    if weight_mode == "propensity":
        pi_fn = pi1 if callable(pi1) else None
        pi_const = None if callable(pi1) else float(np.mean(pi1))
    elif weight_mode in ("zero", "one"):
        pi_fn, pi_const = None, 0.0 if weight_mode == "zero" else 1.0
    else:
        raise ValueError("weight_mode must be 'propensity', 'zero', or 'one'")

    def predict(xq):
        w = pi_fn(xq) if pi_fn is not None else np.full(xq.shape[0], pi_const)
        return w * models[0].predict(xq) + (1.0 - w) * models[1].predict(xq)

    ens = {f"x{a}": models[a].ensemble_.weights.tolist() for a in (0, 1)}
    return HteEstimate(spec, "x", predict, X.shape[1], ens)
