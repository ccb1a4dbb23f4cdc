"""Cross-fitted estimation pipeline.

Stage 1 splits the data, fits nuisances per training fold and attaches the
transformed outcomes (and the influence-function transformation) to each
validation fold.  The mean-difference learners run on the augmented data.
Stage 2 resplits, refits the propensity (and optionally the transformed
outcome regression) per fold and attaches the learner-specific (w*, Y*)
pairs.  Stage 3 runs the final weighted regressions; the evaluation variant
adds a third split so every final prediction is out of fold.

Fold assignment hashes stable subject ids with the seed, so the pipeline is
deterministic given a seed and invariant to row order; an auditable
provenance record is kept and :func:`audit_fold_hygiene` walks it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import zlib

import numpy as np
import pandas as pd

from .curves import NuisanceSet
from .learners import LEARNER_KINDS, HteEstimate, fit_mean_difference, fit_transformed, fit_x_learner
from .nuisance import (
    EnsembleRegressor,
    NuisanceConfig,
    ObservationBatch,
    fit_nuisance_models,
    fit_propensity,
    predict_nuisances,
)
from .transforms import (
    Diagnostics,
    EstimandSpec,
    CutKind,
    cut_values,
    if_transform_values,
    implied_mean,
    separable_cut_values,
    separable_implied_mean,
    transform_targets,
    TRANSFORM_LEARNERS,
)

__all__ = [
    "SplitPlan",
    "PipelineSpec",
    "PipelineResult",
    "run_pipeline",
    "run_evaluation_pipeline",
    "audit_fold_hygiene",
    "augmented_frame",
]


@dataclass(frozen=True)
class SplitPlan:
    """Fold counts for the two (optionally three) sample splits."""

    k1: int = 5
    k2: int = 5
    k3: int | None = None
    seed: int = 0
    stratify: bool = True

    def validate(self, n: int):
        for label, k in (("k1", self.k1), ("k2", self.k2), ("k3", self.k3)):
            if k is None:
                continue
            if not 2 <= k <= n // 2:
                raise ValueError(f"{label}={k} outside the admissible range [2, {n // 2}]")


@dataclass
class PipelineSpec:
    """Everything one estimation run needs."""

    estimand: EstimandSpec
    cut_kind: str = "aipcw"
    learners: tuple = LEARNER_KINDS
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    plan: SplitPlan = field(default_factory=SplitPlan)
    mu_mode: str = "implied"  # or "regress"
    ra_cross_arm: bool = True
    oracle_nuisances: object | None = None

    def __post_init__(self):
        self.cut_kind = CutKind.validate(self.cut_kind, self.estimand)
        bad = [k for k in self.learners if k.lower() not in LEARNER_KINDS]
        if bad:
            raise ValueError(f"unknown learners: {bad}")
        self.learners = tuple(k.lower() for k in self.learners)
        if self.mu_mode not in ("implied", "regress"):
            raise ValueError("mu_mode must be 'implied' or 'regress'")


@dataclass
class PipelineResult:
    data: ObservationBatch
    spec: PipelineSpec
    augmented: dict
    estimators: dict
    predictions: dict
    provenance: dict
    diagnostics: Diagnostics

    def prediction_frame(self) -> pd.DataFrame:
        out = {"id": self.data.ids}
        for k, v in self.predictions.items():
            out[f"psi_{k}"] = v
        return pd.DataFrame(out)


def _hash_key(seed: int, stage: int, attempt: int, ident) -> int:
    return int(np.random.SeedSequence((seed, stage, attempt, int(ident))).generate_state(1)[0])


def _assign_folds(data: ObservationBatch, k: int, seed: int, stage: int, stratify: bool) -> np.ndarray:
    """Stratified, id-keyed fold assignment; redraws until training
    complements contain both arms (at most 100 attempts)."""
    n = len(data)
    strata = (
        data.arms * 2 + (data.causes > 0).astype(int)
        if stratify
        else np.zeros(n, dtype=int)
    )
    for attempt in range(100):
        folds = np.empty(n, dtype=int)
        for s in np.unique(strata):
            idx = np.flatnonzero(strata == s)
            keys = np.array([_hash_key(seed, stage, attempt, data.ids[i]) for i in idx])
            order = idx[np.argsort(keys, kind="stable")]
            folds[order] = np.arange(order.size) % k
        ok = True
        for f in range(k):
            train = folds != f
            if not train.any() or (folds == f).sum() == 0:
                ok = False
                break
            if len(np.unique(data.arms[train])) < 2 or not np.any(data.causes[train] >= 1):
                ok = False
                break
        if ok:
            return folds
    raise ValueError(f"could not draw a valid {k}-fold split for stage {stage} (fold {f} degenerate)")


def _fold_grid(times: np.ndarray, horizon: float) -> np.ndarray:
    return np.unique(np.concatenate([times, [horizon]]))


def _cut_for_rows(spec: PipelineSpec, nus: NuisanceSet, sub: ObservationBatch, diag: Diagnostics):
    """Own-arm transformed outcome and implied arm means for one fold."""
    est = spec.estimand
    n = len(sub)
    y = np.empty(n)
    mu = {0: np.empty(n), 1: np.empty(n)}
    for a in (0, 1):
        rows = np.flatnonzero(sub.arms == a)
        if est.is_separable:
            if rows.size:
                nus_rows = NuisanceSet(
                    nus.pi1[rows], {arm: b.row_subset(rows) for arm, b in nus.arms.items()}, nus.fold
                )
                y[rows] = separable_cut_values(
                    est, nus_rows, a, sub.times[rows], sub.causes[rows], diag=diag
                )
            direct = est.family.startswith("sep_direct")
            ca, co = (a, est.fixed_arm) if direct else (est.fixed_arm, a)
            mu[a][:] = separable_implied_mean(est, nus, ca, co)
        else:
            if rows.size:
                bundle = nus.arm(a).row_subset(rows)
                y[rows] = cut_values(
                    est, spec.cut_kind, bundle, sub.times[rows], sub.causes[rows], diag=diag
                )
            mu[a][:] = implied_mean(est, nus.arm(a))
    phi = if_transform_values(est, nus, sub.arms, sub.times, sub.causes, diag=diag)
    return y, phi, mu[0], mu[1]


def _stage1(data: ObservationBatch, spec: PipelineSpec, diag: Diagnostics):
    n = len(data)
    plan = spec.plan
    folds1 = _assign_folds(data, plan.k1, plan.seed, 1, plan.stratify)
    y_cut = np.empty(n)
    phi = np.empty(n)
    mu0 = np.empty(n)
    mu1 = np.empty(n)
    pi1 = np.empty(n)
    train_ids: dict[int, set] = {}
    for f in range(plan.k1):
        val = np.flatnonzero(folds1 == f)
        train = np.flatnonzero(folds1 != f)
        train_ids[f] = set(data.ids[train].tolist())
        sub = data.subset(val)
        grid = _fold_grid(sub.times, spec.estimand.horizon)
        if spec.oracle_nuisances is not None:
            nus = spec.oracle_nuisances(sub.covariates, grid)
            nus.fold = f
        else:
            cfg = spec.nuisance.with_seed(_hash_key(plan.seed, 10, f, 0) % (2**31))
            models = fit_nuisance_models(data.subset(train), cfg, fold=f)
            nus = predict_nuisances(models, sub.covariates, grid, ids=sub.ids)
        y, ph, m0, m1 = _cut_for_rows(spec, nus, sub, diag)
        y_cut[val] = y
        phi[val] = ph
        mu0[val] = m0
        mu1[val] = m1
        pi1[val] = np.broadcast_to(nus.pi1, (len(sub),))
    return folds1, train_ids, y_cut, phi, mu0, mu1, pi1


def _stage2(data: ObservationBatch, spec: PipelineSpec, y_cut, mu0_s1, mu1_s1):
    n = len(data)
    plan = spec.plan
    folds2 = _assign_folds(data, plan.k2, plan.seed, 2, plan.stratify)
    pi2 = np.empty(n)
    mu0 = np.empty(n)
    mu1 = np.empty(n)
    train_ids: dict[int, set] = {}
    for f in range(plan.k2):
        val = np.flatnonzero(folds2 == f)
        train = np.flatnonzero(folds2 != f)
        train_ids[f] = set(data.ids[train].tolist())
        cfg = spec.nuisance.with_seed(_hash_key(plan.seed, 20, f, 0) % (2**31))
        if spec.oracle_nuisances is not None and hasattr(spec.oracle_nuisances, "pi1"):
            pi2[val] = spec.oracle_nuisances.pi1(data.covariates[val])
        else:
            prop = fit_propensity(data.subset(train), cfg)
            pi2[val] = prop.predict_pi1(data.covariates[val])
        if spec.mu_mode == "implied":
            mu0[val] = mu0_s1[val]
            mu1[val] = mu1_s1[val]
        else:
            tr = data.subset(train)
            feats = np.concatenate(
                [tr.arms[:, None].astype(float), tr.covariates, tr.arms[:, None] * tr.covariates],
                axis=1,
            )
            reg = EnsembleRegressor(cfg, seed=cfg.seed).fit(feats, y_cut[train])
            xv = data.covariates[val]
            ones = np.ones((val.size, 1))
            mu1[val] = reg.predict(np.concatenate([ones, xv, xv], axis=1))
            mu0[val] = reg.predict(np.concatenate([0 * ones, xv, 0 * xv], axis=1))
    return folds2, train_ids, pi2, mu0, mu1


def _final_stage_inputs(spec: PipelineSpec, data, y_cut, phi, mu0, mu1, pi2, diag: Diagnostics):
    targets = {}
    for kind in spec.learners:
        if kind not in TRANSFORM_LEARNERS:
            continue
        y_in = phi if kind == "if" else y_cut
        w, ystar = transform_targets(
            kind, y_in, data.arms, mu0, mu1, pi2, ra_cross_arm=spec.ra_cross_arm, diag=diag
        )
        targets[kind] = (w, ystar)
    return targets


def run_pipeline(data: ObservationBatch, spec: PipelineSpec) -> PipelineResult:
    """Two-split estimation: nuisances and transforms out of fold, final
    learners fitted on the full augmented data (Steps 1-7)."""
    data = _canonical(data)
    _check_preconditions(data, spec)
    diag = Diagnostics()
    folds1, train1, y_cut, phi, mu0_s1, mu1_s1, pi1 = _stage1(data, spec, diag)
    folds2, train2, pi2, mu0, mu1 = _stage2(data, spec, y_cut, mu0_s1, mu1_s1)
    targets = _final_stage_inputs(spec, data, y_cut, phi, mu0, mu1, pi2, diag)

    estimators: dict[str, HteEstimate] = {}
    seed0 = spec.plan.seed
    for kind in spec.learners:
        cfg = spec.nuisance.with_seed(_hash_key(seed0, 30, 0, zlib.crc32(kind.encode()) % 10_000) % (2**31))
        if kind in ("s", "t"):
            estimators[kind] = fit_mean_difference(
                kind, data.covariates, data.arms, y_cut, spec.estimand, cfg, seed=cfg.seed
            )
        elif kind == "x":
            prop_full = fit_propensity(data, cfg)
            estimators[kind] = fit_x_learner(
                data.covariates, data.arms, y_cut, mu0, mu1, prop_full.predict_pi1,
                spec.estimand, cfg, seed=cfg.seed,
            )
        else:
            w, ystar = targets[kind]
            estimators[kind] = fit_transformed(
                kind, data.covariates, w, ystar, spec.estimand, cfg, seed=cfg.seed, diag=diag
            )
    predictions = {k: est.predict(data.covariates) for k, est in estimators.items()}
    augmented = _augmented_dict(spec, y_cut, phi, mu0, mu1, pi1, pi2, folds1, folds2, None, targets)
    provenance = {
        "stage1": {"folds": folds1, "train_ids": train1},
        "stage2": {"folds": folds2, "train_ids": train2},
    }
    return PipelineResult(data, spec, augmented, estimators, predictions, provenance, diag)


def run_evaluation_pipeline(data: ObservationBatch, spec: PipelineSpec) -> PipelineResult:
    """Three-split variant: final predictions are also out of fold."""
    if spec.plan.k3 is None:
        spec = replace_plan(spec, replace(spec.plan, k3=spec.plan.k2))
    data = _canonical(data)
    _check_preconditions(data, spec)
    diag = Diagnostics()
    folds1, train1, y_cut, phi, mu0_s1, mu1_s1, pi1 = _stage1(data, spec, diag)
    folds2, train2, pi2, mu0, mu1 = _stage2(data, spec, y_cut, mu0_s1, mu1_s1)
    targets = _final_stage_inputs(spec, data, y_cut, phi, mu0, mu1, pi2, diag)

    n = len(data)
    plan = spec.plan
    folds3 = _assign_folds(data, plan.k3, plan.seed, 3, plan.stratify)
    train3: dict[int, set] = {}
    predictions: dict[str, np.ndarray] = {k: np.empty(n) for k in spec.learners}
    fold_models: dict[str, list] = {k: [] for k in spec.learners}
    for f in range(plan.k3):
        val = np.flatnonzero(folds3 == f)
        train = np.flatnonzero(folds3 != f)
        train3[f] = set(data.ids[train].tolist())
        for kind in spec.learners:
            cfg = spec.nuisance.with_seed(_hash_key(plan.seed, 30 + f, 0, zlib.crc32(kind.encode()) % 10_000) % (2**31))
            if kind in ("s", "t"):
                est = fit_mean_difference(
                    kind, data.covariates[train], data.arms[train], y_cut[train],
                    spec.estimand, cfg, seed=cfg.seed,
                )
            elif kind == "x":
                prop = fit_propensity(data.subset(train), cfg)
                est = fit_x_learner(
                    data.covariates[train], data.arms[train], y_cut[train],
                    mu0[train], mu1[train], prop.predict_pi1, spec.estimand, cfg, seed=cfg.seed,
                )
            else:
                w, ystar = targets[kind]
                est = fit_transformed(
                    kind, data.covariates[train], w[train], ystar[train],
                    spec.estimand, cfg, seed=cfg.seed,
                )
            predictions[kind][val] = est.predict(data.covariates[val])
            fold_models[kind].append(est)
    augmented = _augmented_dict(spec, y_cut, phi, mu0, mu1, pi1, pi2, folds1, folds2, folds3, targets)
    provenance = {
        "stage1": {"folds": folds1, "train_ids": train1},
        "stage2": {"folds": folds2, "train_ids": train2},
        "stage3": {"folds": folds3, "train_ids": train3},
    }
    return PipelineResult(data, spec, augmented, fold_models, predictions, provenance, diag)


def replace_plan(spec: PipelineSpec, plan: SplitPlan) -> PipelineSpec:
    return PipelineSpec(
        estimand=spec.estimand,
        cut_kind=spec.cut_kind,
        learners=spec.learners,
        nuisance=spec.nuisance,
        plan=plan,
        mu_mode=spec.mu_mode,
        ra_cross_arm=spec.ra_cross_arm,
        oracle_nuisances=spec.oracle_nuisances,
    )


def _canonical(data: ObservationBatch) -> ObservationBatch:
    order = np.argsort(data.ids, kind="stable")
    if np.unique(data.ids).size != len(data):
        raise ValueError("subject ids must be unique")
    return data.subset(order)


def _check_preconditions(data: ObservationBatch, spec: PipelineSpec):
    n = len(data)
    plan = spec.plan
    plan.validate(n)
    if n < 4 * max(plan.k1, plan.k2, plan.k3 or 2):
        raise ValueError("need n >= 4 * max fold count")
    est = spec.estimand
    if est.cause is not None and est.cause > data.n_causes:
        raise ValueError(f"estimand cause {est.cause} absent from the data")
    if est.is_separable and data.n_causes < 2:
        raise ValueError("separable estimands need competing-risks data")


def _augmented_dict(spec, y_cut, phi, mu0, mu1, pi1, pi2, folds1, folds2, folds3, targets):
    label = spec.estimand.label()
    out = {
        f"ycut_{spec.cut_kind}_{label}": y_cut,
        f"phi_{label}": phi,
        "mu0": mu0,
        "mu1": mu1,
        "pi1_stage1": pi1,
        "pi1_stage2": pi2,
        "fold1": folds1,
        "fold2": folds2,
    }
    if folds3 is not None:
        out["fold3"] = folds3
    for kind, (w, ystar) in targets.items():
        out[f"wstar_{kind}"] = w
        out[f"ystar_{kind}"] = ystar
    return out


def augmented_frame(result: PipelineResult) -> pd.DataFrame:
    """Original columns plus transforms, targets and fold provenance."""
    d = result.data
    cols = {"id": d.ids}
    for p in range(d.covariates.shape[1]):
        cols[f"x{p + 1}"] = d.covariates[:, p]
    cols["a"] = d.arms
    cols["time"] = d.times
    cols["status"] = d.causes
    cols.update(result.augmented)
    return pd.DataFrame(cols)


def audit_fold_hygiene(result: PipelineResult) -> list[str]:
    """Walk every produced value's provenance: a subject must never appear in
    the training set of the fold that produced its values."""
    violations = []
    ids = result.data.ids
    for stage, rec in result.provenance.items():
        folds = rec["folds"]
        train_ids = rec["train_ids"]
        for i, ident in enumerate(ids):
            if int(ident) in train_ids[int(folds[i])]:
                violations.append(f"{stage}: subject {ident} in its own training fold")
    return violations
