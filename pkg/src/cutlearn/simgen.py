"""Simulation settings with analytic ground truth.

Four data-generating processes: single-event log-logistic/lognormal arms with
good (S1) or poor (S2) propensity overlap, and two-cause constant-hazard
competing risks with good (S3) or poor (S4) overlap.  Counterfactual draws
are retained so separable direct/indirect decompositions can be checked
subject by subject; every estimand has a closed-form (or quadrature) true
conditional effect.

Each subject draws from its own random stream keyed by (seed, id), so
enlarging n never reshuffles earlier subjects.  The covariate law is not
pinned down by the benchmark description; the default is iid Uniform(-1, 1)
with Normal(0, 1) as an alternative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import expit, ndtr, ndtri

from .curves import CurveBundle, NuisanceSet
from .nuisance import ObservationBatch
from .transforms import EstimandSpec

__all__ = [
    "SettingId",
    "GroundTruth",
    "SETTINGS",
    "generate",
    "true_hte",
    "true_propensity",
    "true_nuisance_set",
    "discrete_law",
    "sample_discrete",
    "coefficient_fingerprint",
]

N_COVARIATES = 6

# propensity: pi1 = expit(-(intercept + coef . X))
PROPENSITY = {
    "good": {"intercept": 0.3, "coef": np.array([0.2, 0.3, 0.3, -0.2, -0.3, -0.2])},
    "poor": {"intercept": -1.0, "coef": np.array([1.0, 1.5, 1.5, -1.0, -1.5, -1.0])},
}

# single-event settings: log T0 = 0.2 logit(U) + m0, log T1 = ndtri(U) + m1
SINGLE_EVENT = {
    "t0": {"intercept": 0.8, "coef": np.array([-0.8, 1.0, 0.8, 0.4, -0.4, 0.8]), "scale": 0.2},
    "t1": {"intercept": 0.4, "coef": np.array([0.6, -0.8, 1.2, 0.6, -0.3, 0.5]), "scale": 1.0},
    "c0": {"intercept": 1.8, "coef": np.array([0.6, -0.8, 0.5, 0.7, -0.4, -0.2]), "scale": 0.8},
    "c1": {"intercept": 2.2, "coef": np.array([0.6, -0.8, 0.5, 0.7, 0.8, 1.2]), "scale": 0.8},
}

# competing-risks settings: constant cause hazards rate * exp(intercept + coef . X)
COMPETING = {
    (1, 0): {"rate": 0.12, "intercept": 0.10, "coef": np.array([0.1, -0.2, 0.2, 0.1, 0.8, -0.2])},
    (1, 1): {"rate": 0.15, "intercept": 0.17, "coef": np.array([0.2, -0.1, 0.4, 0.2, 0.3, 0.4])},
    (2, 0): {"rate": 0.10, "intercept": 0.12, "coef": np.array([-0.1, 0.3, 0.1, 0.2, -0.4, 0.5])},
    (2, 1): {"rate": 0.08, "intercept": 0.10, "coef": np.array([-0.2, -0.1, 0.2, 0.3, 0.3, -0.3])},
}
COMPETING_CENSORING = {
    "c0": {"intercept": 2.5, "coef": np.array([0.6, -0.4, 0.7, 1.5, 1.2, 1.6]), "scale": 0.8},
    "c1": {"intercept": 2.0, "coef": np.array([0.6, 0.8, 0.5, 1.2, 1.6, 1.2]), "scale": 0.8},
}

SETTINGS = {
    "S1": {"overlap": "good", "competing": False},
    "S2": {"overlap": "poor", "competing": False},
    "S3": {"overlap": "good", "competing": True},
    "S4": {"overlap": "poor", "competing": True},
}


@dataclass(frozen=True)
class SettingId:
    name: str
    n: int
    seed: int
    covariate_law: str = "uniform"

    def __post_init__(self):
        if self.name not in SETTINGS:
            raise ValueError(f"unknown setting {self.name!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.covariate_law not in ("uniform", "normal"):
            raise ValueError("covariate_law must be 'uniform' or 'normal'")

    @property
    def competing(self) -> bool:
        return SETTINGS[self.name]["competing"]


def coefficient_fingerprint(name: str) -> str:
    """Hash of every DGP coefficient of a setting (changes iff the DGP does)."""
    import hashlib

    cfg = SETTINGS[name]
    parts = [name.encode()] if False else []
    prop = PROPENSITY[cfg["overlap"]]
    parts.append(np.array([prop["intercept"]]).tobytes())
    parts.append(prop["coef"].tobytes())
    if cfg["competing"]:
        for key in sorted(COMPETING):
            c = COMPETING[key]
            parts.append(np.array([c["rate"], c["intercept"]]).tobytes())
            parts.append(c["coef"].tobytes())
        for key in sorted(COMPETING_CENSORING):
            c = COMPETING_CENSORING[key]
            parts.append(np.array([c["intercept"], c["scale"]]).tobytes())
            parts.append(c["coef"].tobytes())
    else:
        for key in sorted(SINGLE_EVENT):
            c = SINGLE_EVENT[key]
            parts.append(np.array([c["intercept"], c["scale"]]).tobytes())
            parts.append(c["coef"].tobytes())
    return hashlib.sha256(b"".join(parts)).hexdigest()[:16]


# ---------------------------------------------------------------------------
# conditional laws (closed forms)
# ---------------------------------------------------------------------------


def true_propensity(name: str, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p = PROPENSITY[SETTINGS[name]["overlap"]]
    return expit(-(p["intercept"] + X @ p["coef"]))


def _lin(entry, X):
    return entry["intercept"] + X @ entry["coef"]


def event_survival(name: str, t, X, arm: int) -> np.ndarray:
    """P(T > t | A=arm, X) under the setting's event law."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float)
    if SETTINGS[name]["competing"]:
        lam = cause_rate(1, arm, X) + cause_rate(2, arm, X)
        return np.exp(-lam * t)
    with np.errstate(divide="ignore"):
        logt = np.where(t > 0, np.log(np.maximum(t, 1e-300)), -np.inf)
    if arm == 0:
        e = SINGLE_EVENT["t0"]
        return np.where(t <= 0, 1.0, expit(-(logt - _lin(e, X)) / e["scale"]))
    e = SINGLE_EVENT["t1"]
    return np.where(t <= 0, 1.0, ndtr((_lin(e, X) - logt) / e["scale"]))


def censoring_survival(name: str, t, X, arm: int) -> np.ndarray:
    """P(C > t | A=arm, X)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float)
    table = COMPETING_CENSORING if SETTINGS[name]["competing"] else SINGLE_EVENT
    e = table["c0" if arm == 0 else "c1"]
    with np.errstate(divide="ignore"):
        logt = np.where(t > 0, np.log(np.maximum(t, 1e-300)), -np.inf)
    z = (logt - _lin(e, X)) / e["scale"]
    # arm 0 censoring is lognormal, arm 1 log-logistic, in both DGP groups
    s = 1.0 - ndtr(z) if arm == 0 else expit(-z)
    return np.where(t <= 0, 1.0, s)


def cause_rate(j: int, arm: int, X) -> np.ndarray:
    c = COMPETING[(j, arm)]
    return c["rate"] * np.exp(_lin(c, X))


def hybrid_cif(name: str, t, X, j: int, cause_arm: int, competing_arm: int) -> np.ndarray:
    """F_j(t | a_j, a_jbar, X) for constant cause hazards."""
    if not SETTINGS[name]["competing"]:
        raise ValueError(f"{name} has no competing risks")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    other = 2 if j == 1 else 1
    lj = cause_rate(j, cause_arm, X)
    lo = cause_rate(other, competing_arm, X)
    lam = lj + lo
    return lj / lam * (1.0 - np.exp(-lam * np.asarray(t, dtype=float)))


def hybrid_rmtl(name: str, tau, X, j: int, cause_arm: int, competing_arm: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    other = 2 if j == 1 else 1
    lj = cause_rate(j, cause_arm, X)
    lo = cause_rate(other, competing_arm, X)
    lam = lj + lo
    tau = float(tau)
    return lj / lam * (tau - (1.0 - np.exp(-lam * tau)) / lam)


def _event_mean(name: str, tau: float, X, arm: int) -> np.ndarray:
    """E[min(T, tau) | A=arm, X]; adaptive quadrature for S1/S2."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if SETTINGS[name]["competing"]:
        lam = cause_rate(1, arm, X) + cause_rate(2, arm, X)
        return (1.0 - np.exp(-lam * tau)) / lam
    out = np.empty(X.shape[0])
    for i, row in enumerate(X):
        out[i] = quad(
            lambda u: float(event_survival(name, u, row[None, :], arm)[0]),
            0.0,
            tau,
            epsabs=1e-8,
            limit=200,
        )[0]
    return out


def true_hte(name: str, spec: EstimandSpec, X, *, horizon: float | None = None) -> np.ndarray:
    """Analytic conditional effect for a setting/estimand pair."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h = spec.horizon if horizon is None else horizon
    competing = SETTINGS[name]["competing"]
    fam = spec.family
    if fam == "survival":
        return event_survival(name, h, X, 1) - event_survival(name, h, X, 0)
    if fam == "rmst":
        return _event_mean(name, h, X, 1) - _event_mean(name, h, X, 0)
    if not competing:
        raise ValueError(f"{fam} is not defined for setting {name}")
    j = spec.cause
    if fam == "cif":
        return hybrid_cif(name, h, X, j, 1, 1) - hybrid_cif(name, h, X, j, 0, 0)
    if fam == "rmtl":
        return hybrid_rmtl(name, h, X, j, 1, 1) - hybrid_rmtl(name, h, X, j, 0, 0)
    fn = hybrid_cif if fam.endswith("cif") else hybrid_rmtl
    if fam.startswith("sep_direct"):
        v = spec.fixed_arm
        return fn(name, h, X, j, 1, v) - fn(name, h, X, j, 0, v)
    w = spec.fixed_arm
    return fn(name, h, X, j, w, 1) - fn(name, h, X, j, w, 0)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@dataclass
class GroundTruth:
    """Per-subject truth: covariates, propensities, counterfactual draws."""

    setting: SettingId
    covariates: np.ndarray
    pi1: np.ndarray
    counterfactuals: dict = field(default_factory=dict)

    def true_hte(self, spec: EstimandSpec) -> np.ndarray:
        return true_hte(self.setting.name, spec, self.covariates)

    def columns(self) -> dict:
        out = {"pi1": self.pi1}
        out.update(self.counterfactuals)
        return out


def _subject_rng(seed: int, subject: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((804613, seed, subject)))


def generate(setting: SettingId) -> tuple[ObservationBatch, GroundTruth]:
    """Observed tuples plus retained counterfactuals for one setting."""
    n = setting.n
    X = np.empty((n, N_COVARIATES))
    a = np.empty(n, dtype=int)
    if setting.competing:
        cf = {k: np.empty(n) for k in ("t00", "t01", "t10", "t11", "c")}
        cf.update({k: np.empty(n, dtype=int) for k in ("j00", "j01", "j10", "j11")})
    else:
        cf = {k: np.empty(n) for k in ("t0", "t1", "c")}
    for i in range(n):
        rng = _subject_rng(setting.seed, i)
        x = rng.uniform(-1.0, 1.0, N_COVARIATES) if setting.covariate_law == "uniform" else rng.normal(
            0.0, 1.0, N_COVARIATES
        )
        X[i] = x
        u_a = rng.uniform()
        if not setting.competing:
            u_t = rng.uniform()
            u_c = rng.uniform()
            e0, e1 = SINGLE_EVENT["t0"], SINGLE_EVENT["t1"]
            cf["t0"][i] = np.exp(e0["scale"] * (np.log(u_t) - np.log1p(-u_t)) + _lin(e0, x[None, :])[0])
            cf["t1"][i] = np.exp(e1["scale"] * ndtri(u_t) + _lin(e1, x[None, :])[0])
        else:
            u1, u2 = rng.uniform(), rng.uniform()
            u_c = rng.uniform()
            lat = {}
            for j, u in ((1, u1), (2, u2)):
                for arm in (0, 1):
                    lat[(j, arm)] = -np.log(u) / cause_rate(j, arm, x[None, :])[0]
            for aj in (0, 1):
                for ab in (0, 1):
                    t1_, t2_ = lat[(1, aj)], lat[(2, ab)]
                    cf[f"t{aj}{ab}"][i] = min(t1_, t2_)
                    cf[f"j{aj}{ab}"][i] = 1 if t1_ <= t2_ else 2
        pi1_i = true_propensity(setting.name, x[None, :])[0]
        a[i] = int(u_a < pi1_i)
        table = COMPETING_CENSORING if setting.competing else SINGLE_EVENT
        e = table["c0" if a[i] == 0 else "c1"]
        if a[i] == 0:
            noise = e["scale"] * ndtri(u_c)
        else:
            noise = e["scale"] * (np.log(u_c) - np.log1p(-u_c))
        cf["c"][i] = np.exp(noise + _lin(e, x[None, :])[0])

    pi1 = true_propensity(setting.name, X)
    if setting.competing:
        t_obs = np.where(a == 1, cf["t11"], cf["t00"])
        j_obs = np.where(a == 1, cf["j11"], cf["j00"])
    else:
        t_obs = np.where(a == 1, cf["t1"], cf["t0"])
        j_obs = np.ones(n, dtype=int)
    c = cf["c"]
    tt = np.minimum(t_obs, c)
    # events resolve before censoring at exact ties
    cause = np.where(t_obs <= c, j_obs, 0).astype(int)
    data = ObservationBatch(np.arange(n), X, a, tt, cause)
    return data, GroundTruth(setting, X, pi1, cf)


# ---------------------------------------------------------------------------
# true nuisance curves on a grid, and the implied discrete law
# ---------------------------------------------------------------------------


def true_nuisance_set(name: str, X, grid) -> NuisanceSet:
    """True conditional curves discretized on a grid (round-up convention).

    The discrete hazards reproduce the closed-form survival and cumulative
    incidence exactly at the grid points, so transformations computed from
    this set are evaluated at the true nuisances of the grid-rounded model.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    grid = np.asarray(grid, dtype=float)
    competing = SETTINGS[name]["competing"]
    arms = {}
    for arm in (0, 1):
        s_vals = np.column_stack([event_survival(name, t, X, arm) for t in grid])
        s_prev = np.concatenate([np.ones((X.shape[0], 1)), s_vals[:, :-1]], axis=1)
        if competing:
            cause_inc = {}
            for j in (1, 2):
                f_vals = np.column_stack([hybrid_cif(name, t, X, j, arm, arm) for t in grid])
                f_prev = np.concatenate([np.zeros((X.shape[0], 1)), f_vals[:, :-1]], axis=1)
                with np.errstate(invalid="ignore", divide="ignore"):
                    cause_inc[j] = np.where(s_prev > 0, (f_vals - f_prev) / s_prev, 0.0)
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                cause_inc = {1: np.where(s_prev > 0, 1.0 - s_vals / s_prev, 0.0)}
        g_vals = np.column_stack([censoring_survival(name, t, X, arm) for t in grid])
        g_prev = np.concatenate([np.ones((X.shape[0], 1)), g_vals[:, :-1]], axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cens_inc = np.where(g_prev > 0, 1.0 - g_vals / g_prev, 0.0)
        arms[arm] = CurveBundle(grid, {j: np.clip(v, 0, 1) for j, v in cause_inc.items()}, np.clip(cens_inc, 0, 1))
    return NuisanceSet(true_propensity(name, X), arms)


@dataclass(frozen=True)
class TrueNuisanceOracle:
    """Injectable true-nuisance provider for oracle pipeline runs."""

    setting: str

    def __call__(self, X, grid) -> NuisanceSet:
        return true_nuisance_set(self.setting, X, grid)

    def pi1(self, X) -> np.ndarray:
        return true_propensity(self.setting, X)


def discrete_law(bundle: CurveBundle, beyond: float):
    """Exact outcome distribution of a one-row bundle's discrete model.

    Returns (times, causes, probabilities); subjects alive and uncensored at
    the end of the grid are assigned an uncensored failure at ``beyond``
    (no censoring beyond the grid), which must exceed any horizon in use.
    """
    if bundle.n_rows != 1:
        raise ValueError("discrete_law needs a single-row bundle")
    if beyond <= bundle.grid[-1]:
        raise ValueError("beyond must exceed the last grid point")
    sp = bundle.survival_prev[0]
    gp = bundle.censoring_survival_prev[0]
    d_all = bundle.all_increments[0]
    d_c = bundle.censoring_increments[0]
    at_risk = sp * gp
    times, causes, probs = [], [], []
    for j in bundle.causes:
        dj = bundle.cause_increments[j][0]
        times.append(bundle.grid)
        causes.append(np.full(bundle.grid.size, j))
        probs.append(at_risk * dj)
    times.append(bundle.grid)
    causes.append(np.zeros(bundle.grid.size, dtype=int))
    probs.append(at_risk * (1.0 - d_all) * d_c)
    times.append([beyond])
    causes.append([min(bundle.causes)])
    probs.append([bundle.survival[0, -1] * bundle.censoring_survival[0, -1]])
    t = np.concatenate(times)
    c = np.concatenate(causes).astype(int)
    p = np.concatenate(probs)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("discrete law does not sum to one")
    return t, c, p / p.sum()


def sample_discrete(bundle: CurveBundle, n: int, rng: np.random.Generator, beyond: float):
    """Draw observed (time, cause) pairs from the bundle's discrete model."""
    t, c, p = discrete_law(bundle, beyond)
    idx = rng.choice(t.size, size=n, p=p)
    return t[idx], c[idx]
