"""Evaluation metrics for conditional-effect estimates.

Squared-error precision (pehe), signed decision value (gain, regret, their
difference grd and ratio grr), sign accuracy and prevalence, average-effect
error, plus overlap-weighted variants of each.  The weighted variants with a
unit weight vector coincide exactly with the unweighted ones.  Shape
diagnostics report how far a set of estimates strays from the structural
identities the true effects satisfy; they are never enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

__all__ = ["MetricsReport", "evaluate", "shape_diagnostics"]


@dataclass(frozen=True)
class MetricsReport:
    pehe: float
    pehe_h: float
    gain: float
    regret: float
    grd: float
    grd_h: float
    grr: float
    grr_h: float
    gain_h: float
    regret_h: float
    accuracy: float
    prevalence: float
    eps_ate: float
    eps_ate_h: float
    flags: tuple = field(default_factory=tuple)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "flags"}
        out["flags"] = list(self.flags)
        return out


def _core(psi0, psi_hat, h):
    # fsum gives exactly-rounded sums, so every metric is invariant to the
    # ordering of the sample
    wsum = math.fsum(h)
    pehe = math.fsum(h * (psi0 - psi_hat) ** 2) / wsum
    right = (psi0 * psi_hat > 0).astype(float)
    wrong = (psi0 * psi_hat < 0).astype(float)
    gain = math.fsum(h * right * np.abs(psi0)) / wsum
    regret = math.fsum(h * wrong * np.abs(psi0)) / wsum
    eps = math.fsum(h * psi0) / wsum - math.fsum(h * psi_hat) / wsum
    return pehe, gain, regret, eps


def evaluate(psi_hat, psi0, h=None) -> MetricsReport:
    """All metrics for one estimate vector against the truth.

    ``h`` supplies overlap weights for the weighted variants; omitted, the
    weighted fields equal the unweighted ones.  The decision baseline used
    alongside gain/regret is the constant estimate equal to the (weighted)
    mean true effect; gain and regret themselves are computed from the
    supplied estimates, as in the worked definitions.
    """
    psi_hat = np.asarray(psi_hat, dtype=float)
    psi0 = np.asarray(psi0, dtype=float)
    if psi_hat.shape != psi0.shape or psi_hat.ndim != 1 or psi_hat.size < 1:
        raise ValueError("estimates and truth must be equal-length 1-d vectors")
    ones = np.ones_like(psi0)
    if h is None:
        h = ones
    else:
        h = np.asarray(h, dtype=float)
        if h.shape != psi0.shape:
            raise ValueError("weight vector must align with the estimates")
        if np.any(h < 0) or not np.any(h > 0):
            raise ValueError("weights must be nonnegative with a positive sum")

    flags = []
    pehe, gain, regret, eps = _core(psi0, psi_hat, ones)
    pehe_h, gain_h, regret_h, eps_h = _core(psi0, psi_hat, h)
    accuracy = float(np.mean(psi0 * psi_hat > 0))
    prevalence = float(np.mean(psi0 > 0))
    grd = gain - regret
    grd_h = gain_h - regret_h
    if regret > 0:
        grr = gain / regret
    else:
        grr = float("inf")
        flags.append("grr_zero_regret")
    if regret_h > 0:
        grr_h = gain_h / regret_h
    else:
        grr_h = float("inf")
        flags.append("grr_h_zero_regret")
    return MetricsReport(
        pehe=pehe,
        pehe_h=pehe_h,
        gain=gain,
        regret=regret,
        grd=grd,
        grd_h=grd_h,
        grr=grr,
        grr_h=grr_h,
        gain_h=gain_h,
        regret_h=regret_h,
        accuracy=accuracy,
        prevalence=prevalence,
        eps_ate=eps,
        eps_ate_h=eps_h,
        flags=tuple(flags),
    )


_QUANTS = (0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0)


def _summary(res: np.ndarray) -> dict:
    return {f"q{int(100 * q)}": float(np.quantile(res, q)) for q in _QUANTS}


def shape_diagnostics(
    estimates: dict,
    *,
    horizon: float | None = None,
    arm_level: bool = False,
) -> dict:
    """Residuals of the structural identities linking estimands.

    With effect estimates (arm contrasts), survival plus the cause-specific
    incidence effects sums to zero, as does the restricted-mean identity;
    with ``arm_level`` set, the inputs are per-arm levels and the sums equal
    one and the horizon respectively.  The separable decomposition residual
    compares direct + indirect against the total cause effect.  Expected
    keys: "survival", "cif_j", "rmst", "rmtl_j", "cif_total_j",
    "cif_direct_j", "cif_indirect_j" (and rmtl analogues).  Missing pieces
    are flagged, never fatal.
    """
    report: dict = {"residuals": {}, "flags": []}

    cif_keys = sorted(k for k in estimates if k.startswith("cif_") and k[4:].isdigit())
    if "survival" in estimates and cif_keys:
        total = np.asarray(estimates["survival"], dtype=float) + sum(
            np.asarray(estimates[k], dtype=float) for k in cif_keys
        )
        target = 1.0 if arm_level else 0.0
        report["residuals"]["survival_adding_up"] = _summary(np.abs(total - target))
    else:
        report["flags"].append("survival_adding_up_skipped")

    rmtl_keys = sorted(k for k in estimates if k.startswith("rmtl_") and k[5:].isdigit())
    if "rmst" in estimates and rmtl_keys:
        if arm_level and horizon is None:
            raise ValueError("arm-level restricted-mean identity needs the horizon")
        total = np.asarray(estimates["rmst"], dtype=float) + sum(
            np.asarray(estimates[k], dtype=float) for k in rmtl_keys
        )
        target = horizon if arm_level else 0.0
        report["residuals"]["restricted_mean_adding_up"] = _summary(np.abs(total - target))
    else:
        report["flags"].append("restricted_mean_adding_up_skipped")

    for scale in ("cif", "rmtl"):
        keys = (f"{scale}_total", f"{scale}_direct", f"{scale}_indirect")
        if all(k in estimates for k in keys):
            res = (
                np.asarray(estimates[keys[1]], dtype=float)
                + np.asarray(estimates[keys[2]], dtype=float)
                - np.asarray(estimates[keys[0]], dtype=float)
            )
            report["residuals"][f"{scale}_separable_decomposition"] = _summary(np.abs(res))
        elif any(k in estimates for k in keys):
            report["flags"].append(f"{scale}_separable_decomposition_partial")

    return report
