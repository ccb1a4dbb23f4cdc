"""
Competing risks: cause-specific and separable effects
=====================================================

The two-cause benchmark design decomposes the total effect on cause-1
incidence into a separable direct part (through the cause-1 hazard) and an
indirect part (through the competing hazard).  The decomposition holds
exactly for the analytic truth, and the cross-fitted learners estimate each
piece from observed data alone.
"""

import numpy as np

from cutlearn.crossfit import PipelineSpec, SplitPlan, run_pipeline
from cutlearn.metrics import evaluate, shape_diagnostics
from cutlearn.nuisance import NuisanceConfig
from cutlearn.simgen import SettingId, generate
from cutlearn.transforms import EstimandSpec

t = 3.0
data, truth = generate(SettingId("S3", 2500, seed=11))
print(f"status counts: {np.bincount(data.causes)}")

total = truth.true_hte(EstimandSpec.cif(1, t))
direct = truth.true_hte(EstimandSpec.separable_direct_cif(1, t, 1))
indirect = truth.true_hte(EstimandSpec.separable_indirect_cif(1, t, 0))
print("max |direct + indirect - total| =", np.max(np.abs(direct + indirect - total)))

diag = shape_diagnostics(
    {"cif_total": total, "cif_direct": direct, "cif_indirect": indirect}, horizon=t
)
print("decomposition residual quantiles:", diag["residuals"]["cif_separable_decomposition"])

cfg = NuisanceConfig(base_learners=("constant", "ridge"), grid_cap=128, hazard_bins=20, cv_folds=2)
for label, estimand, psi0 in (
    ("total", EstimandSpec.cif(1, t), total),
    ("direct", EstimandSpec.separable_direct_cif(1, t, 1), direct),
    ("indirect", EstimandSpec.separable_indirect_cif(1, t, 0), indirect),
):
    spec = PipelineSpec(
        estimand=estimand, learners=("s", "ra"), nuisance=cfg, plan=SplitPlan(k1=2, k2=2, seed=2)
    )
    result = run_pipeline(data, spec)
    rep = evaluate(result.predictions["ra"], psi0)
    print(f"{label:>9}: ra learner pehe {rep.pehe:.5f}, mean truth {psi0.mean():+.4f}, "
          f"mean estimate {result.predictions['ra'].mean():+.4f}")

# The indirect piece contrasts two hybrid incidence curves that differ only
# in which arm drives the competing hazard, so it is far more sensitive to
# hazard-model error than the total effect; with the true nuisances injected
# (see PipelineSpec.oracle_nuisances) its estimates center on the truth.
