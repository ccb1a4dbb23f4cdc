"""Config-driven experiment runner: simulate, fit, bench.

All subcommands read a JSON config; validation failures exit with code 2 and
name the offending field, runtime failures exit with 1.  Outputs are plain
CSV plus a key=value manifest, deterministic given (config, seed).  Figures
are never rendered; the bench emits plot-ready summary tables instead.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import __version__
from .crossfit import PipelineSpec, SplitPlan, audit_fold_hygiene, augmented_frame, run_evaluation_pipeline, run_pipeline
from .learners import LEARNER_KINDS
from .metrics import evaluate
from .nuisance import NuisanceConfig, ObservationBatch
from .simgen import SETTINGS, SettingId, coefficient_fingerprint, generate, true_propensity
from .transforms import EstimandSpec

__all__ = ["ExperimentConfig", "ConfigError", "cmd_simulate", "cmd_fit", "cmd_bench", "main"]


class ConfigError(ValueError):
    """Invalid experiment configuration; exits with code 2."""


def _estimand_from_dict(d: dict) -> EstimandSpec:
    try:
        return EstimandSpec(
            family=d["family"],
            horizon=float(d["horizon"]),
            cause=d.get("cause"),
            fixed_arm=d.get("fixed_arm"),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"estimands: {exc}") from exc


@dataclass
class ExperimentConfig:
    settings: tuple
    n: int
    replications: int
    estimands: tuple
    cut_kinds: tuple
    learners: tuple
    nuisance: NuisanceConfig
    split: SplitPlan
    seed: int
    covariate_law: str = "uniform"
    mu_mode: str = "implied"
    out_dir: str = "."
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        settings = raw.pop("settings", None)
        single = raw.pop("setting", None)
        if settings is None:
            settings = [single] if single else ["S1"]
        for s in settings:
            if s not in SETTINGS:
                raise ConfigError(f"setting: unknown setting {s!r}")
        learners = tuple(str(k).lower() for k in raw.pop("learners", LEARNER_KINDS))
        bad = [k for k in learners if k not in LEARNER_KINDS]
        if bad:
            raise ConfigError(f"learners: unknown learner name(s) {bad}")
        est_raw = raw.pop("estimands", [{"family": "rmst", "horizon": 2.0}])
        estimands = tuple(_estimand_from_dict(d) for d in est_raw)
        cut_kinds = tuple(str(k).lower() for k in raw.pop("cut_kinds", ["aipcw"]))
        try:
            nuis = NuisanceConfig.from_dict(raw.pop("nuisance", {}))
        except ValueError as exc:
            raise ConfigError(f"nuisance: {exc}") from exc
        split_raw = raw.pop("split", {})
        unknown_split = set(split_raw) - {"k1", "k2", "k3", "stratify"}
        if unknown_split:
            raise ConfigError(f"split: unknown fields {sorted(unknown_split)}")
        seed = int(raw.pop("seed", 0))
        split = SplitPlan(
            k1=int(split_raw.get("k1", 5)),
            k2=int(split_raw.get("k2", 5)),
            k3=int(split_raw["k3"]) if "k3" in split_raw else None,
            seed=seed,
            stratify=bool(split_raw.get("stratify", True)),
        )
        law = raw.pop("covariate_law", "uniform")
        if law not in ("uniform", "normal"):
            raise ConfigError("covariate_law: must be 'uniform' or 'normal'")
        mu_mode = raw.pop("mu_mode", "implied")
        if mu_mode not in ("implied", "regress"):
            raise ConfigError("mu_mode: must be 'implied' or 'regress'")
        cfg = cls(
            settings=tuple(settings),
            n=int(raw.pop("n", 500)),
            replications=int(raw.pop("replications", 1)),
            estimands=estimands,
            cut_kinds=cut_kinds,
            learners=learners,
            nuisance=nuis,
            split=split,
            seed=seed,
            covariate_law=law,
            mu_mode=mu_mode,
            out_dir=raw.pop("out_dir", "."),
            extras=raw,
        )
        cfg.validate()
        return cfg

    def validate(self):
        if self.n < 8:
            raise ConfigError("n: must be at least 8")
        if self.replications < 1:
            raise ConfigError("replications: must be >= 1")
        for est in self.estimands:
            for setting in self.settings:
                if est.family not in ("survival", "rmst") and not SETTINGS[setting]["competing"]:
                    raise ConfigError(
                        f"estimands: {est.family} needs a competing-risks setting, got {setting}"
                    )
            for kind in self.cut_kinds:
                if est.is_separable and kind != "aipcw":
                    raise ConfigError("cut_kinds: separable estimands admit only 'aipcw'")
                if kind in ("ipcw1", "ipcw2") and est.family != "survival":
                    raise ConfigError(f"cut_kinds: {kind} applies to the survival family only")

    def pipeline_spec(self, estimand: EstimandSpec, kind: str, seed: int) -> PipelineSpec:
        plan = SplitPlan(self.split.k1, self.split.k2, self.split.k3, seed, self.split.stratify)
        return PipelineSpec(
            estimand=estimand,
            cut_kind=kind,
            learners=self.learners,
            nuisance=self.nuisance.with_seed(seed),
            plan=plan,
            mu_mode=self.mu_mode,
        )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config: file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------


def data_frame(data: ObservationBatch) -> pd.DataFrame:
    cols = {"id": data.ids}
    for p in range(data.covariates.shape[1]):
        cols[f"x{p + 1}"] = data.covariates[:, p]
    cols["a"] = data.arms
    cols["time"] = data.times
    cols["status"] = data.causes
    return pd.DataFrame(cols)


def read_dataset(path: str) -> ObservationBatch:
    """Load the dataset CSV schema id,x1..xp,a,time,status with line-numbered errors."""
    df = pd.read_csv(path)
    x_cols = sorted((c for c in df.columns if c.startswith("x") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    required = {"id", "a", "time", "status"}
    missing = required - set(df.columns)
    if missing or not x_cols:
        raise ConfigError(f"dataset: missing columns {sorted(missing) or ['x1..xp']} in {path}")
    bad_time = df.index[~(df["time"] > 0)]
    if len(bad_time):
        raise ConfigError(f"dataset: nonpositive time at line {int(bad_time[0]) + 2}")
    bad_arm = df.index[~df["a"].isin((0, 1))]
    if len(bad_arm):
        raise ConfigError(f"dataset: arm outside {{0,1}} at line {int(bad_arm[0]) + 2}")
    bad_status = df.index[df["status"] < 0]
    if len(bad_status):
        raise ConfigError(f"dataset: negative status at line {int(bad_status[0]) + 2}")
    return ObservationBatch(
        df["id"].to_numpy(),
        df[x_cols].to_numpy(dtype=float),
        df["a"].to_numpy(dtype=int),
        df["time"].to_numpy(dtype=float),
        df["status"].to_numpy(dtype=int),
    )


def _write_manifest(path: str, entries: dict):
    with open(path, "w") as fh:
        for k, v in entries.items():
            fh.write(f"{k}={v}\n")


def _rep_seed(base: int, setting: str, rep: int) -> int:
    return int(np.random.SeedSequence((base, list(SETTINGS).index(setting), rep)).generate_state(1)[0] % (2**31))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(config: ExperimentConfig, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for setting_name in config.settings:
        sid = SettingId(setting_name, config.n, config.seed, config.covariate_law)
        data, truth = generate(sid)
        prefix = os.path.join(out_dir, setting_name.lower())
        data_path = f"{prefix}_data.csv"
        data_frame(data).to_csv(data_path, index=False)
        truth_cols = {"id": data.ids}
        truth_cols.update(truth.columns())
        for est in config.estimands:
            truth_cols[f"psi_{est.label()}"] = truth.true_hte(est)
        truth_path = f"{prefix}_truth.csv"
        pd.DataFrame(truth_cols).to_csv(truth_path, index=False)
        manifest_path = f"{prefix}_manifest.txt"
        _write_manifest(
            manifest_path,
            {
                "setting": setting_name,
                "n": config.n,
                "seed": config.seed,
                "covariate_law": config.covariate_law,
                "coefficient_hash": coefficient_fingerprint(setting_name),
                "version": __version__,
            },
        )
        written += [data_path, truth_path, manifest_path]
    return written


def cmd_fit(config: ExperimentConfig, data_path: str, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    data = read_dataset(data_path)
    written = []
    diagnostics = {}
    for est in config.estimands:
        for kind in config.cut_kinds:
            spec = config.pipeline_spec(est, kind, config.seed)
            result = run_pipeline(data, spec)
            violations = audit_fold_hygiene(result)
            if violations:
                raise RuntimeError(f"fold-hygiene audit failed: {violations[:3]}")
            tag = f"{est.label()}_{kind}"
            pred_path = os.path.join(out_dir, f"predictions_{tag}.csv")
            result.prediction_frame().to_csv(pred_path, index=False)
            aug_path = os.path.join(out_dir, f"augmented_{tag}.csv")
            augmented_frame(result).to_csv(aug_path, index=False)
            diagnostics[tag] = {
                "floored": result.diagnostics.as_dict(),
                "warnings": result.diagnostics.warnings(),
                "fold_sizes": np.bincount(result.provenance["stage1"]["folds"]).tolist(),
                "models": {k: est.summary() for k, est in result.estimators.items()},
            }
            written += [pred_path, aug_path]
    diag_path = os.path.join(out_dir, "diagnostics.json")
    with open(diag_path, "w") as fh:
        json.dump(diagnostics, fh, indent=2, sort_keys=True)
    written.append(diag_path)
    return written


def _run_replication(args: tuple) -> list[dict]:
    config, setting_name, rep = args
    seed = _rep_seed(config.seed, setting_name, rep)
    sid = SettingId(setting_name, config.n, seed, config.covariate_law)
    data, truth = generate(sid)
    pi1 = true_propensity(setting_name, truth.covariates)
    overlap_h = pi1 * (1.0 - pi1)
    rows = []
    for est in config.estimands:
        psi0 = truth.true_hte(est)
        for kind in config.cut_kinds:
            spec = config.pipeline_spec(est, kind, seed)
            result = run_evaluation_pipeline(data, spec)
            violations = audit_fold_hygiene(result)
            if violations:
                raise RuntimeError(f"fold-hygiene audit failed in rep {rep}: {violations[:3]}")
            for learner, psi_hat in result.predictions.items():
                report = evaluate(psi_hat, psi0, overlap_h)
                base = {
                    "setting": setting_name,
                    "replication": rep,
                    "learner": learner,
                    "estimand": est.label(),
                    "cut_kind": kind,
                }
                for metric, value in report.as_dict().items():
                    if metric == "flags":
                        continue
                    rows.append({**base, "metric": metric, "value": value})
                q = np.quantile(psi_hat, [0.0, 0.25, 0.5, 0.75, 1.0])
                for name, value in zip(("min", "q1", "median", "q3", "max"), q):
                    rows.append({**base, "metric": f"psihat_{name}", "value": float(value)})
    return rows


def cmd_bench(config: ExperimentConfig, out_dir: str, workers: int = 1) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(config, s, r) for s in config.settings for r in range(config.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_replication, jobs))
    else:
        chunks = [_run_replication(j) for j in jobs]
    rows = [row for chunk in chunks for row in chunk]
    metrics = pd.DataFrame(rows).sort_values(
        ["setting", "estimand", "cut_kind", "learner", "metric", "replication"], kind="stable"
    )
    metrics_path = os.path.join(out_dir, "metrics.csv")
    metrics.to_csv(metrics_path, index=False)

    grouped = metrics.groupby(["setting", "estimand", "cut_kind", "learner", "metric"])["value"]
    with np.errstate(invalid="ignore"):  # grr carries an inf sentinel when regret is zero
        summary = grouped.agg(
            median="median", q1=lambda s: s.quantile(0.25), q3=lambda s: s.quantile(0.75)
        ).reset_index()
    summary["iqr"] = summary["q3"] - summary["q1"]
    summary["whisker_lo"] = summary["q1"] - 1.5 * summary["iqr"]
    summary["whisker_hi"] = summary["q3"] + 1.5 * summary["iqr"]
    summary_path = os.path.join(out_dir, "summary.csv")
    summary.to_csv(summary_path, index=False)
    _write_manifest(
        os.path.join(out_dir, "bench_manifest.txt"),
        {
            "settings": ",".join(config.settings),
            "n": config.n,
            "replications": config.replications,
            "seed": config.seed,
            "version": __version__,
            "coefficient_hashes": ",".join(coefficient_fingerprint(s) for s in config.settings),
        },
    )
    return [metrics_path, summary_path, os.path.join(out_dir, "bench_manifest.txt")]


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cutlearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
        if name == "fit":
            p.add_argument("--data", required=True, help="dataset CSV (id,x1..xp,a,time,status)")
        if name == "bench":
            p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = int(args.seed)
            config.split = SplitPlan(
                config.split.k1, config.split.k2, config.split.k3, config.seed, config.split.stratify
            )
        out_dir = args.out or config.out_dir
        if args.command == "simulate":
            written = cmd_simulate(config, out_dir)
        elif args.command == "fit":
            written = cmd_fit(config, args.data, out_dir)
        else:
            written = cmd_bench(config, out_dir, workers=max(1, args.workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
