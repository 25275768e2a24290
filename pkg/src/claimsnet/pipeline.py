"""Experiment stages: simulate, prepare, tune, train, evaluate, report.

Every stage writes into its own directory together with a ``stage.json``
stamp holding a hash of the stage inputs. A stage whose stamp matches is
skipped, so reruns only redo work whose inputs changed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from .calibration import apply_correction, fit_smearing_factor
from .dataset import (
    TEST,
    VALIDATION,
    assign_splits,
    assign_splits_naive,
    build_observations,
    load_transactions,
    read_split_manifest,
    write_split_manifest,
)
from .errors import ConfigurationError, DependencyError, StageError
from .features import VARIANTS, build_feature_set, fit_normaliser, target_to_log_dollars
from .nn.checkpoint import save_checkpoint
from .nn.model import ModelSpec
from .nn.training import TrainingConfig, predict, train_model
from .simulator import DelaySpec, SimulationConfig, simulate_portfolio, write_transactions
from .tuning import GridSpace, enumerate_grid, tune, write_leaderboard

log = logging.getLogger(__name__)

CE = "CE"
CE_ALIASES = {"CE", "CE-baseline"}
METRICS = ("ocl_err", "ocl_err_uncorrected", "male", "msle", "vsCE_ocl")
PREDICTION_COLUMNS = ["claim_id", "prediction_quarter", "accident_quarter", "quarters_since_notification", "paid",
                      "actual", "case_estimate", "predicted", "predicted_uncorrected", "final_revision_reached"]

PROFILES = {
    "desk": {
        "simulation": {
            "n_accident_quarters": 20,
            "expected_claims_per_quarter": 150.0,
            "settlement_delay": {"mean": 5.5, "cv": 0.6, "size_elasticity": 0.25},
        },
        "train_cutoff": 16,
        "n_datasets": 5,
    },
    "paper": {
        "simulation": {"n_accident_quarters": 40, "expected_claims_per_quarter": 750.0},
        "train_cutoff": 36,
        "n_datasets": 50,
    },
}


def canonical_variant(v):
    if v in CE_ALIASES:
        return CE
    if v not in VARIANTS:
        raise ConfigurationError(f"unknown variant {v!r}", "variants")
    return v


@dataclass
class ExperimentConfig:
    profile: str = "desk"
    seed: int = 0
    simulation: dict = field(default_factory=dict)
    split_mode: str = "finalisation"
    train_cutoff: int | None = None
    move_fraction: float = 0.2
    naive_fractions: tuple = (0.6, 0.2, 0.2)
    variants: tuple = ("FNN", "FNN+", "CE")
    n_datasets: int | None = None
    dataset_ids: tuple | None = None
    tuning_dataset_id: str = "tune"
    grid: dict = field(default_factory=dict)
    include_current_ce: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}", "profile")
        prof = PROFILES[self.profile]
        if self.train_cutoff is None:
            self.train_cutoff = prof["train_cutoff"]
        if self.dataset_ids is None:
            n = prof["n_datasets"] if self.n_datasets is None else self.n_datasets
            self.dataset_ids = tuple(f"d{k:03d}" for k in range(n))
        self.dataset_ids = tuple(self.dataset_ids)
        self.variants = tuple(canonical_variant(v) for v in self.variants)
        if not self.variants:
            raise ConfigurationError("at least one variant required", "variants")
        if self.split_mode not in ("finalisation", "naive"):
            raise ConfigurationError(f"unknown split mode {self.split_mode!r}", "split_mode")
        if self.tuning_dataset_id in self.dataset_ids:
            raise ConfigurationError("tuning dataset must be separate from evaluation datasets", "tuning_dataset_id")
        if not self.train_cutoff <= self.valuation_quarter:
            raise ConfigurationError("train cutoff must not exceed the valuation quarter", "train_cutoff")
        self.naive_fractions = tuple(self.naive_fractions)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown keys {unknown}", "experiment")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = asdict(self)
        for k in ("naive_fractions", "variants", "dataset_ids"):
            d[k] = list(d[k])
        return d

    def simulation_config(self, seed) -> SimulationConfig:
        merged = json.loads(json.dumps(PROFILES[self.profile]["simulation"]))
        for k, v in self.simulation.items():
            if isinstance(v, dict) and isinstance(merged.get(k), dict):
                merged[k] = {**merged[k], **v}
            else:
                merged[k] = v
        merged["seed"] = seed
        return SimulationConfig.from_dict(merged)

    @property
    def valuation_quarter(self):
        prof = PROFILES[self.profile]["simulation"]
        return int(self.simulation.get("n_accident_quarters", prof["n_accident_quarters"]))

    @property
    def model_variants(self):
        return tuple(v for v in self.variants if v != CE)

    def grid_space(self):
        return GridSpace.from_dict(self.grid) if self.grid else GridSpace()


def derive_seed(root, *names):
    """Named sub-stream seed; stable across runs, platforms and stage order."""
    digest = hashlib.sha256("/".join([str(root), *map(str, names)]).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _stamp_ok(directory: Path, key, outputs):
    stamp = directory / "stage.json"
    if not stamp.exists() or not all((directory / o).exists() for o in outputs):
        return False
    with open(stamp, encoding="utf-8") as fh:
        return json.load(fh).get("key") == key


def _write_stamp(directory: Path, stage, key):
    with open(directory / "stage.json", "w", encoding="utf-8") as fh:
        json.dump({"stage": stage, "key": key, "version": __version__}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_key(directory: Path, stage, missing):
    stamp = directory / "stage.json"
    if not stamp.exists():
        raise DependencyError(stage, missing)
    with open(stamp, encoding="utf-8") as fh:
        return json.load(fh)["key"]


class Pipeline:
    """Stage runner rooted at an output directory."""

    def __init__(self, config: ExperimentConfig, out_dir):
        self.config = config
        self.out = Path(out_dir)
        self.counters = {"simulated": 0, "prepared": 0, "tuned": 0, "trained": 0, "evaluated": 0}

    # -- paths --------------------------------------------------------------

    def dataset_dir(self, ds):
        return self.out / "datasets" / ds

    def tuning_dir(self, variant):
        return self.out / "tuning" / variant

    def model_dir(self, ds, variant):
        return self.out / "models" / ds / variant

    def predictions_path(self, ds, variant):
        return self.out / "predictions" / ds / f"{variant}.csv"

    def report_dir(self, ds):
        return self.out / "reports" / ds

    # -- simulate -----------------------------------------------------------

    def simulate(self, ds):
        d = self.dataset_dir(ds)
        sim = self.config.simulation_config(derive_seed(self.config.seed, "simulate", ds))
        key = _hash({"simulation": sim.to_dict(), "version": __version__})
        if _stamp_ok(d, key, ["transactions.csv"]):
            return key
        d.mkdir(parents=True, exist_ok=True)
        write_transactions(simulate_portfolio(sim), d / "transactions.csv")
        with open(d / "simulation.json", "w", encoding="utf-8") as fh:
            json.dump(sim.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_stamp(d, "simulate", key)
        self.counters["simulated"] += 1
        return key

    # -- prepare ------------------------------------------------------------

    def _split_params(self, ds):
        c = self.config
        return {"mode": c.split_mode, "train_cutoff": c.train_cutoff, "valuation": c.valuation_quarter,
                "move_fraction": c.move_fraction, "naive_fractions": list(c.naive_fractions),
                "seed": derive_seed(c.seed, "split", ds)}

    def prepare(self, ds):
        d = self.dataset_dir(ds)
        if not (d / "transactions.csv").exists():
            raise DependencyError("prepare", f"datasets/{ds}/transactions.csv (simulate)")
        sim_key = _read_key(d, "prepare", f"datasets/{ds} (simulate)")
        params = self._split_params(ds)
        key = _hash({"upstream": sim_key, "split": params})
        pdir = d / "split"
        if _stamp_ok(pdir, key, ["splits.csv"]):
            return key
        portfolio = load_transactions(d / "transactions.csv")
        if params["mode"] == "finalisation":
            assignment = assign_splits(portfolio, (params["train_cutoff"], params["valuation"]),
                                       params["move_fraction"], params["seed"])
        else:
            assignment = assign_splits_naive(portfolio, params["naive_fractions"], params["seed"])
        pdir.mkdir(parents=True, exist_ok=True)
        write_split_manifest(assignment, pdir / "splits.csv")
        _write_stamp(pdir, "prepare", key)
        self.counters["prepared"] += 1
        return key

    def load_prepared(self, ds):
        d = self.dataset_dir(ds)
        if not (d / "split" / "splits.csv").exists():
            raise DependencyError("prepare", f"datasets/{ds}/split/splits.csv (prepare)")
        portfolio = load_transactions(d / "transactions.csv")
        assignment = read_split_manifest(d / "split" / "splits.csv", self.config.split_mode)
        observations = build_observations(portfolio)
        parts = assignment.partition(observations)
        val_q = self.config.valuation_quarter
        # evaluation: test-set claims open at the valuation date
        parts["evaluation"] = [o for o in parts[TEST] if o.prediction_quarter == val_q]
        return parts

    # -- tune ---------------------------------------------------------------

    def tune(self, variant):
        c = self.config
        ds = c.tuning_dataset_id
        prep_key = _read_key(self.dataset_dir(ds) / "split", "tune", f"datasets/{ds}/split (prepare)")
        space = c.grid_space()
        seed = derive_seed(c.seed, "tune", variant)
        key = _hash({"upstream": prep_key, "grid": space.to_dict(), "variant": variant, "seed": seed,
                     "include_current_ce": c.include_current_ce})
        d = self.tuning_dir(variant)
        if _stamp_ok(d, key, ["best.json", "leaderboard.csv"]):
            return key
        parts = self.load_prepared(ds)
        inputs, _, _ = self._inputs(parts, variant)
        outcome = tune(space, variant, inputs["train"], inputs[VALIDATION], seed=seed, workers=c.workers)
        d.mkdir(parents=True, exist_ok=True)
        write_leaderboard(outcome.leaderboard, d / "leaderboard.csv")
        best = outcome.best
        with open(d / "best.json", "w", encoding="utf-8") as fh:
            json.dump({"index": best.index, "spec": best.spec.to_dict(), "training": best.config.to_dict()}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
        _write_stamp(d, "tune", key)
        self.counters["tuned"] += 1
        return key

    def _inputs(self, parts, variant):
        sets = {k: build_feature_set(parts[k], variant, self.config.include_current_ce)
                for k in ("train", VALIDATION, "evaluation")}
        stats = fit_normaliser(sets["train"])
        return {k: v.normalised(stats) for k, v in sets.items()}, sets, stats

    # -- train --------------------------------------------------------------

    def train(self, ds, variant):
        c = self.config
        tdir = self.tuning_dir(variant)
        if not (tdir / "best.json").exists():
            raise DependencyError("train", f"tuning/{variant}/best.json (tune)")
        tune_key = _read_key(tdir, "train", f"tuning/{variant} (tune)")
        prep_key = _read_key(self.dataset_dir(ds) / "split", "train", f"datasets/{ds}/split (prepare)")
        seed = derive_seed(c.seed, "train", ds, variant)
        key = _hash({"tune": tune_key, "prepare": prep_key, "seed": seed})
        mdir = self.model_dir(ds, variant)
        pred_path = self.predictions_path(ds, variant)
        if _stamp_ok(mdir, key, ["checkpoint.json", "training.csv"]) and pred_path.exists():
            return key
        with open(tdir / "best.json", encoding="utf-8") as fh:
            best = json.load(fh)
        spec = ModelSpec.from_dict(best["spec"])
        tconf = TrainingConfig.from_dict({**best["training"], "seed": seed})

        parts = self.load_prepared(ds)
        inputs, sets, stats = self._inputs(parts, variant)
        result = train_model(spec, inputs["train"], inputs[VALIDATION], tconf)
        model = result.model
        y_val = target_to_log_dollars(predict(model, inputs[VALIDATION]), stats)
        factor = fit_smearing_factor(sets[VALIDATION].log_ultimate, y_val, source=variant)
        y_eval = target_to_log_dollars(predict(model, inputs["evaluation"]), stats)

        mdir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(mdir / "checkpoint.json", model, stats, seed,
                        extra={"smearing": factor.to_dict(), "training": tconf.to_dict(),
                               "best_epoch": result.best_epoch, "stopped_epoch": result.stopped_epoch})
        with open(mdir / "training.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for k, tl in enumerate(result.train_losses):
                vl = result.val_losses[k] if k < len(result.val_losses) else ""
                w.writerow([k + 1, repr(tl), repr(vl) if vl != "" else ""])
        write_predictions(pred_path, parts["evaluation"], apply_correction(y_eval, factor), np.exp(y_eval))
        _write_stamp(mdir, "train", key)
        self.counters["trained"] += 1
        return key

    # -- evaluate -----------------------------------------------------------

    def evaluate(self, ds, variant):
        """Scalar metrics and breakdowns for one model, scored against the case estimates."""
        c = self.config
        rdir = self.report_dir(ds)
        if variant == CE:
            upstream = _read_key(self.dataset_dir(ds) / "split", "evaluate", f"datasets/{ds}/split (prepare)")
        else:
            upstream = _read_key(self.model_dir(ds, variant), "evaluate", f"models/{ds}/{variant} (train)")
        key = _hash({"upstream": upstream, "variant": variant, "valuation": c.valuation_quarter})
        stamp_dir = self.out / ".stamps" / "evaluate" / ds / variant
        if _stamp_ok(stamp_dir, key, []) and (rdir / f"{variant}.json").exists():
            return key
        if variant == CE:
            parts = self.load_prepared(ds)
            ce = parts["evaluation"]
            write_predictions(self.predictions_path(ds, CE), ce, [o.case_estimate_now for o in ce],
                              [o.case_estimate_now for o in ce])
        ps = read_predictions(self.predictions_path(ds, variant), variant)
        ce_ps = ev.case_estimates_as_model(ps)
        report = ev.evaluate(ps, opponents=[ce_ps])
        smearing = None
        if variant != CE:
            with open(self.model_dir(ds, variant) / "checkpoint.json", encoding="utf-8") as fh:
                smearing = json.load(fh)["extra"]["smearing"]["b"]
            report.smearing_b = smearing
        rdir.mkdir(parents=True, exist_ok=True)
        ev.write_report(report, rdir, variant)
        extra = scalar_metrics(ps, ce_ps)
        with open(rdir / f"{variant}.json", encoding="utf-8") as fh:
            doc = json.load(fh)
        doc.update(extra)
        with open(rdir / f"{variant}.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        stamp_dir.mkdir(parents=True, exist_ok=True)
        _write_stamp(stamp_dir, "evaluate", key)
        self.counters["evaluated"] += 1
        return key

    # -- report -------------------------------------------------------------

    def report(self):
        """Cross-dataset summary (mean and sd per metric) and the pairwise 'vs' table."""
        c = self.config
        sources = list(c.variants)
        per_ds = {}
        for ds in c.dataset_ids:
            preds = {}
            for v in sources:
                path = self.predictions_path(ds, v)
                if path.exists():
                    preds[v] = read_predictions(path, v)
            if preds:
                per_ds[ds] = preds
        if not per_ds:
            raise DependencyError("report", "stored predictions (train/evaluate)")
        sdir = self.out / "summary"
        if sdir.exists():
            shutil.rmtree(sdir)
        sdir.mkdir(parents=True)

        per_metric = {}
        vs_rows = []
        curve_rows = []
        for ds, preds in per_ds.items():
            any_ps = next(iter(preds.values()))
            ce_ps = ev.case_estimates_as_model(any_ps)
            for v, ps in preds.items():
                for m, val in scalar_metrics(ps, ce_ps).items():
                    per_metric.setdefault((v, m), []).append(val)
            for a in preds:
                for b in [*preds, CE] if CE not in preds else preds:
                    if a == b:
                        continue
                    opp = preds[b] if b in preds else ce_ps
                    for w in ev.WEIGHTINGS:
                        vs_rows.append({"dataset": ds, "model": a, "opponent": b, "weighting": w,
                                        "value": ev.m1_vs_m2(preds[a], opp, w)})
            for row in ev.report_breakdowns(any_ps, "quarters_since_notification"):
                curve_rows.append({"dataset": ds, "quarters_since_notification": row["group"],
                                   "cumulative_share": row["cumulative_share"]})

        summary = []
        for (v, m), vals in sorted(per_metric.items()):
            arr = np.array(vals, dtype=float)
            summary.append({"model": v, "metric": m, "n_datasets": arr.size, "mean": float(arr.mean()),
                            "sd": float(arr.std(ddof=1)) if arr.size > 1 else 0.0})
        _write_csv(sdir / "summary.csv", summary)
        _write_csv(sdir / "vs_by_dataset.csv", vs_rows)
        vs_summary = {}
        for r in vs_rows:
            vs_summary.setdefault((r["model"], r["opponent"], r["weighting"]), []).append(r["value"])
        _write_csv(sdir / "vs_table.csv", [
            {"model": a, "opponent": b, "weighting": w, "mean": float(np.mean(v)),
             "sd": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0}
            for (a, b, w), v in sorted(vs_summary.items())
        ])
        _write_csv(sdir / "cumulative_outstanding.csv", curve_rows)
        with open(sdir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump({"datasets": sorted(per_ds), "summary": summary}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return sdir

    # -- whole run ----------------------------------------------------------

    def run(self):
        c = self.config
        all_ds = [c.tuning_dataset_id, *c.dataset_ids] if c.model_variants else list(c.dataset_ids)
        try:
            for ds in all_ds:
                self._stage("simulate", ds, self.simulate, ds)
                self._stage("prepare", ds, self.prepare, ds)
            for v in c.model_variants:
                self._stage("tune", c.tuning_dataset_id, self.tune, v)
            if c.workers > 1 and len(c.dataset_ids) > 1:
                with ProcessPoolExecutor(max_workers=c.workers) as pool:
                    done = list(pool.map(_train_dataset, [(c, str(self.out), ds) for ds in c.dataset_ids]))
                for counts in done:
                    for k, n in counts.items():
                        self.counters[k] += n
            else:
                for ds in c.dataset_ids:
                    self._train_and_evaluate(ds)
            self._stage("report", "*", self.report)
        finally:
            log.info("pipeline counters: %s", self.counters)
        return self.out

    def _train_and_evaluate(self, ds):
        for v in self.config.model_variants:
            self._stage("train", ds, self.train, ds, v)
        for v in self.config.variants:
            self._stage("evaluate", ds, self.evaluate, ds, v)

    def _stage(self, stage, ds, fn, *args):
        try:
            return fn(*args)
        except (DependencyError, StageError):
            raise
        except Exception as exc:
            raise StageError(stage, ds, exc) from exc


def _train_dataset(args):
    config, out, ds = args
    p = Pipeline(config, out)
    p._train_and_evaluate(ds)
    return p.counters


def scalar_metrics(ps: ev.PredictionSet, ce_ps: ev.PredictionSet):
    uncorrected = ps.with_predictions(ps.extra["predicted_uncorrected"], ps.source)
    out = {
        "ocl_err": ev.ocl_err(ps),
        "ocl_err_uncorrected": ev.ocl_err(uncorrected),
        "male": ev.male(ps),
        "msle": ev.msle(ps),
        "vsCE_ocl": ev.m1_vs_m2(ps, ce_ps, "ocl"),
    }
    final = ps.extra["final_revision_reached"].astype(bool)
    out["final_revision_n"] = int(final.sum())
    out["final_revision_max_abs_error"] = (
        float(np.max(np.abs(ps.predicted[final] - ps.actual[final]))) if final.any() else math.nan
    )
    return out


def write_predictions(path, observations, predicted, predicted_uncorrected):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for o, p, pu in zip(observations, predicted, predicted_uncorrected):
            w.writerow([o.claim_id, o.prediction_quarter, o.accident_quarter, o.quarters_since_notification,
                        repr(float(o.paid_to_date)), repr(float(o.target_ultimate)),
                        repr(float(o.case_estimate_now)), repr(float(p)), repr(float(pu)),
                        int(o.claim.last_revision_time <= o.prediction_quarter)])


def read_predictions(path, source) -> ev.PredictionSet:
    if not Path(path).exists():
        raise DependencyError("evaluate", f"{path} (train)")
    cols = {k: [] for k in PREDICTION_COLUMNS}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            for k in PREDICTION_COLUMNS:
                cols[k].append(row[k])
    as_int = lambda k: np.array(cols[k], dtype=int)  # noqa: E731
    as_float = lambda k: np.array(cols[k], dtype=float)  # noqa: E731
    return ev.PredictionSet(
        as_int("claim_id"), as_int("prediction_quarter"), as_float("predicted"), as_float("paid"),
        as_float("actual"), as_float("case_estimate"), source,
        {"accident_quarter": as_int("accident_quarter"),
         "quarters_since_notification": as_int("quarters_since_notification"),
         "predicted_uncorrected": as_float("predicted_uncorrected"),
         "final_revision_reached": as_int("final_revision_reached")},
    )


def _write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if not rows:
            fh.write("\n")
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def grid_size(variant, config: ExperimentConfig | None = None):
    space = config.grid_space() if config else GridSpace()
    return len(enumerate_grid(space, variant))
