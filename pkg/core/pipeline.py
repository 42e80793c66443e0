"""
Pipeline stages and their configuration.

Every stage reads the artifacts of the stages before it from the output
directory and writes its own. JSON artifacts are written with sorted keys and
carry the config hash, seed, effective config and the study defaults, so the
same config reproduces them byte for byte.
"""

import copy
import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from django.conf import settings
from django.core.management import call_command, get_commands
from django.core.management.base import CommandError

from core.cleaning import CleaningLimits, clean_saccades, summarize_cleaning
from core.dataset import SplitPlan, draw_split, materialize
from core.evaluation import evaluate_runs, flip_test, score, scores_to_frame, summarize_scores
from core.events import GeometryConfig, detect_events, events_from_frame, events_to_frame
from core.exceptions import ConfigValidationError, MissingArtifactError, TrialTooShortError
from core.features import FEATURE_NAMES, FeatureMatrix, Standardizer, build_matrix, featurize_trial
from core.ingest import (
    ClassLabel, GazeSchema, apply_quality_gate, manifest_from_json, manifest_to_json, parse_gaze_log, write_gaze_log,
)
from core.registry import sync_registry
from core.stats import FeatureSelection, most_frequent_features, significant_feature_filter
from core.svm import KernelSpec, cv_ensemble_train, ensemble_predict_many, ensemble_to_dict
from core.synth import ClassStats, SynthConfig, sample_feature_rows, sample_gaze_trials

logger = logging.getLogger(__name__)

TRIALS_JSON = "trials.json"
EVENTS_CSV = "events.csv"
CLEAN_EVENTS_CSV = "clean_events.csv"
CLEANING_JSON = "cleaning.json"
FEATURES_CSV = "features.csv"
FEATURES_JSON = "features.json"
SYNTH_FEATURES_CSV = "synthetic_features.csv"
SYNTH_GAZE_CSV = "synthetic_gaze.csv"
SPLIT_JSON = "split.json"
MODEL_JSON = "model.json"
MFF_JSON = "mff.json"
SIGFILTER_JSON = "sigfilter.json"
REPORT_JSON = "report.json"

FEATURE_SETS = ("all", "mff", "sf")
TASKS = ("ternary", "binary")
BINARY_CLASSES = [ClassLabel.INTERMEDIATE.value, ClassLabel.EXPERT.value]


@dataclass
class PipelineConfig:
    min_ratio: float
    nominal_period_ms: float
    px_per_deg_x: float
    px_per_deg_y: float
    peak_threshold: float
    min_fix_dur: float
    sp_dispersion: float
    dispersion_metric: str
    max_bridge_samples: int
    max_velocity: float
    max_accel: float
    max_decel: float
    kernel: str
    gamma: float
    C: float
    C_sweep: List[float]
    tol: float
    max_passes: int
    k: int
    n_train: int
    n_holdout: int
    runs: int
    alpha: float
    top_m: int
    mff_threshold: float
    flip_iterations: int
    synth_participants: Dict[str, int]
    synth_trials: int
    synth_sigma_p: float
    synth_events_per_trial: int
    seed: int
    jobs: int
    out_dir: str
    gaze_csv: str
    schema: Optional[str]
    unknown_keys: List[str] = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def builtin_defaults(cls) -> "PipelineConfig":
        return cls(**copy.deepcopy(settings.GAZE_PIPELINE))

    @classmethod
    def load(cls, path=None, **overrides) -> "PipelineConfig":
        """Settings defaults, then the TOML file, then non-None keyword overrides."""
        values = copy.deepcopy(settings.GAZE_PIPELINE)
        known = {f.name for f in fields(cls)} - {"unknown_keys"}
        unknown = []
        if path is not None:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
            for key, value in data.items():
                if key in known:
                    values[key] = value
                else:
                    unknown.append(key)
        for key, value in overrides.items():
            if value is not None:
                if key not in known:
                    raise TypeError(f"unknown config override {key!r}")
                values[key] = value
        return cls(**values, unknown_keys=unknown)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("unknown_keys")
        return data

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()

    def validate(self) -> List[str]:
        """Names of the fields whose values are out of range."""
        checks = {
            "min_ratio": lambda: 0 <= self.min_ratio <= 1,
            "nominal_period_ms": lambda: self.nominal_period_ms > 0,
            "px_per_deg_x": lambda: self.px_per_deg_x > 0,
            "px_per_deg_y": lambda: self.px_per_deg_y > 0,
            "peak_threshold": lambda: self.peak_threshold > 0,
            "min_fix_dur": lambda: self.min_fix_dur >= 0,
            "sp_dispersion": lambda: self.sp_dispersion > 0,
            "dispersion_metric": lambda: self.dispersion_metric in ("bbox", "pairwise"),
            "max_bridge_samples": lambda: int(self.max_bridge_samples) == self.max_bridge_samples and self.max_bridge_samples >= 0,
            "max_velocity": lambda: self.max_velocity > 0,
            "max_accel": lambda: self.max_accel > 0,
            "max_decel": lambda: self.max_decel > 0,
            "kernel": lambda: str(self.kernel).lower() in ("linear", "rbf"),
            "gamma": lambda: self.gamma > 0,
            "C": lambda: self.C > 0,
            "C_sweep": lambda: all(c > 0 for c in self.C_sweep),
            "tol": lambda: self.tol > 0,
            "max_passes": lambda: self.max_passes >= 1,
            "k": lambda: self.k >= 2,
            "n_train": lambda: self.n_train >= 1,
            "n_holdout": lambda: self.n_holdout >= 1,
            "runs": lambda: self.runs >= 1,
            "alpha": lambda: 0 < self.alpha < 1,
            "top_m": lambda: 1 <= self.top_m <= len(FEATURE_NAMES),
            "mff_threshold": lambda: 0 <= self.mff_threshold < 1,
            "flip_iterations": lambda: self.flip_iterations >= 1,
            "synth_participants": lambda: all(int(n) >= 1 for n in self.synth_participants.values()),
            "synth_trials": lambda: 1 <= self.synth_trials <= 52,
            "synth_sigma_p": lambda: self.synth_sigma_p >= 0,
            "synth_events_per_trial": lambda: self.synth_events_per_trial >= 1,
            "seed": lambda: int(self.seed) == self.seed and self.seed >= 0,
            "jobs": lambda: self.jobs != 0,
        }
        problems = []
        for name, check in checks.items():
            try:
                ok = bool(check())
            except (TypeError, ValueError, AttributeError):
                ok = False
            if not ok:
                problems.append(name)
        return problems + [f"unknown key {key}" for key in self.unknown_keys]

    def raise_if_invalid(self) -> None:
        problems = self.validate()
        if problems:
            raise ConfigValidationError(problems)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def geometry(self) -> GeometryConfig:
        return GeometryConfig(self.px_per_deg_x, self.px_per_deg_y)

    def cleaning_limits(self) -> CleaningLimits:
        return CleaningLimits(self.max_velocity, self.max_accel, self.max_decel)

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.gamma)

    def model_options(self) -> dict:
        return {
            "k": self.k, "C": self.C, "kernel": self.kernel_spec(),
            "tol": self.tol, "max_passes": self.max_passes, "jobs": self.jobs,
        }

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            participants=dict(self.synth_participants),
            trials=self.synth_trials,
            sigma_p=self.synth_sigma_p,
            events_per_trial=self.synth_events_per_trial,
            seed=self.seed,
        )


def artifact_path(cfg: PipelineConfig, name: str) -> Path:
    return cfg.out_path / name


def require(cfg: PipelineConfig, name: str) -> Path:
    path = artifact_path(cfg, name)
    if not path.exists():
        raise MissingArtifactError(path)
    return path


def write_json_artifact(cfg: PipelineConfig, name: str, stage: str, payload: dict) -> Path:
    document = {
        "stage": stage,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "defaults": PipelineConfig.builtin_defaults().to_dict(),
        "result": payload,
    }
    path = artifact_path(cfg, name)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("%s: wrote %s", stage, path)
    return path


def provenance_name(name: str) -> str:
    return f"{name}.json"


def record_csv_artifact(cfg: PipelineConfig, name: str, stage: str, rows: int) -> Path:
    """Writes the JSON companion of a CSV artifact: config hash, seed and the CSV's sha256."""
    digest = hashlib.sha256(artifact_path(cfg, name).read_bytes()).hexdigest()
    return write_json_artifact(cfg, provenance_name(name), stage, {"file": name, "rows": rows, "sha256": digest})


def read_json_artifact(cfg: PipelineConfig, name: str) -> dict:
    with open(require(cfg, name), encoding="utf-8") as fh:
        return json.load(fh)["result"]


def _load_trials(cfg: PipelineConfig):
    return manifest_from_json(read_json_artifact(cfg, TRIALS_JSON))


def load_features(cfg: PipelineConfig) -> FeatureMatrix:
    return FeatureMatrix.from_csv(require(cfg, FEATURES_CSV))


def stage_ingest(cfg: PipelineConfig, source=None, registry: bool = False) -> dict:
    source = Path(source or cfg.gaze_csv)
    if not source.exists():
        raise MissingArtifactError(source)
    schema = GazeSchema.from_file(cfg.schema) if cfg.schema else GazeSchema()
    trials = parse_gaze_log(source, schema)
    manifest = apply_quality_gate(trials, cfg.min_ratio)
    summary = {"trials": len(manifest.trials), "dropped": len(manifest.dropped)}
    if registry:
        summary["registry"] = sync_registry(manifest, trials)
    write_json_artifact(cfg, TRIALS_JSON, "ingest", manifest_to_json(manifest))
    return summary


def stage_detect(cfg: PipelineConfig) -> dict:
    manifest = _load_trials(cfg)
    geom = cfg.geometry()
    frames, skipped = [], 0
    for trial in manifest.trials:
        try:
            events = detect_events(
                trial, geom,
                peak_threshold=cfg.peak_threshold,
                min_fix_dur=cfg.min_fix_dur,
                sp_dispersion=cfg.sp_dispersion,
                dispersion_metric=cfg.dispersion_metric,
                max_bridge_samples=cfg.max_bridge_samples,
            )
        except TrialTooShortError:
            logger.warning("trial %s too short for event detection; skipped", trial.key)
            skipped += 1
            continue
        frames.append(events_to_frame(trial.key, events))
    events = pd.concat(frames, ignore_index=True) if frames else events_to_frame("", [])
    path = artifact_path(cfg, EVENTS_CSV)
    path.parent.mkdir(parents=True, exist_ok=True)
    events.to_csv(path, index=False)
    record_csv_artifact(cfg, EVENTS_CSV, "detect", len(events))
    return {"events": len(events), "skipped_trials": skipped}


def stage_clean(cfg: PipelineConfig) -> dict:
    manifest = _load_trials(cfg)
    events = events_from_frame(pd.read_csv(require(cfg, EVENTS_CSV)))
    limits = cfg.cleaning_limits()
    frames, reports = [], []
    for trial in manifest.trials:
        kept, report = clean_saccades(events.get(trial.key, []), trial, limits)
        reports.append(report)
        frames.append(events_to_frame(trial.key, kept))
    cleaned = pd.concat(frames, ignore_index=True) if frames else events_to_frame("", [])
    cleaned.to_csv(artifact_path(cfg, CLEAN_EVENTS_CSV), index=False)
    record_csv_artifact(cfg, CLEAN_EVENTS_CSV, "clean", len(cleaned))
    summary = summarize_cleaning(reports).to_dict()
    write_json_artifact(cfg, CLEANING_JSON, "clean", summary)
    return summary


def stage_featurize(cfg: PipelineConfig) -> dict:
    """Features from cleaned events, or the synthetic feature rows passed through when no gaze was ingested."""
    clean_path = artifact_path(cfg, CLEAN_EVENTS_CSV)
    synth_path = artifact_path(cfg, SYNTH_FEATURES_CSV)
    if clean_path.exists():
        manifest = _load_trials(cfg)
        events = events_from_frame(pd.read_csv(clean_path))
        matrix = build_matrix([featurize_trial(events.get(tr.key, []), tr) for tr in manifest.trials])
        source = "events"
    elif synth_path.exists():
        matrix = FeatureMatrix.from_csv(synth_path)
        matrix.standardizer = Standardizer.fit(matrix.X, matrix.feature_names)
        source = "synthetic"
    else:
        raise MissingArtifactError(clean_path)
    matrix.to_csv(artifact_path(cfg, FEATURES_CSV))
    record_csv_artifact(cfg, FEATURES_CSV, "featurize", len(matrix))
    meta = dict(matrix.meta(), source=source)
    write_json_artifact(cfg, FEATURES_JSON, "featurize", meta)
    return {"rows": len(matrix), "flagged": meta["n_flagged"], "source": source}


def stage_split(cfg: PipelineConfig) -> dict:
    matrix = load_features(cfg)
    plan = draw_split(matrix.participants_by_class(), cfg.seed, cfg.n_train, cfg.n_holdout)
    train, holdout = materialize(plan, matrix)
    payload = dict(plan.to_dict(), train_rows=len(train), holdout_rows=len(holdout))
    write_json_artifact(cfg, SPLIT_JSON, "split", payload)
    return {"train_rows": len(train), "holdout_rows": len(holdout)}


def stage_train(cfg: PipelineConfig) -> dict:
    matrix = load_features(cfg)
    plan = SplitPlan.from_dict(read_json_artifact(cfg, SPLIT_JSON))
    train, holdout = materialize(plan, matrix)
    scaler = Standardizer.fit(train.X, train.feature_names)
    ensemble = cv_ensemble_train(
        scaler.transform(train.X), train.labels, groups=train.participants, seed=cfg.seed, **cfg.model_options(),
    )
    payload = {
        "feature_names": train.feature_names,
        "standardization": scaler.to_dict(),
        "ensemble": ensemble_to_dict(ensemble),
        "mean_fold_accuracy": ensemble.mean_fold_accuracy,
    }
    if len(holdout):
        predicted, _ = ensemble_predict_many(ensemble, scaler.transform(holdout.X))
        payload["holdout"] = score(predicted, holdout.labels, ensemble.classes).to_dict()
    write_json_artifact(cfg, MODEL_JSON, "train", payload)
    return {"folds": ensemble.k, "mean_fold_accuracy": ensemble.mean_fold_accuracy}


def _selected_features(cfg: PipelineConfig, feature_set: str) -> Optional[List[str]]:
    if feature_set == "all":
        return None
    name = MFF_JSON if feature_set == "mff" else SIGFILTER_JSON
    return FeatureSelection.from_dict(read_json_artifact(cfg, name)).kept


def evaluation_name(feature_set: str, task: str) -> str:
    return f"evaluation_{feature_set}_{task}.json"


def stage_evaluate(cfg: PipelineConfig, feature_set: str = "all", task: str = "ternary", sweep: bool = False) -> dict:
    """Repeated protocol on one feature set. With sweep=True each C in C_sweep is also evaluated."""
    if feature_set not in FEATURE_SETS or task not in TASKS:
        raise ConfigValidationError([f"features={feature_set}" if feature_set not in FEATURE_SETS else f"task={task}"])
    matrix = load_features(cfg)
    features = _selected_features(cfg, feature_set)
    if features is not None and not features:
        raise ConfigValidationError([f"features={feature_set} (selection is empty)"])

    def protocol(run_cfg: PipelineConfig):
        return evaluate_runs(
            matrix, runs=run_cfg.runs, seed=run_cfg.seed, features=features,
            classes=BINARY_CLASSES if task == "binary" else None,
            n_train=run_cfg.n_train, n_holdout=run_cfg.n_holdout, **run_cfg.model_options(),
        )

    scores = protocol(cfg)
    summary = summarize_scores(scores)
    summary["features"] = feature_set
    summary["task"] = task
    if sweep:
        summary["c_sweep"] = {
            str(c): summarize_scores(protocol(replace(cfg, C=float(c))))["accuracy"]
            for c in cfg.C_sweep
        }
    write_json_artifact(cfg, evaluation_name(feature_set, task), "evaluate", summary)
    runs_csv = f"runs_{feature_set}_{task}.csv"
    scores_to_frame(scores).to_csv(artifact_path(cfg, runs_csv), index=False)
    record_csv_artifact(cfg, runs_csv, "evaluate", len(scores))
    return {"median_accuracy": summary["accuracy"]["median"]}


def stage_mff(cfg: PipelineConfig) -> dict:
    selection = most_frequent_features(
        load_features(cfg), runs=cfg.runs, top_m=cfg.top_m, seed=cfg.seed, threshold=cfg.mff_threshold,
        n_train=cfg.n_train, n_holdout=cfg.n_holdout, **cfg.model_options(),
    )
    write_json_artifact(cfg, MFF_JSON, "mff", selection.to_dict())
    return {"kept": selection.kept}


def stage_sigfilter(cfg: PipelineConfig) -> dict:
    selection = significant_feature_filter(load_features(cfg), cfg.alpha)
    write_json_artifact(cfg, SIGFILTER_JSON, "sigfilter", selection.to_dict())
    return {"kept": selection.kept}


def fliptest_name(control: bool) -> str:
    return "fliptest_control.json" if control else "fliptest.json"


def stage_fliptest(cfg: PipelineConfig, control: bool = False) -> dict:
    distribution = flip_test(
        load_features(cfg), iterations=cfg.flip_iterations, seed=cfg.seed, control=control,
        n_holdout=cfg.n_holdout, **cfg.model_options(),
    )
    payload = dict(distribution.to_dict(), control=control)
    write_json_artifact(cfg, fliptest_name(control), "fliptest", payload)
    return {"mean_accuracy": distribution.mean, "median_accuracy": distribution.median}


def stage_synth(cfg: PipelineConfig, kind: str = "features", stats_path=None) -> dict:
    stats = ClassStats.load(stats_path)
    cfg.out_path.mkdir(parents=True, exist_ok=True)
    if kind == "features":
        matrix = sample_feature_rows(stats, cfg.synth_config())
        matrix.to_csv(artifact_path(cfg, SYNTH_FEATURES_CSV))
        record_csv_artifact(cfg, SYNTH_FEATURES_CSV, "synth", len(matrix))
        return {"rows": len(matrix), "path": str(artifact_path(cfg, SYNTH_FEATURES_CSV))}
    if kind == "gaze":
        trials = sample_gaze_trials(stats, cfg.synth_config(), cfg.geometry())
        path = write_gaze_log(trials, artifact_path(cfg, SYNTH_GAZE_CSV))
        record_csv_artifact(cfg, SYNTH_GAZE_CSV, "synth", sum(tr.n_samples for tr in trials))
        return {"trials": len(trials), "path": str(path)}
    raise ConfigValidationError([f"kind={kind}"])


def _median_metrics(evaluation: dict) -> dict:
    out = {
        "accuracy": evaluation["accuracy"],
        "median_miss_rate": evaluation["median_miss_rate"],
        "median_recall": evaluation["median_recall"],
    }
    for key in ("fnr", "fpr", "confusion_total", "positive"):
        if key in evaluation:
            out[key] = evaluation[key]
    return out


def stage_report(cfg: PipelineConfig) -> dict:
    """Collates whatever stage results exist into one summary."""
    report = {"ternary": {}, "binary": {}}
    for task in TASKS:
        for feature_set in FEATURE_SETS:
            path = artifact_path(cfg, evaluation_name(feature_set, task))
            if path.exists():
                report[task][feature_set] = _median_metrics(read_json_artifact(cfg, path.name))
    if not report["ternary"] and not report["binary"]:
        raise MissingArtifactError(artifact_path(cfg, evaluation_name("all", "ternary")))
    for name, key in ((MFF_JSON, "mff"), (SIGFILTER_JSON, "sigfilter"), (CLEANING_JSON, "cleaning"),
                      (fliptest_name(False), "flip_test"), (fliptest_name(True), "flip_test_control")):
        if artifact_path(cfg, name).exists():
            report[key] = read_json_artifact(cfg, name)
    write_json_artifact(cfg, REPORT_JSON, "report", report)
    return {"sections": sorted(k for k, v in report.items() if v)}


STAGES = {
    "ingest": stage_ingest,
    "detect": stage_detect,
    "clean": stage_clean,
    "featurize": stage_featurize,
    "split": stage_split,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "mff": stage_mff,
    "sigfilter": stage_sigfilter,
    "fliptest": stage_fliptest,
    "synth": stage_synth,
    "report": stage_report,
}


def run(subcommand: str, *args, **options) -> int:
    """Runs one stage command and returns its exit status: 0, 1 for an unknown stage, 2 or 3 on failure."""
    if subcommand not in STAGES or get_commands().get(subcommand) != "core":
        logger.error("unknown subcommand %r; available: %s", subcommand, ", ".join(STAGES))
        return 1
    try:
        call_command(subcommand, *args, **options)
    except CommandError as exc:
        logger.error("%s failed: %s", subcommand, exc)
        return exc.returncode
    return 0
