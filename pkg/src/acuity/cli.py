"""Command-line entry point: ``acuity <subcommand> ...``.

Run directory layout (everything is a plain file)::

    COHORT/                  patients.csv, accel.csv, clinical.csv, therapy.csv, synth.cfg
    RUN/labels.csv           per-window phenotype audit
    RUN/dataset.npz          scaled arrays + split plan + scale parameters
    RUN/split.json
    RUN/<scenario>/trials.jsonl, best.json      (tune)
    RUN/<scenario>/model.ckpt, model.json       (train)
    RUN/<scenario>/report.json, roc.csv         (evaluate / baseline)
    RUN/table.csv                               (report)
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import hpo, phenotype, pipeline, synth
from .autodiff import load_checkpoint, save_checkpoint
from .datamodel import load_cohort, load_report, save_report
from .evaluation.bootstrap import bootstrap_report
from .evaluation.metrics import roc_points, sofa_baseline
from .models import ModelSpec, build

log = logging.getLogger("acuity")

# small cohort that trains in minutes on one CPU
DESK_PRESET = {"window_hours": "0.1", "assessment_period_hours": "0.1", "record_hours": "0.8",
               "nominal_rates": "12.5,20"}
DEFAULT_TRIAL = {"model": "vgg1d", "batch_size": 16, "lr": 3e-3, "weight_decay": 1e-4, "downsample_factor": 4}
ROW_LABELS = {"sofa": "SOFA score", "accel": "Accel", "accel+demo": "Accel + Demo",
              "accel+clinical": "Accel + Clinical", "accel+demo+clinical": "Accel + Demo + Clinical"}
TABLE_COLUMNS = (("auc", "AUC (95% CI.)"), ("precision", "Precision (95% CI.)"),
                 ("sensitivity", "Sensitivity (95% CI.)"), ("specificity", "Specificity (95% CI.)"),
                 ("f1", "F1-score (95% CI.)"))


class CliError(Exception):
    pass


def stage_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def _overrides(args) -> dict[str, str]:
    values: dict[str, str] = {}
    if getattr(args, "preset", None) == "desk":
        values.update(DESK_PRESET)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        values.update(synth.read_kv_file(path))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(f"missing {what}: {path}")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _scenario_dir(run: Path, scenario: str) -> Path:
    d = run / scenario
    d.mkdir(parents=True, exist_ok=True)
    return d


def _preprocess_config(cohort: Path, values: dict[str, str]) -> pipeline.PreprocessConfig:
    """Window geometry follows the cohort's synth.cfg unless overridden."""
    base: dict[str, str] = {}
    cfg_file = cohort / "synth.cfg"
    if cfg_file.exists():
        sc = synth.read_kv_file(cfg_file)
        base = {"window_hours": sc.get("window_hours", "4"), "period_hours": sc.get("assessment_period_hours", "4")}
    base.update(values)
    fields = {f.name: f for f in dataclasses.fields(pipeline.PreprocessConfig)}
    unknown = set(base) - set(fields)
    if unknown:
        raise CliError(f"unknown preprocess keys {sorted(unknown)}")
    parsed = {}
    for k, v in base.items():
        parsed[k] = (v.lower() in ("1", "true", "yes")) if k == "stratify" else (int(v) if k == "folds" else float(v))
    return pipeline.PreprocessConfig(**parsed)


def _training_plan(values: dict[str, str]) -> hpo.TrainingPlan:
    fields = {f.name for f in dataclasses.fields(hpo.TrainingPlan)}
    unknown = set(values) - fields - set(DEFAULT_TRIAL)
    if unknown:
        raise CliError(f"unknown training keys {sorted(unknown)}")
    kw = {k: (v if k == "depth" else float(v) if k == "width_scale" else int(v))
          for k, v in values.items() if k in fields}
    return hpo.TrainingPlan(**kw)


def _trial_config(values: dict[str, str]) -> dict:
    config = dict(DEFAULT_TRIAL)
    for k in DEFAULT_TRIAL:
        if k in values:
            config[k] = values[k] if k == "model" else float(values[k]) if k in ("lr", "weight_decay") else int(values[k])
    if not hpo.SearchSpace().contains(config):
        raise CliError(f"hyperparameters outside the search space: {config}")
    return config


# --- subcommands -------------------------------------------------------------------------


def cmd_synth(args) -> None:
    values = _overrides(args)
    values["seed"] = str(args.seed)
    config = synth.config_from_mapping(values)
    synth.generate(config, Path(args.out), workers=args.workers)
    print(f"cohort written to {args.out}")


def cmd_label(args) -> None:
    cohort_dir = _require(Path(args.cohort), "cohort directory")
    cfg = _preprocess_config(cohort_dir, _overrides(args))
    labels = pipeline.label_cohort(load_cohort(cohort_dir), cfg)
    run = Path(args.out)
    run.mkdir(parents=True, exist_ok=True)
    rows = [(pid, wl) for pid in sorted(labels) for wl in labels[pid]]
    phenotype.write_label_audit(rows, run / "labels.csv")
    print(f"{len(rows)} windows labelled -> {run / 'labels.csv'}")


def cmd_preprocess(args) -> None:
    cohort_dir = _require(Path(args.cohort), "cohort directory")
    cfg = _preprocess_config(cohort_dir, _overrides(args))
    dataset = pipeline.preprocess(load_cohort(cohort_dir), stage_seed(args.seed, "split"), cfg)
    run = Path(args.out)
    run.mkdir(parents=True, exist_ok=True)
    dataset.save(run / "dataset.npz")
    dataset.plan.save(run / "split.json")
    print(f"{len(dataset)} windows ({int(dataset.y.sum())} unstable) -> {run / 'dataset.npz'}")


def _load_dataset(run: Path) -> pipeline.Dataset:
    return pipeline.Dataset.load(_require(run / "dataset.npz", "preprocessed dataset (run `acuity preprocess`)"))


def cmd_tune(args) -> None:
    run = Path(args.run)
    scenario = pipeline.check_scenario(args.scenario, allow_sofa=False)
    values = _overrides(args)
    plan = _training_plan(values)
    dataset = _load_dataset(run)
    out = _scenario_dir(run, scenario)
    seed = stage_seed(args.seed, f"tune:{scenario}")
    result = hpo.run_search(hpo.SearchSpace(), hpo.cv_objective(dataset, scenario, seed, plan), args.n_trials,
                            seed, dataset.plan.k, workers=args.workers, log_path=out / "trials.jsonl")
    best = result.best
    _write_json(out / "best.json", {"trial": best.id, "config": best.config, "fold_aucs": best.fold_aucs,
                                    "best_epochs": best.best_epochs, "objective": best.objective,
                                    "plan": dataclasses.asdict(plan)})
    print(f"best trial {best.id}: {best.config} mean fold AUC {best.objective:.4f}")


def cmd_train(args) -> None:
    run = Path(args.run)
    scenario = pipeline.check_scenario(args.scenario, allow_sofa=False)
    values = _overrides(args)
    dataset = _load_dataset(run)
    out = _scenario_dir(run, scenario)
    best_file = out / "best.json"
    seed = stage_seed(args.seed, f"train:{scenario}")
    if best_file.exists() and not any(k in values for k in DEFAULT_TRIAL):
        best = json.loads(best_file.read_text(encoding="utf-8"))
        plan = hpo.TrainingPlan(**best["plan"])
        trial = hpo.Trial(best["trial"], best["config"], best["fold_aucs"], best["best_epochs"], "complete")
    else:
        # no search: cross-validate the given config once to fix the epoch budget
        plan, config = _training_plan(values), _trial_config(values)
        space = hpo.SearchSpace((config["model"],), (config["batch_size"],), (config["lr"],) * 2,
                                (config["weight_decay"],) * 2, (config["downsample_factor"],))
        trial = hpo.run_search(space, hpo.cv_objective(dataset, scenario, seed, plan), 1, seed,
                               dataset.plan.k).best
    model = hpo.finalize(trial, dataset, scenario, seed, plan)
    save_checkpoint(out / "model.ckpt", model.state_dict())
    _write_json(out / "model.json", {"spec": model.spec.to_dict(), "input_length": model.input_length,
                                     "config": trial.config, "fold_aucs": trial.fold_aucs,
                                     "best_epochs": trial.best_epochs, "epochs": hpo.final_epochs(trial)})
    print(f"trained {trial.config['model']} for {hpo.final_epochs(trial)} epochs -> {out / 'model.ckpt'}")


def _write_roc(path: Path, scores, labels) -> None:
    fpr, tpr, thr = roc_points(scores, labels)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for a, b, c in zip(fpr, tpr, thr):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])


def cmd_evaluate(args) -> None:
    run = Path(args.run)
    scenario = pipeline.check_scenario(args.scenario, allow_sofa=False)
    out = run / scenario
    ckpt = _require(out / "model.ckpt", f"checkpoint for {scenario} (run `acuity train --scenario {scenario}`)")
    meta = json.loads(_require(out / "model.json", "model description").read_text(encoding="utf-8"))
    dataset = _load_dataset(run)
    model = build(ModelSpec.from_dict(meta["spec"]), meta["input_length"])
    model.load_state_dict(load_checkpoint(ckpt))
    trial = hpo.Trial(-1, meta["config"], meta["fold_aucs"], meta["best_epochs"], "complete")
    report, probs, labels = hpo.evaluate_holdout(model, dataset, scenario,
                                                 stage_seed(args.seed, f"bootstrap:{scenario}"), trial=trial,
                                                 return_predictions=True)
    save_report(report, out / "report.json")
    _write_roc(out / "roc.csv", probs, labels)
    print(f"{scenario}: holdout AUC {report.metrics['auc'].median:.3f} "
          f"({report.metrics['auc'].lower:.3f}-{report.metrics['auc'].upper:.3f})")


def cmd_baseline(args) -> None:
    run = Path(args.run)
    dataset = _load_dataset(run)
    dev_sofa, dev_y = dataset.dev_sofa()
    fit = sofa_baseline(dev_sofa, dev_y)
    test_sofa, test_y = dataset.holdout_sofa()
    res = sofa_baseline(test_sofa, test_y, threshold=fit.threshold)
    report = bootstrap_report(res.scores, res.labels, seed=stage_seed(args.seed, "bootstrap:sofa"),
                              threshold=fit.threshold, scenario="sofa",
                              extra={"youden_j_dev": fit.youden_j, "n_missing_sofa": res.n_dropped})
    out = _scenario_dir(run, "sofa")
    save_report(report, out / "report.json")
    _write_roc(out / "roc.csv", res.scores, res.labels)
    print(f"sofa: threshold {fit.threshold:.4f} (dev), holdout AUC {report.metrics['auc'].median:.3f}")


def format_cell(summary) -> str:
    if summary.median is None:
        return "n/a"
    return f"{summary.median:.2f} ({summary.lower:.2f}-{summary.upper:.2f})"


def render_table(reports: dict) -> list[list[str]]:
    rows = [["Scenario"] + [title for _, title in TABLE_COLUMNS]]
    for scenario in pipeline.SCENARIOS:
        if scenario in reports:
            rows.append([ROW_LABELS[scenario]] + [format_cell(reports[scenario].metrics[m]) for m, _ in TABLE_COLUMNS])
    return rows


def cmd_report(args) -> None:
    run = _require(Path(args.run), "run directory")
    reports = {s: load_report(run / s / "report.json") for s in pipeline.SCENARIOS if (run / s / "report.json").exists()}
    if not reports:
        raise CliError(f"no scenario reports under {run} (run `acuity evaluate` or `acuity baseline`)")
    rows = render_table(reports)
    with (run / "table.csv").open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    for row in rows:
        print(" | ".join(row))


# --- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acuity", description="ICU acuity assessment pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, *, seed=True, config=True):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=fn)
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if config:
            sp.add_argument("--config", help="key=value file of overrides")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="single override (repeatable)")
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic cohort")
    sp.add_argument("--out", required=True)
    sp.add_argument("--preset", choices=("desk",))
    sp.add_argument("--workers", type=int, default=1)

    for name, fn, help_text in (("label", cmd_label, "write the per-window phenotype audit"),
                                ("preprocess", cmd_preprocess, "label, window, split and scale a cohort")):
        sp = add(name, fn, help_text, seed=name == "preprocess")
        sp.add_argument("--cohort", required=True)
        sp.add_argument("--out", required=True, help="run directory")

    sp = add("tune", cmd_tune, "hyperparameter search with median pruning")
    sp.add_argument("--run", required=True)
    sp.add_argument("--scenario", required=True, choices=pipeline.SCENARIOS[1:])
    sp.add_argument("--n-trials", type=int, default=hpo.N_TRIALS)
    sp.add_argument("--workers", type=int, default=1)

    sp = add("train", cmd_train, "train the final model on all development patients")
    sp.add_argument("--run", required=True)
    sp.add_argument("--scenario", required=True, choices=pipeline.SCENARIOS[1:])

    sp = add("evaluate", cmd_evaluate, "bootstrap evaluation on the holdout", config=False)
    sp.add_argument("--run", required=True)
    sp.add_argument("--scenario", required=True, choices=pipeline.SCENARIOS[1:])

    sp = add("baseline", cmd_baseline, "SOFA/Youden baseline", config=False)
    sp.add_argument("--run", required=True)

    sp = add("report", cmd_report, "render the scenario table", seed=False, config=False)
    sp.add_argument("--run", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed its diagnostic
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"acuity {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
