"""
Command-line interface for eloqnet.
"""

import json
import logging
import sys
from dataclasses import fields, replace
from functools import wraps
from pathlib import Path
from typing import Optional

import click
import numpy as np
from tabulate import tabulate

from . import fileio
from .errors import ConfigError, DimensionError, EloqnetError
from .evaluation import (
    PatientResult,
    eval_attention,
    evaluate_patient,
    summarize,
    summary_table,
)
from .loss import LossMode
from .model import (
    TASKS,
    Task,
    Variant,
    build_variant,
    parameter_table,
    prepare_connectivity,
)
from .settings import RunConfig, load_run_config, timestamp, write_manifest
from .synthdata import generate_cohort, oracle_window_synchrony
from .training import TrainConfig, cross_validate, make_samples, train

logger = logging.getLogger("eloqnet.cli")

VARIANTS = [str(v) for v in Variant]
LOSS_MODES = [str(m) for m in LossMode]


def _report_error(error: Exception, exit_code: int, kind: str) -> None:
    """Human line on stdout, JSON record on stderr, then exit."""
    click.echo(f"❌ {error}")
    record = {"error": kind, "message": str(error), "exit_code": exit_code}
    click.echo(json.dumps(record), err=True)
    sys.exit(exit_code)


def handle_errors(command):
    """Map library exceptions to exit codes: 2 for config, 3 for numeric."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except EloqnetError as e:
            logger.debug("Command failed", exc_info=True)
            _report_error(e, e.exit_code, e.kind)
        except OSError as e:
            logger.debug("Command failed", exc_info=True)
            _report_error(e, ConfigError.exit_code, "io")

    return wrapper


def load_config(
    config: Optional[str],
    seed: Optional[int] = None,
    variant: Optional[str] = None,
    loss_mode: Optional[str] = None,
    folds: Optional[int] = None,
) -> RunConfig:
    """Read the run configuration and apply command-line overrides."""
    run = load_run_config(Path(config) if config else None)
    if seed is not None:
        run = run.with_seed(seed)
    train_overrides: dict = {}
    if loss_mode is not None:
        train_overrides["loss_mode"] = LossMode(loss_mode)
    if folds is not None:
        train_overrides["folds"] = folds
    model = dict(run.model)
    if variant is not None:
        model["variant"] = Variant(variant)
    return RunConfig(
        synth=run.synth,
        window=run.window,
        model=model,
        train=_replace_train(run.train, train_overrides),
    )


def _replace_train(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    return replace(cfg, **overrides) if overrides else cfg


def config_option(f):
    return click.option(
        "--config",
        "-c",
        type=click.Path(dir_okay=False),
        help="Run configuration INI file (a manifest works too)",
    )(f)


def seed_option(f):
    return click.option(
        "--seed", type=click.IntRange(0, 2**64 - 1), help="Seed of the run"
    )(f)


def out_option(f):
    return click.option(
        "--out",
        "-o",
        required=True,
        type=click.Path(file_okay=False),
        help="Output directory",
    )(f)


def variant_option(f):
    return click.option(
        "--variant",
        type=click.Choice(VARIANTS),
        help="Network variant (default: proposed)",
    )(f)


def loss_mode_option(f):
    return click.option(
        "--loss-mode",
        type=click.Choice(LOSS_MODES),
        help="Loss mode (default: literal)",
    )(f)


def folds_option(f):
    return click.option(
        "--folds", type=click.IntRange(min=2), help="Cross-validation folds"
    )(f)


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(
        ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"], case_sensitive=False
    ),
    default="WARNING",
    envvar="ELOQNET_LOG_LEVEL",
    show_envvar=True,
    help="Set the logging level (default: WARNING)",
)
@click.version_option(package_name="eloqnet")
def main(log_level):
    """Eloquent cortex localization with dynamic functional connectivity.

    Main entry point for the eloqnet command-line interface.
    Configures logging based on the specified log level.

    Args:
        log_level: Logging level to use. Can be one of:
            DEBUG, INFO, WARNING, ERROR, or CRITICAL.
            Defaults to WARNING.
    """
    logger.info(f"Setting logging level to {log_level}")
    log_level_value = getattr(logging, log_level.upper())

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level_value)
    for handler in root_logger.handlers:
        handler.setLevel(log_level_value)

    # The parent logger level affects all eloqnet child loggers
    logging.getLogger("eloqnet").setLevel(log_level_value)
    logger.setLevel(log_level_value)


@main.command()
@config_option
@seed_option
@out_option
@handle_errors
def simulate(config, seed, out):
    """Generate a synthetic cohort.

    Writes one file per patient, the cohort index and a manifest to OUT.
    """
    started = timestamp()
    run = load_config(config, seed)
    out = Path(out)
    click.echo(f"🧪 Simulating {run.synth.patients} patients (seed {run.synth.seed})")

    patients = generate_cohort(run.synth)
    written = fileio.write_cohort(out, patients)
    write_manifest(
        out,
        "simulate",
        run,
        run.synth.seed,
        inputs=[config] if config else [],
        outputs=[p.name for p in written],
        started=started,
    )
    click.echo(f"✅ Wrote {len(patients)} patients to {out}")


def _samples(patients, run: RunConfig):
    variant = run.model_config(patients[0].regions).variant
    return make_samples(patients, run.window, variant)


def _read_cohort(cohort: str) -> list:
    patients = fileio.read_cohort(Path(cohort))
    if not patients:
        raise ConfigError(f"Cohort {cohort} is empty")
    return patients


@main.command("train")
@click.argument("cohort", type=click.Path(file_okay=False))
@config_option
@seed_option
@variant_option
@loss_mode_option
@out_option
@handle_errors
def train_command(cohort, config, seed, variant, loss_mode, out):
    """Train a network on every patient of COHORT.

    Writes the checkpoint and the per-epoch loss history to OUT.
    """
    started = timestamp()
    run = load_config(config, seed, variant, loss_mode)
    out = Path(out)
    patients = _read_cohort(cohort)
    mcfg = run.model_config(patients[0].regions)
    click.echo(f"🚀 Training {mcfg.variant} on {len(patients)} patients")

    result = train(_samples(patients, run), run.train, mcfg)
    ckpt = fileio.write_checkpoint(
        out / fileio.CHECKPOINT_NAME, result.state, run.window
    )
    history = fileio.write_tsv(
        out / "loss_history.tsv",
        ["epoch", "loss"],
        [(k + 1, v) for k, v in enumerate(result.loss_history)],
    )
    write_manifest(
        out,
        "train",
        run,
        run.train.seed,
        inputs=[cohort] + ([config] if config else []),
        outputs=[ckpt.name, history.name],
        started=started,
    )
    click.echo(
        f"✅ Loss {result.loss_history[0]:.4f} -> {result.loss_history[-1]:.4f}, "
        f"checkpoint {ckpt}"
    )


def _summary_records(summary, extra: dict) -> list[dict]:
    records = []
    for task in TASKS:
        s = summary.get(task)
        record = {**extra, "task": str(task), "averaging": "per-patient"}
        record.update({"absent": True} if s is None else s.as_record())
        records.append(record)
    return records


def _write_attention(out: Path, results: list[PatientResult]) -> None:
    for r in results:
        fileio.write_attention(
            out / "attention" / f"{r.patient_id}.tsv",
            r.attention_language,
            r.attention_motor,
        )


@main.command()
@click.argument("cohort", type=click.Path(file_okay=False))
@config_option
@seed_option
@variant_option
@loss_mode_option
@folds_option
@out_option
@handle_errors
def crossval(cohort, config, seed, variant, loss_mode, folds, out):
    """k-fold cross-validation on COHORT.

    Writes per-fold and summary metrics, per-patient results and attention
    tables to OUT.
    """
    started = timestamp()
    run = load_config(config, seed, variant, loss_mode, folds)
    out = Path(out)
    patients = _read_cohort(cohort)
    mcfg = run.model_config(patients[0].regions)
    click.echo(
        f"🔁 {run.train.folds}-fold cross-validation of {mcfg.variant} "
        f"on {len(patients)} patients"
    )

    report = cross_validate(_samples(patients, run), run.train, mcfg)

    records = []
    for fold in report.folds:
        extra = {"record": "fold", "fold": fold.split.fold}
        records += _summary_records(fold.metrics, extra)
    records += _summary_records(report.summary, {"record": "summary"})
    fileio.write_jsonl(out / "metrics.jsonl", records)

    fold_of = {pid: f.split.fold for f in report.folds for pid in f.split.test_ids}
    fileio.write_jsonl(
        out / "patients.jsonl",
        [{**r.as_record(), "fold": fold_of[r.patient_id]} for r in report.patients],
    )
    fileio.write_tsv(
        out / "loss_history.tsv",
        ["fold", "epoch", "loss"],
        [
            (f.split.fold, k + 1, v)
            for f in report.folds
            for k, v in enumerate(f.loss_history)
        ],
    )
    _write_attention(out, report.patients)

    if mcfg.variant != Variant.MT_GNN_STATIC:
        synchrony = {}
        for p in patients:
            sync = oracle_window_synchrony(p, run.window)
            synchrony[p.patient_id] = {
                "language": sync.system("language"),
                "motor": sync.system("motor"),
            }
        alignment = eval_attention(report.patients, synchrony)
        fileio.write_jsonl(out / "attention_alignment.jsonl", [vars(alignment)])

    write_manifest(
        out,
        "crossval",
        run,
        run.train.seed,
        inputs=[cohort] + ([config] if config else []),
        outputs=["metrics.jsonl", "patients.jsonl", "loss_history.tsv", "attention/"],
        started=started,
    )
    click.echo(summary_table(report.summary))


@main.command()
@click.argument("cohort", type=click.Path(file_okay=False))
@config_option
@seed_option
@variant_option
@loss_mode_option
@out_option
@handle_errors
def bilateral(cohort, config, seed, variant, loss_mode, out):
    """Train on unilateral patients of COHORT and test on the bilateral ones.

    Reports the language accuracy of every bilateral patient and whether at
    least one right-hemisphere region was predicted eloquent.
    """
    started = timestamp()
    run = load_config(config, seed, variant, loss_mode)
    out = Path(out)
    patients = _read_cohort(cohort)
    train_set = [p for p in patients if not p.bilateral]
    test_set = [p for p in patients if p.bilateral]
    if not test_set:
        raise ConfigError("Cohort has no bilateral patients")
    if not train_set:
        raise ConfigError("Cohort has no unilateral patients to train on")

    mcfg = run.model_config(patients[0].regions)
    click.echo(
        f"🧠 Training {mcfg.variant} on {len(train_set)} unilateral patients, "
        f"testing on {len(test_set)} bilateral patients"
    )
    result = train(make_samples(train_set, run.window, mcfg.variant), run.train, mcfg)

    records, rows, results = [], [], []
    for sample in make_samples(test_set, run.window, mcfg.variant):
        r = evaluate_patient(
            result.state, mcfg, sample.patient_id, sample.connectivity, sample.labels
        )
        results.append(r)
        metrics = r.metrics.get(Task.LANGUAGE)
        right = r.right_hemisphere_eloquent(Task.LANGUAGE)
        accuracy = None if metrics is None else metrics.eloquent_accuracy
        records.append(
            {
                "record": "patient",
                "patient_id": r.patient_id,
                "language_eloquent_accuracy": accuracy,
                "right_hemisphere_detected": bool(right),
                "right_hemisphere_regions": right,
            }
        )
        shown = "n/a" if accuracy is None else f"{accuracy:.3f}"
        rows.append([r.patient_id, shown, "yes" if right else "no"])

    summary = summarize([r.metrics.get(Task.LANGUAGE) for r in results])
    detected = sum(rec["right_hemisphere_detected"] for rec in records)
    records.append(
        {
            "record": "summary",
            "patients": len(records),
            "right_hemisphere_detected": detected,
            "mean_language_eloquent_accuracy": (
                None if summary is None else summary.eloquent_accuracy
            ),
        }
    )
    fileio.write_jsonl(out / "bilateral.jsonl", records)
    _write_attention(out, results)
    write_manifest(
        out,
        "bilateral",
        run,
        run.train.seed,
        inputs=[cohort] + ([config] if config else []),
        outputs=["bilateral.jsonl", "attention/"],
        started=started,
    )
    click.echo(
        tabulate(
            rows,
            headers=["Patient", "Language acc.", "Right hemisphere"],
            tablefmt="fancy_grid",
        )
    )
    click.echo(
        f"✅ Right-hemisphere language found in {detected}/{len(test_set)} patients"
    )


@main.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("patient", type=click.Path(dir_okay=False))
@out_option
@handle_errors
def predict(checkpoint, patient, out):
    """Label every region of PATIENT with the network in CHECKPOINT.

    The window settings stored in the checkpoint are used; scans of any
    length with at least one window are accepted.
    """
    started = timestamp()
    out = Path(out)
    state, window = fileio.read_checkpoint(Path(checkpoint))
    p = fileio.read_patient(Path(patient))
    cfg = state.config
    if p.regions != cfg.regions:
        raise DimensionError(
            f"Patient has {p.regions} regions, checkpoint expects {cfg.regions}"
        )

    connectivity = prepare_connectivity(p.time_series, window, p.mask, cfg.variant)
    r = evaluate_patient(state, cfg, p.patient_id, connectivity, p.labels)
    fileio.write_jsonl(out / "predictions.jsonl", [r.as_record()])
    fileio.write_attention(
        out / "attention.tsv", r.attention_language, r.attention_motor
    )

    model = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "regions"}
    run = RunConfig(window=window, model=model)
    write_manifest(
        out,
        "predict",
        run,
        seed=None,
        inputs=[checkpoint, patient],
        outputs=["predictions.jsonl", "attention.tsv"],
        started=started,
        sections=("window", "model"),
    )
    rows = [
        [str(t), int(np.sum(r.predictions[t] == 0)), len(r.predictions[t])]
        for t in cfg.heads
    ]
    click.echo(
        tabulate(rows, headers=["Task", "Eloquent", "Regions"], tablefmt="fancy_grid")
    )


@main.command()
@click.argument("cohort", type=click.Path(file_okay=False))
@config_option
@seed_option
@click.option(
    "--seeds", default=3, type=click.IntRange(min=1), help="Seeds per variant"
)
@click.option(
    "--variant",
    "variants",
    multiple=True,
    type=click.Choice(VARIANTS),
    help="Variants to compare (default: all)",
)
@loss_mode_option
@folds_option
@out_option
@handle_errors
def compare(cohort, config, seed, seeds, variants, loss_mode, folds, out):
    """Cross-validate several variants over several seeds on COHORT.

    Reports the mean and standard deviation of the language AUC across
    seeds for every variant.
    """
    started = timestamp()
    base = load_config(config, seed, None, loss_mode, folds)
    out = Path(out)
    patients = _read_cohort(cohort)
    variants = [Variant(v) for v in (variants or VARIANTS)]
    seed_list = [base.train.seed + k for k in range(seeds)]

    records, rows = [], []
    for variant in variants:
        mcfg = base.model_config(patients[0].regions, variant=variant)
        samples = make_samples(patients, base.window, variant)
        aucs = []
        for s in seed_list:
            click.echo(f"🔁 {variant}, seed {s}")
            train_cfg = _replace_train(base.train, {"seed": s})
            report = cross_validate(samples, train_cfg, mcfg)
            language = report.summary.get(Task.LANGUAGE)
            auc = None if language is None else language.auc
            aucs.append(auc)
            records.append(
                {
                    "record": "run",
                    "variant": str(variant),
                    "seed": s,
                    "language_auc": auc,
                }
            )
        defined = [a for a in aucs if a is not None]
        mean = float(np.mean(defined)) if defined else None
        std = float(np.std(defined)) if defined else None
        records.append(
            {
                "record": "summary",
                "variant": str(variant),
                "language_auc_mean": mean,
                "language_auc_std": std,
                "seeds": len(defined),
            }
        )
        rows.append(
            [
                str(variant),
                "n/a" if mean is None else f"{mean:.3f}",
                "n/a" if std is None else f"{std:.3f}",
                len(defined),
            ]
        )

    fileio.write_jsonl(out / "compare.jsonl", records)
    write_manifest(
        out,
        "compare",
        base,
        base.train.seed,
        inputs=[cohort] + ([config] if config else []),
        outputs=["compare.jsonl"],
        started=started,
        extra={"variants": ",".join(str(v) for v in variants), "seeds": seeds},
    )
    click.echo(
        tabulate(
            rows,
            headers=["Variant", "Language AUC", "Std", "Seeds"],
            tablefmt="fancy_grid",
        )
    )


@main.command()
@config_option
@click.option("--regions", type=click.IntRange(min=2), help="Region count N")
@variant_option
@handle_errors
def info(config, regions, variant):
    """Show the parameter count per layer group of each variant."""
    run = load_config(config)
    regions = regions or run.synth.regions
    chosen = [Variant(variant)] if variant else list(Variant)
    for v in chosen:
        state = build_variant(
            run.model_config(regions, variant=v), np.random.default_rng(0)
        )
        click.echo(f"📦 {v} (N={regions})")
        click.echo(parameter_table(state))
