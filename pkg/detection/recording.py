"""
Upserts of evaluation and experiment reports into ExperimentRun / SeedResult
"""
import logging
import math

from django.db import transaction

from .models import ExperimentRun, SeedResult

logger = logging.getLogger(__name__)


def _number(value):
    return None if value is None or not math.isfinite(value) else value


def _status(n_failed, n_total):
    if n_failed == 0:
        return "ok"
    return "failed" if n_failed == n_total else "partial"


@transaction.atomic
def record_experiment(report, kind, effective_config):
    """Store one ExperimentReport; rerunning the same setting updates the existing rows"""
    run, created = ExperimentRun.objects.update_or_create(
        config_fingerprint=report.fingerprint,
        kind=kind,
        setting=report.setting,
        defaults={
            "dataset": report.dataset,
            "effective_config": effective_config,
            "precision": _number(report.mean("precision")),
            "recall": _number(report.mean("recall")),
            "f1": _number(report.mean("f1")),
            "status": _status(len(report.failed), len(report.outcomes)),
        },
    )
    for outcome in report.outcomes:
        metrics = outcome.metrics
        SeedResult.objects.update_or_create(
            run=run,
            seed=outcome.seed,
            defaults={
                "status": outcome.status,
                "precision": metrics.precision if metrics else None,
                "recall": metrics.recall if metrics else None,
                "f1": metrics.f1 if metrics else None,
                "threshold": _number(outcome.threshold),
                "error": outcome.error,
            },
        )
    run.seed_results.exclude(seed__in=[o.seed for o in report.outcomes]).delete()
    logger.info("%s run %s %s (%s)", "recorded" if created else "updated", run.pk, run, report.setting or kind)
    return run


@transaction.atomic
def record_evaluation(dataset, report, effective_config):
    """Store a single ScoreReport as an ``eval`` run with one seed result"""
    metrics = report.metrics
    run, _ = ExperimentRun.objects.update_or_create(
        config_fingerprint=report.fingerprint,
        kind="eval",
        setting=f"seed={report.seed}",
        defaults={
            "dataset": dataset,
            "effective_config": effective_config,
            "precision": metrics.precision,
            "recall": metrics.recall,
            "f1": metrics.f1,
            "status": "ok",
        },
    )
    SeedResult.objects.update_or_create(
        run=run,
        seed=report.seed,
        defaults={
            "status": "ok",
            "precision": metrics.precision,
            "recall": metrics.recall,
            "f1": metrics.f1,
            "threshold": _number(report.threshold),
            "error": "",
        },
    )
    return run
