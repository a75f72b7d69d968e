from django.core.management.base import CommandError

from detection.checkpoint import load_checkpoint
from detection.dataset_io import load_dataset_cache
from detection.evaluator import EvalOptions, evaluate, export_embeddings, write_scores
from detection.recording import record_evaluation
from detection.run_config import config_fingerprint
from ._base import DetectionCommand

"""
Score the test split of a cache with a trained checkpoint

Usage:
    python manage.py eval runs/satellite/checkpoint.ckpt satellite.cache --threshold-ratio 0.32
    python manage.py eval runs/kdd99/checkpoint.ckpt kdd99.cache --export-embeddings kdd99_z.csv --export-sample 40000
"""


class Command(DetectionCommand):
    help = "Evaluate a checkpoint on the test split: energies, threshold, precision/recall/F1"

    def add_arguments(self, parser):
        parser.add_argument('checkpoint', type=str, help='Checkpoint written by train')
        parser.add_argument('cache', type=str, help='Encoded dataset cache the checkpoint was trained on')
        threshold = parser.add_mutually_exclusive_group()
        threshold.add_argument(
            '--threshold-ratio',
            type=float,
            default=None,
            help='Flag this fraction of highest energies (default: dataset anomaly ratio)'
        )
        threshold.add_argument('--threshold-energy', type=float, default=None, help='Flag energies >= this value')
        parser.add_argument('--batch-size', type=int, default=None, help='Scoring batch size (default: training batch size)')
        parser.add_argument('--report', type=str, default=None, help='Metrics report JSON (default: next to the checkpoint)')
        parser.add_argument('--scores', type=str, default=None, help='Also write per-row energies and predictions as CSV')
        parser.add_argument('--export-embeddings', type=str, default=None, help='Also write z columns, energy and label as CSV')
        parser.add_argument('--export-sample', type=int, default=None, help='Random test rows to export (default: all)')
        parser.add_argument('--record', action='store_true', help='Upsert the result into the database')

    def run(self, **options):
        checkpoint_path = self.resolve_output(options['checkpoint'])
        checkpoint = load_checkpoint(checkpoint_path)
        dataset, meta = load_dataset_cache(self.resolve_output(options['cache']))
        if checkpoint.dataset_fingerprint != meta['fingerprint']:
            raise CommandError(
                f"checkpoint was trained on dataset {checkpoint.dataset_fingerprint[:12]}, "
                f"cache holds {meta['fingerprint'][:12]}"
            )
        if checkpoint.gmm is None:
            raise CommandError(f"{checkpoint_path} is an intermediate checkpoint without a frozen mixture")

        effective = checkpoint.effective_config
        eval_config = effective.get('eval', {})
        batch_size = options['batch_size'] or eval_config.get('batch_size') or effective['train']['batch_size']
        threshold_ratio = options['threshold_ratio']
        threshold_energy = options['threshold_energy']
        if threshold_ratio is None and threshold_energy is None:
            threshold_ratio = eval_config.get('threshold_ratio')
            threshold_energy = eval_config.get('threshold_energy')
        evaluation = {
            'batch_size': batch_size,
            'threshold_ratio': threshold_ratio,
            'threshold_energy': threshold_energy,
        }
        eval_options = EvalOptions(workers=self.detection_settings['SCORING_WORKERS'], **evaluation)
        fingerprint = config_fingerprint(effective)

        self.heading(f"\n Evaluating {dataset.name} ({len(dataset.test_indices)} test rows)...")
        report = evaluate(dataset, checkpoint.params, checkpoint.gmm, checkpoint.config, eval_options, fingerprint, checkpoint.seed)

        report_path = self.resolve_output(options['report']) if options['report'] else checkpoint_path.with_suffix('.eval.json')
        self.write_json(report_path, {
            'dataset': dataset.name,
            'dataset_fingerprint': meta['fingerprint'],
            'checkpoint': str(checkpoint_path),
            'evaluation': evaluation,
            'effective_config': effective,
            **report.to_dict(),
        })
        if options['scores']:
            write_scores(self.resolve_output(options['scores']), report, rows=dataset.test_indices)
        if options['export_embeddings']:
            export_embeddings(
                self.resolve_output(options['export_embeddings']),
                dataset, checkpoint.params, checkpoint.gmm, checkpoint.config, batch_size,
                sample=options['export_sample'], seed=checkpoint.seed,
                workers=self.detection_settings['SCORING_WORKERS'],
            )
        if options['record']:
            run = record_evaluation(dataset.name, report, effective)
            self.stdout.write(f"recorded as run {run.pk}")

        metrics = report.metrics
        self.success(
            f"precision {metrics.precision:.4f} recall {metrics.recall:.4f} f1 {metrics.f1:.4f} "
            f"(threshold {report.threshold:.6g}, {int(report.predictions.sum())} flagged)"
        )
        if metrics.zero_division:
            self.stdout.write(self.style.WARNING("a metric denominator was zero; that metric is reported as 0"))
        self.stdout.write(f"report {report_path}")
