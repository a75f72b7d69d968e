from dataclasses import replace

from django.core.management.base import CommandError

from detection.dataset_io import load_dataset_cache
from detection.evaluator import SweepReport, k_sweep, noise_experiment, run_experiment
from detection.recording import record_experiment
from detection.run_config import load_run_config
from ._base import DetectionCommand, int_list, percent_list

"""
Multi-seed experiments: plain, over K values, or over training contamination

Usage:
    python manage.py sweep detection/presets/satellite.cfg --k-list 5..19:2 --seeds 0..9
    python manage.py sweep detection/presets/kdd99.cfg --noise-list 1,2,3,4,5 --record
    python manage.py sweep detection/presets/arrhythmia.cfg --seeds 0..9
"""


class Command(DetectionCommand):
    help = "Run train+eval for every seed of every setting and write a per-setting metrics table"

    def add_arguments(self, parser):
        parser.add_argument('config', type=str, help='Run config file')
        settings = parser.add_mutually_exclusive_group()
        settings.add_argument('--k-list', type=int_list, default=None, help='K values, e.g. 5..19:2 or 5,9,13')
        settings.add_argument('--noise-list', type=percent_list, default=None, help='Contamination percentages, e.g. 1,2,3,4,5')
        parser.add_argument('--seeds', type=int_list, default=None, help='Seeds (default: [eval] seeds)')
        parser.add_argument('--ablate-graph', action='store_true', help='Disable the graph branch (its output is all zeros)')
        parser.add_argument('--jobs', type=int, default=1, help='Seeds trained concurrently within a setting (default: 1)')
        parser.add_argument('--table', type=str, default=None, help='CSV table path (default: <output dir>/<kind>.csv)')
        parser.add_argument('--record', action='store_true', help='Upsert every setting into the database')

    def run(self, **options):
        overrides = {'model': {'ablate_graph': True if options['ablate_graph'] else None}}
        run_config = load_run_config(options['config'], overrides, output_root=self.output_root())
        dataset, _ = load_dataset_cache(run_config.cache)
        seeds = options['seeds'] or list(run_config.seeds)
        eval_options = replace(run_config.eval, workers=self.detection_settings['SCORING_WORKERS'])
        common = {
            'fingerprint': run_config.fingerprint,
            'log_every': self.detection_settings['LOG_EVERY'],
            'jobs': max(1, options['jobs']),
        }

        if options['k_list'] is not None:
            kind = 'k_sweep'
            self.heading(f"\n K sweep on {dataset.name}: K in {options['k_list']}, seeds {seeds}")
            sweep = k_sweep(dataset, run_config.train, options['k_list'], seeds, eval_options, **common)
        elif options['noise_list'] is not None:
            kind = 'noise'
            self.heading(f"\n Contamination sweep on {dataset.name}: ratios {options['noise_list']}, seeds {seeds}")
            sweep = noise_experiment(
                dataset, run_config.train, options['noise_list'], seeds, eval_options,
                injection_seed=run_config.noise_seed, **common,
            )
        else:
            kind = 'experiment'
            self.heading(f"\n Experiment on {dataset.name}: seeds {seeds}")
            sweep = SweepReport(kind, [run_experiment(dataset, run_config.train, seeds, eval_options, **common)])

        out_dir = run_config.output_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        table_path = self.resolve_output(options['table']) if options['table'] else out_dir / f"{kind}.csv"
        table = sweep.to_table()
        table.to_csv(table_path, index=False, float_format="%.6f")
        report_path = self.write_json(out_dir / f"{kind}.json", {
            'dataset': dataset.name,
            'config_fingerprint': run_config.fingerprint,
            'effective_config': run_config.effective,
            'seeds': seeds,
            **sweep.to_dict(),
        })

        if options['record']:
            for report in sweep.reports:
                record_experiment(report, kind, run_config.effective)

        self.stdout.write(table.to_string(index=False))
        if kind == 'k_sweep':
            self.stdout.write(f"mean F1 spread across K: {sweep.spread():.4f}")
        if kind == 'noise':
            self.stdout.write(f"mean F1 degradation, lowest to highest ratio: {sweep.degradation():.4f}")
        self.stdout.write(f"table {table_path}\nreport {report_path}")
        if sweep.failed:
            raise CommandError(f"{sweep.failed} seed runs failed; see {report_path}")
        self.success("all runs completed")
