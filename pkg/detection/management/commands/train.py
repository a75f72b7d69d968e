from django.core.management.base import CommandError

from detection.checkpoint import Checkpoint, save_checkpoint
from detection.dataset_io import load_dataset_cache
from detection.run_config import load_run_config
from detection.trainer import train, write_training_log
from ._base import DetectionCommand

"""
Train CADGMM on the normal rows of a prepared cache

Usage:
    python manage.py train detection/presets/satellite.cfg --seed 7
    python manage.py train detection/presets/satellite.cfg --ablate-graph
"""


class Command(DetectionCommand):
    help = "Train a model from a run config; writes a checkpoint and the training log"

    def add_arguments(self, parser):
        parser.add_argument('config', type=str, help='Run config file')
        parser.add_argument('--seed', type=int, default=None, help='Overrides [train] seed')
        parser.add_argument('--iterations', type=int, default=None, help='Overrides [train] iterations')
        parser.add_argument('--batch-size', type=int, default=None, help='Overrides [train] batch_size')
        parser.add_argument('--learning-rate', type=float, default=None, help='Overrides [train] learning_rate')
        parser.add_argument('--checkpoint-every', type=int, default=None, help='Overrides [train] checkpoint_every')
        parser.add_argument('--k', type=int, default=None, help='Overrides [model] k')
        parser.add_argument(
            '--ablate-graph',
            action='store_true',
            help='Disable the graph branch (its output is all zeros)'
        )
        parser.add_argument('--out-dir', type=str, default=None, help='Overrides [output] dir')

    def run(self, **options):
        overrides = {
            'train': {
                'seed': options['seed'],
                'iterations': options['iterations'],
                'batch_size': options['batch_size'],
                'learning_rate': options['learning_rate'],
                'checkpoint_every': options['checkpoint_every'],
            },
            'model': {
                'k': options['k'],
                'ablate_graph': True if options['ablate_graph'] else None,
            },
            'output': {'dir': options['out_dir']},
        }
        run_config = load_run_config(options['config'], overrides, output_root=self.output_root())
        dataset, meta = load_dataset_cache(run_config.cache)
        cfg = run_config.train
        if dataset.n_features != cfg.model.input_dim:
            raise CommandError(
                f"cache {run_config.cache} has {dataset.n_features} features, "
                f"model expects {cfg.model.input_dim}"
            )
        out_dir = run_config.output_dir
        out_dir.mkdir(parents=True, exist_ok=True)

        def checkpoint(iteration, params, gmm=None):
            return Checkpoint(
                config=cfg.model,
                params=params,
                gmm=gmm,
                normalization=dataset.normalization.to_arrays(),
                seed=cfg.seed,
                dataset_fingerprint=meta['fingerprint'],
                effective_config=run_config.effective,
                iteration=iteration,
            )

        def on_checkpoint(iteration, params):
            path = out_dir / f"checkpoint-{iteration:06d}.ckpt"
            save_checkpoint(path, checkpoint(iteration, params))
            self.stdout.write(f"  intermediate checkpoint {path}")

        self.heading(
            f"\n Training {dataset.name}: {cfg.iterations} iterations, batch {cfg.batch_size}, "
            f"K={cfg.model.k}, M={cfg.model.n_components}, seed {cfg.seed}"
            + (" (graph branch ablated)" if cfg.model.ablate_graph else "")
        )
        result = train(
            dataset,
            cfg,
            on_checkpoint=on_checkpoint,
            log_every=self.detection_settings['LOG_EVERY'],
            workers=self.detection_settings['SCORING_WORKERS'],
        )

        checkpoint_path = out_dir / "checkpoint.ckpt"
        save_checkpoint(checkpoint_path, checkpoint(cfg.iterations, result.params, result.gmm))
        log_path = out_dir / "training_log.csv"
        write_training_log(log_path, result.log, run_config.effective)

        if result.skipped_steps:
            self.stdout.write(self.style.WARNING(f"{result.skipped_steps} steps were skipped (see log)"))
        final = result.log[-1]
        self.success(f"final loss {final['total']:.6f} (recon {final['recon']:.6f}, energy {final['energy']:.4f})")
        self.stdout.write(f"checkpoint {checkpoint_path}\nlog {log_path}")
