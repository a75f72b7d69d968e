from pathlib import Path

from detection.dataset_io import (
    DatasetRecipe, load_and_encode, normalize, save_dataset_cache, split_train_test,
)
from ._base import DetectionCommand

"""
Encode a benchmark dataset into a cache the other commands read

Usage:
    python manage.py prepare detection/presets/kdd99.recipe kdd99.cache --seed 0
"""


class Command(DetectionCommand):
    help = "Parse, encode, split and normalize a dataset recipe into an encoded cache"

    def add_arguments(self, parser):
        parser.add_argument('recipe', type=str, help='Dataset recipe file ([recipe] INI section)')
        parser.add_argument('out', type=str, help='Cache file to write; relative paths go under CADGMM_OUTPUT_ROOT')
        parser.add_argument('--seed', type=int, default=0, help='Train/test split seed')
        parser.add_argument(
            '--data-root',
            type=str,
            default=None,
            help='Folder holding the recipe sources (default: CADGMM_DATA_ROOT, else the recipe folder)'
        )

    def run(self, **options):
        data_root = options['data_root'] or self.detection_settings.get('DATA_ROOT')
        recipe = DatasetRecipe.from_file(options['recipe'], data_root=data_root)
        out = self.resolve_output(options['out'])
        out.parent.mkdir(parents=True, exist_ok=True)

        self.heading(f"\n Preparing {recipe.name}...")
        dataset = load_and_encode(recipe)
        dataset = split_train_test(dataset, options['seed'])
        dataset = normalize(dataset)
        meta = save_dataset_cache(out, dataset, recipe, options['seed'])
        self.write_json(Path(f"{out}.recipe.json"), {"recipe": recipe.to_dict(), "split_seed": options['seed']})

        self.success(
            f"{recipe.name}: N={meta['n_rows']} F={meta['n_features']} "
            f"anomaly ratio {meta['anomaly_ratio']:.4f}"
        )
        self.stdout.write(f"cache {out} (fingerprint {meta['fingerprint']})")
