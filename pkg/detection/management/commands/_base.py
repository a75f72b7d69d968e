import argparse
import json
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from detection.exceptions import DetectionError

"""
Shared plumbing for the prepare / train / eval / sweep commands
"""


class DetectionCommand(BaseCommand):
    """
    Runs ``run()`` and turns any DetectionError into a CommandError,
    so failures print one readable line and exit nonzero.
    """

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except DetectionError as e:
            raise CommandError(str(e)) from e

    def run(self, **options):
        raise NotImplementedError

    @property
    def detection_settings(self):
        return settings.DETECTION

    def output_root(self):
        return Path(self.detection_settings['OUTPUT_ROOT'])

    def resolve_output(self, path):
        path = Path(path).expanduser()
        return path if path.is_absolute() else self.output_root() / path

    def heading(self, message):
        self.stdout.write(self.style.MIGRATE_HEADING(message))

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))

    def write_json(self, path, data):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, default=_jsonable)
            f.write("\n")
        return path


def _jsonable(value):
    if hasattr(value, "item"):
        return value.item()
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def int_list(text):
    """
    ``5,7,9`` or ``5..19:2`` (inclusive range, optional step)
    """
    values = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        try:
            if ".." in token:
                bounds, _, step = token.partition(":")
                start, stop = (int(b) for b in bounds.split(".."))
                step = int(step) if step else 1
                if step < 1 or stop < start:
                    raise ValueError
                values.extend(range(start, stop + 1, step))
            else:
                values.append(int(token))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad integer list item {token!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("the list is empty")
    return values


def percent_list(text):
    """
    ``1,2,3`` read as percentages: [0.01, 0.02, 0.03]
    """
    values = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        try:
            value = float(token)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad percentage {token!r}") from None
        if not 0.0 <= value < 100.0:
            raise argparse.ArgumentTypeError(f"percentage {token} must be in [0, 100)")
        values.append(value / 100.0)
    if not values:
        raise argparse.ArgumentTypeError("the list is empty")
    return values
