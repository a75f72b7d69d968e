"""
RunConfig: the INI file every command reads, validated section by section.

Command-line overrides are applied before validation, and the validated
result (presets expanded, defaults filled in) is the effective config that
gets echoed into checkpoints, logs and reports.
"""
import configparser
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

from .cadgmm_model import ModelConfig
from .checkpoint import canonical_json
from .evaluator import EvalOptions
from .exceptions import ConfigError
from .serializers import SECTION_SERIALIZERS
from .trainer import LossWeights, TrainConfig

logger = logging.getLogger(__name__)

REQUIRED_SECTIONS = ("dataset", "model", "output")


@dataclass(frozen=True)
class RunConfig:
    source: Path
    cache: Path
    recipe: Path
    split_seed: int
    train: TrainConfig
    eval: EvalOptions
    seeds: tuple
    export_sample: int
    noise_seed: int
    output_dir: Path
    effective: dict
    fingerprint: str

    @property
    def model(self):
        return self.train.model


def config_fingerprint(effective):
    return hashlib.sha256(canonical_json(effective).encode("utf-8")).hexdigest()


def _read_sections(path):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except FileNotFoundError:
        raise ConfigError({"config": f"file not found: {path}"}) from None
    except configparser.Error as e:
        raise ConfigError({"config": f"{path}: {e}"}) from None
    unknown = sorted(set(parser.sections()) - set(SECTION_SERIALIZERS))
    if unknown:
        raise ConfigError({section: "Unknown section" for section in unknown})
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _validate(sections):
    validated, errors = {}, {}
    for name, serializer_class in SECTION_SERIALIZERS.items():
        if name not in sections and name in REQUIRED_SECTIONS:
            errors[name] = "Missing section"
            continue
        serializer = serializer_class(data=sections.get(name, {}))
        if serializer.is_valid():
            validated[name] = _plain(serializer.validated_data)
        else:
            errors[name] = serializer.errors
    if errors:
        raise ConfigError(errors)
    return validated


def _plain(data):
    return {key: list(value) if isinstance(value, (list, tuple)) else value for key, value in data.items()}


def _resolve(value, base):
    path = Path(value).expanduser()
    return path if path.is_absolute() else base / path


def load_run_config(path, overrides=None, output_root=None, require_cache=True):
    """
    Read, override and validate a RunConfig.

    ``overrides`` maps section -> {key: value}; None values are ignored.
    The recipe path resolves against the config file's folder; the cache and
    the output directory resolve against ``output_root``.
    """
    path = Path(path)
    sections = _read_sections(path)
    for section, values in (overrides or {}).items():
        for key, value in values.items():
            if value is not None:
                sections.setdefault(section, {})[key] = value
    effective = _validate(sections)

    model = effective["model"]
    train = effective["train"]
    if train["batch_size"] <= model["k"]:
        raise ConfigError({"train": {"batch_size": f"{train['batch_size']} must exceed k={model['k']}"}})
    eval_section = effective["eval"]
    if eval_section.get("batch_size") is not None and eval_section["batch_size"] <= model["k"]:
        raise ConfigError({"eval": {"batch_size": f"{eval_section['batch_size']} must exceed k={model['k']}"}})

    base = path.resolve().parent
    root = Path(output_root) if output_root else base
    cache = _resolve(effective["dataset"]["cache"], root)
    recipe = _resolve(effective["dataset"]["recipe"], base) if "recipe" in effective["dataset"] else None
    if require_cache and not cache.exists():
        raise ConfigError({"dataset": {"cache": f"not found: {cache} (run prepare first)"}})
    if recipe is not None and not recipe.exists():
        raise ConfigError({"dataset": {"recipe": f"not found: {recipe}"}})
    output_dir = _resolve(effective["output"]["dir"], root)
    if output_dir.exists() and not output_dir.is_dir():
        raise ConfigError({"output": {"dir": f"not a directory: {output_dir}"}})

    train_config = TrainConfig(
        model=ModelConfig(**model),
        weights=LossWeights(**effective["loss"]),
        **train,
    )
    options = EvalOptions(
        batch_size=eval_section.get("batch_size") or train["batch_size"],
        threshold_ratio=eval_section.get("threshold_ratio"),
        threshold_energy=eval_section.get("threshold_energy"),
    )
    fingerprint = config_fingerprint(effective)
    logger.info("loaded run config %s (fingerprint %s)", path, fingerprint[:12])
    return RunConfig(
        source=path,
        cache=cache,
        recipe=recipe,
        split_seed=effective["dataset"]["split_seed"],
        train=train_config,
        eval=options,
        seeds=tuple(eval_section["seeds"]),
        export_sample=eval_section.get("export_sample"),
        noise_seed=eval_section["noise_seed"],
        output_dir=output_dir,
        effective=effective,
        fingerprint=fingerprint,
    )
