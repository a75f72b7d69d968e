"""
Versioned container files for model checkpoints and encoded dataset caches.

A container is a zip archive holding ``HEADER.json`` (format name, version,
kind, byte order), ``META.json`` (free-form JSON metadata) and one ``.npy``
member per array, written little-endian. Member timestamps are fixed so the
same content always produces the same bytes.
"""
import hashlib
import io
import json
import logging
import zipfile
from dataclasses import dataclass

import numpy as np

from .cadgmm_model import GmmState, ModelConfig, ParamStore
from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

FORMAT_NAME = "cadgmm-container"
FORMAT_VERSION = 1
FIXED_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


def _little_endian(array):
    array = np.asarray(array)
    if array.dtype.kind == "f":
        return array.astype("<f8", copy=False)
    if array.dtype.kind in "iub":
        return array.astype("<i8", copy=False)
    raise CheckpointError(f"unsupported array dtype {array.dtype}")


def _member(name):
    info = zipfile.ZipInfo(name, date_time=FIXED_TIMESTAMP)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def write_container(path, kind, arrays, meta):
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": kind,
        "byte_order": "little",
        "arrays": sorted(arrays),
    }
    with zipfile.ZipFile(path, "w") as archive:
        archive.writestr(_member("HEADER.json"), canonical_json(header))
        archive.writestr(_member("META.json"), canonical_json(meta))
        for name in sorted(arrays):
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, _little_endian(arrays[name]), allow_pickle=False)
            archive.writestr(_member(f"{name}.npy"), buffer.getvalue())
    logger.info("wrote %s container %s (%d arrays)", kind, path, len(arrays))


def read_container(path, kind):
    try:
        archive = zipfile.ZipFile(path, "r")
    except FileNotFoundError:
        raise CheckpointError(f"container not found: {path}") from None
    except zipfile.BadZipFile:
        raise CheckpointError(f"not a container file: {path}") from None
    with archive:
        try:
            header = json.loads(archive.read("HEADER.json"))
            meta = json.loads(archive.read("META.json"))
        except KeyError as e:
            raise CheckpointError(f"{path}: missing container member {e}") from None
        if header.get("format") != FORMAT_NAME:
            raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported container version {header.get('version')}")
        if header.get("byte_order") != "little":
            raise CheckpointError(f"{path}: unsupported byte order {header.get('byte_order')}")
        if header.get("kind") != kind:
            raise CheckpointError(f"{path}: expected a {kind} container, found {header.get('kind')}")
        arrays = {}
        for name in header["arrays"]:
            with archive.open(f"{name}.npy") as member:
                arrays[name] = np.lib.format.read_array(io.BytesIO(member.read()), allow_pickle=False)
    return arrays, meta


def fingerprint_arrays(arrays):
    digest = hashlib.sha256()
    for name in sorted(arrays):
        array = _little_endian(arrays[name])
        digest.update(name.encode("utf-8"))
        digest.update(str(array.shape).encode("ascii"))
        digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()


# ==================== MODEL CHECKPOINTS ====================

@dataclass(frozen=True)
class Checkpoint:
    config: ModelConfig
    params: ParamStore
    gmm: GmmState
    normalization: dict
    seed: int
    dataset_fingerprint: str
    effective_config: dict
    iteration: int


def save_checkpoint(path, checkpoint):
    arrays = {f"param/{name}": values for name, values in checkpoint.params.arrays().items()}
    if checkpoint.gmm is not None:
        arrays.update({f"gmm/{name}": values for name, values in checkpoint.gmm.to_arrays().items()})
    arrays.update({f"norm/{name}": values for name, values in checkpoint.normalization.items()})
    meta = {
        "model_config": checkpoint.config.to_dict(),
        "seed": checkpoint.seed,
        "dataset_fingerprint": checkpoint.dataset_fingerprint,
        "effective_config": checkpoint.effective_config,
        "iteration": checkpoint.iteration,
        "has_gmm": checkpoint.gmm is not None,
        "param_shapes": {name: list(shape) for name, shape in checkpoint.params.shapes().items()},
    }
    write_container(path, "checkpoint", arrays, meta)


def load_checkpoint(path):
    arrays, meta = read_container(path, "checkpoint")
    config = ModelConfig.from_dict(meta["model_config"])

    def section(prefix):
        return {name[len(prefix):]: values for name, values in arrays.items() if name.startswith(prefix)}

    params = ParamStore.from_arrays(section("param/"))
    params.check(config)
    gmm = GmmState.from_arrays(section("gmm/"), config.epsilon) if meta["has_gmm"] else None
    return Checkpoint(
        config=config,
        params=params,
        gmm=gmm,
        normalization=section("norm/"),
        seed=meta["seed"],
        dataset_fingerprint=meta["dataset_fingerprint"],
        effective_config=meta["effective_config"],
        iteration=meta["iteration"],
    )
