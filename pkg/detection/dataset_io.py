"""
Benchmark dataset ingestion: CSV parsing, one-hot encoding, 50/50 split,
min-max normalization and anomaly injection for contamination studies.

KDD99 convention: rows labelled ``normal.`` in the source file are the
anomalies here. They are the 20% minority once the attack traffic is
treated as the normal class, which is the setting every published
comparison on this dataset uses.
"""
import configparser
import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np
import pandas as pd

from .checkpoint import fingerprint_arrays, read_container, write_container
from .exceptions import CheckpointError, DatasetError
from .numeric_core import SeededRng

logger = logging.getLogger(__name__)

WHITESPACE = "whitespace"


class SplitTag(IntEnum):
    UNASSIGNED = 0
    TRAIN = 1
    TEST = 2
    POOL = 3  # anomalies drawn into the training half, held out of the training stream
    INJECTED = 4  # pool rows put back into the training stream as contamination


# ==================== RECIPES ====================

@dataclass(frozen=True)
class DatasetRecipe:
    name: str
    sources: tuple
    label_column: int
    anomaly_labels: tuple
    categorical_columns: tuple = ()
    drop_columns: tuple = ()
    expected_features: int = None
    delimiter: str = ","
    header: bool = False
    missing_marker: str = "?"

    @classmethod
    def from_file(cls, path, data_root=None):
        """Read a ``[recipe]`` INI file; relative sources resolve against data_root or the recipe's folder"""
        from .serializers import RecipeSerializer

        path = Path(path)
        if not path.exists():
            raise DatasetError(f"recipe file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.read(path, encoding="utf-8")
        if not parser.has_section("recipe"):
            raise DatasetError(f"{path}: missing [recipe] section")
        serializer = RecipeSerializer(data=dict(parser.items("recipe")))
        if not serializer.is_valid():
            raise DatasetError(f"{path}: {serializer.errors}")
        data = serializer.validated_data
        base = Path(data_root) if data_root else path.parent
        sources = tuple(s if Path(s).is_absolute() else base / s for s in map(Path, data["sources"]))
        return cls(
            name=data["name"],
            sources=sources,
            label_column=data["label_column"],
            anomaly_labels=tuple(data["anomaly_labels"]),
            categorical_columns=tuple(data.get("categorical_columns", ())),
            drop_columns=tuple(data.get("drop_columns", ())),
            expected_features=data.get("expected_features"),
            delimiter=data.get("delimiter", ","),
            header=data.get("header", False),
            missing_marker=data.get("missing_marker", "?"),
        )

    def to_dict(self):
        return {
            "name": self.name,
            "sources": [str(s) for s in self.sources],
            "label_column": self.label_column,
            "anomaly_labels": list(self.anomaly_labels),
            "categorical_columns": list(self.categorical_columns),
            "drop_columns": list(self.drop_columns),
            "expected_features": self.expected_features,
            "delimiter": self.delimiter,
            "header": self.header,
            "missing_marker": self.missing_marker,
        }


# ==================== DATASET ====================

@dataclass(frozen=True)
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray
    fill: np.ndarray  # training-split column means used for missing values

    def to_arrays(self):
        return {"minimum": self.minimum, "maximum": self.maximum, "fill": self.fill}

    @classmethod
    def from_arrays(cls, arrays):
        return cls(arrays["minimum"], arrays["maximum"], arrays["fill"])

    def apply(self, features):
        features = np.where(np.isnan(features), self.fill, features)
        span = self.maximum - self.minimum
        constant = span <= 0.0
        scaled = (features - self.minimum) / np.where(constant, 1.0, span)
        scaled[:, constant] = 0.0
        return np.clip(scaled, 0.0, 1.0)


def _frozen(array):
    array = np.array(array)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class LabeledDataset:
    name: str
    features: np.ndarray  # N x F float64; NaN marks a missing value until normalize()
    labels: np.ndarray  # N, 1 = anomaly
    split: np.ndarray  # N SplitTag values
    feature_names: tuple = ()
    categories: dict = field(default_factory=dict)
    normalization: NormalizationStats = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if not np.isin(labels, (0, 1)).all():
            raise DatasetError("labels must be 0 or 1")
        if len(labels) != len(self.features) or len(self.split) != len(self.features):
            raise DatasetError(
                f"row counts differ: features {len(self.features)}, labels {len(labels)}, split {len(self.split)}"
            )
        object.__setattr__(self, "features", _frozen(np.asarray(self.features, dtype=np.float64)))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int8)))
        object.__setattr__(self, "split", _frozen(np.asarray(self.split, dtype=np.int8)))

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def anomaly_ratio(self):
        return float(self.labels.mean()) if self.n_rows else 0.0

    def rows_tagged(self, *tags):
        return np.flatnonzero(np.isin(self.split, [int(t) for t in tags]))

    @property
    def train_indices(self):
        """Training stream: normal training rows plus injected contamination"""
        return self.rows_tagged(SplitTag.TRAIN, SplitTag.INJECTED)

    @property
    def test_indices(self):
        return self.rows_tagged(SplitTag.TEST)

    def fingerprint(self):
        return fingerprint_arrays({"features": self.features, "labels": self.labels, "split": self.split})

    def with_split(self, split):
        return replace(self, split=split)


# ==================== LOADING ====================

def _read_rows(recipe):
    rows, origins = [], []
    width = None
    for source in recipe.sources:
        source = Path(source)
        if not source.exists():
            raise DatasetError(f"source file not found: {source}")
        with open(source, newline="", encoding="utf-8") as f:
            if recipe.delimiter == WHITESPACE:
                reader = (line.split() for line in f)
            else:
                reader = csv.reader(f, delimiter=recipe.delimiter)
            for line_number, row in enumerate(reader, 1):
                if recipe.header and line_number == 1:
                    continue
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if width is None:
                    width = len(row)
                if len(row) != width:
                    raise DatasetError(
                        f"{source}, line {line_number}: expected {width} fields, found {len(row)}"
                    )
                rows.append([value.strip() for value in row])
                origins.append((source.name, line_number))
    if not rows:
        raise DatasetError(f"no data rows in {[str(s) for s in recipe.sources]}")
    return pd.DataFrame(rows, dtype=str), origins


def _resolve(column, width):
    resolved = column % width if column < 0 else column
    if not 0 <= resolved < width:
        raise DatasetError(f"column {column} outside the {width} parsed columns")
    return resolved


def load_and_encode(recipe, categories=None):
    """
    Parse the recipe sources and one-hot encode categorical columns.

    Category order is first appearance in the file unless ``categories``
    (column -> ordered values from an earlier encoding) is given; values
    outside a known order encode as an all-zero block.
    """
    frame, origins = _read_rows(recipe)
    width = frame.shape[1]
    label_column = _resolve(recipe.label_column, width)
    categorical = {_resolve(c, width) for c in recipe.categorical_columns}
    dropped = {_resolve(c, width) for c in recipe.drop_columns}
    labels = frame[label_column].isin(recipe.anomaly_labels).to_numpy(dtype=np.int8)

    known = {str(k): list(v) for k, v in (categories or {}).items()}
    blocks, names = [], []
    for column in frame.columns:
        if column == label_column or column in dropped:
            continue
        values = frame[column]
        if column in categorical:
            order = known.setdefault(str(column), list(dict.fromkeys(values)))
            unknown = ~values.isin(order)
            if unknown.any():
                logger.warning(
                    "column %d: %d rows with unseen categories %s encoded as zeros",
                    column, int(unknown.sum()), sorted(set(values[unknown]))[:5],
                )
            dummies = pd.get_dummies(pd.Categorical(values, categories=order), dtype=np.float64)
            blocks.append(dummies.to_numpy())
            names.extend(f"c{column}={value}" for value in order)
        else:
            missing = values == recipe.missing_marker
            numeric = pd.to_numeric(values.where(~missing), errors="coerce")
            invalid = numeric.isna() & ~missing
            if invalid.any():
                row = int(np.flatnonzero(invalid.to_numpy())[0])
                source, line_number = origins[row]
                raise DatasetError(
                    f"{source}, line {line_number}: column {column} value {values.iloc[row]!r} is not numeric"
                )
            blocks.append(numeric.to_numpy(dtype=np.float64).reshape(-1, 1))
            names.append(f"c{column}")

    features = np.hstack(blocks)
    if recipe.expected_features and features.shape[1] != recipe.expected_features:
        raise DatasetError(
            f"{recipe.name}: encoding produced {features.shape[1]} features, "
            f"recipe expects {recipe.expected_features}"
        )
    logger.info(
        "%s: encoded %d rows into %d features (anomaly ratio %.4f)",
        recipe.name, features.shape[0], features.shape[1], labels.mean(),
    )
    return LabeledDataset(
        name=recipe.name,
        features=features,
        labels=labels,
        split=np.full(len(labels), SplitTag.UNASSIGNED, dtype=np.int8),
        feature_names=tuple(names),
        categories={k: known[k] for k in sorted(known, key=int) if int(k) in categorical},
    )


# ==================== SPLIT / NORMALIZE / INJECT ====================

def split_train_test(ds, seed):
    """Uniform 50/50 split; anomalies in the training half go to the held-out pool"""
    order = SeededRng(seed).spawn("split").permutation(ds.n_rows)
    n_train = ds.n_rows // 2
    split = np.full(ds.n_rows, SplitTag.TEST, dtype=np.int8)
    train = order[:n_train]
    split[train] = np.where(ds.labels[train] == 1, SplitTag.POOL, SplitTag.TRAIN)
    logger.info(
        "%s: split %d training normals, %d pooled anomalies, %d test rows",
        ds.name, int((split == SplitTag.TRAIN).sum()), int((split == SplitTag.POOL).sum()), ds.n_rows - n_train,
    )
    return ds.with_split(split)


def normalize(ds):
    """Min-max scale every column to [0, 1] with statistics from training rows; test values are clipped"""
    train = ds.train_indices
    if len(train) == 0:
        raise DatasetError(f"{ds.name}: normalize needs an assigned training split")
    reference = ds.features[train]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        fill = np.nanmean(reference, axis=0)
    fill = np.where(np.isnan(fill), 0.0, fill)
    imputed = np.where(np.isnan(reference), fill, reference)
    stats = NormalizationStats(
        minimum=imputed.min(axis=0), maximum=imputed.max(axis=0), fill=fill,
    )
    if np.isnan(ds.features).any():
        logger.info("%s: imputed %d missing values with training means", ds.name, int(np.isnan(ds.features).sum()))
    return replace(ds, features=stats.apply(ds.features), normalization=stats)


def inject_noise(ds, ratio, seed):
    """Move pooled anomalies into the training stream so they make up ``ratio`` of it"""
    if not 0.0 <= ratio < 1.0:
        raise DatasetError(f"contamination ratio must be in [0, 1), got {ratio}")
    split = np.array(ds.split)
    split[split == SplitTag.INJECTED] = SplitTag.POOL
    n_normal = int((split == SplitTag.TRAIN).sum())
    n_inject = int(round(ratio * n_normal / (1.0 - ratio)))
    pool = np.flatnonzero(split == SplitTag.POOL)
    if n_inject > len(pool):
        raise DatasetError(
            f"{ds.name}: ratio {ratio} needs {n_inject} anomalies for {n_normal} normals, "
            f"but the pool holds only {len(pool)}"
        )
    if n_inject:
        chosen = SeededRng(seed).spawn("inject").choice(pool, n_inject)
        split[chosen] = SplitTag.INJECTED
    logger.info("%s: injected %d anomalies into %d training normals", ds.name, n_inject, n_normal)
    return ds.with_split(split)


# ==================== CACHE ====================

def save_dataset_cache(path, ds, recipe=None, seed=None):
    if ds.normalization is None:
        raise DatasetError(f"{ds.name}: only normalized datasets are cached")
    arrays = {
        "features": ds.features,
        "labels": ds.labels,
        "split": ds.split,
        **{f"norm/{k}": v for k, v in ds.normalization.to_arrays().items()},
    }
    meta = {
        "name": ds.name,
        "recipe": recipe.to_dict() if recipe else None,
        "split_seed": seed,
        "feature_names": list(ds.feature_names),
        "categories": ds.categories,
        "fingerprint": ds.fingerprint(),
        "n_rows": ds.n_rows,
        "n_features": ds.n_features,
        "anomaly_ratio": ds.anomaly_ratio,
    }
    write_container(path, "dataset", arrays, meta)
    return meta


def load_dataset_cache(path):
    try:
        arrays, meta = read_container(path, "dataset")
    except CheckpointError as e:
        raise DatasetError(str(e)) from None
    stats = NormalizationStats.from_arrays(
        {k[len("norm/"):]: v for k, v in arrays.items() if k.startswith("norm/")}
    )
    ds = LabeledDataset(
        name=meta["name"],
        features=arrays["features"],
        labels=arrays["labels"],
        split=arrays["split"],
        feature_names=tuple(meta["feature_names"]),
        categories=meta["categories"],
        normalization=stats,
    )
    if ds.fingerprint() != meta["fingerprint"]:
        raise DatasetError(f"{path}: content does not match its recorded fingerprint")
    return ds, meta
