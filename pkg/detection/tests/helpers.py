import numpy as np

from detection.cadgmm_model import ModelConfig
from detection.dataset_io import LabeledDataset, SplitTag, normalize, split_train_test


def tiny_config(**overrides):
    """Small architecture used across the numerical tests"""
    values = dict(
        input_dim=6, encoder_dims=(5, 4), graph_dim=4, latent_dim=2,
        decoder_dims=(4,), estimator_dims=(5,), n_components=2, k=3,
    )
    values.update(overrides)
    return ModelConfig(**values)


def two_cluster_features(n, n_features=6, seed=0):
    """Normals drawn around two centres in [0, 1]"""
    rng = np.random.default_rng(seed)
    centres = np.array([np.full(n_features, 0.25), np.full(n_features, 0.75)])
    assignment = rng.integers(0, 2, size=n)
    return np.clip(centres[assignment] + 0.05 * rng.standard_normal((n, n_features)), 0.0, 1.0)


def synthetic_dataset(n_normal=120, n_anomaly=30, n_features=6, seed=0, prepared=True):
    """Two normal clusters plus uniform anomalies; split and normalized unless prepared=False"""
    rng = np.random.default_rng(seed + 1)
    normal = two_cluster_features(n_normal, n_features, seed)
    anomalies = rng.uniform(0.0, 1.0, size=(n_anomaly, n_features))
    features = np.vstack([normal, anomalies])
    labels = np.concatenate([np.zeros(n_normal), np.ones(n_anomaly)]).astype(np.int8)
    dataset = LabeledDataset(
        name="synthetic",
        features=features,
        labels=labels,
        split=np.full(len(labels), SplitTag.UNASSIGNED, dtype=np.int8),
    )
    if not prepared:
        return dataset
    return normalize(split_train_test(dataset, seed))


def write_csv(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(",".join(str(value) for value in row) + "\n")
