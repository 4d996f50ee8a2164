from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Dataset:
    """Features in [0, 1] with one-hot labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise DomainError("features and labels disagree on sample count")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.features[idx], self.labels[idx])

    @staticmethod
    def concat(*parts: "Dataset") -> "Dataset":
        return Dataset(np.concatenate([p.features for p in parts]),
                       np.concatenate([p.labels for p in parts]))


def one_hot(classes, n_classes: int) -> np.ndarray:
    classes = np.asarray(classes, dtype=int)
    out = np.zeros((classes.size, n_classes))
    out[np.arange(classes.size), classes] = 1.0
    return out


class HoldoutSet:
    """Test data that counts every read, so leakage into tuning is observable."""

    def __init__(self, dataset: Dataset):
        self._dataset = dataset
        self.reads = 0

    def __len__(self) -> int:
        return len(self._dataset)

    def reveal(self) -> Dataset:
        self.reads += 1
        return self._dataset


def load_demo_digits() -> Dataset:
    """The bundled 8x8 handwritten digits (1797 samples, 64 features, 10 classes)."""
    path = resources.files("hptune") / "data" / "digits8x8.npz"
    try:
        with resources.as_file(path) as p, np.load(p) as npz:
            pixels, labels = npz["pixels"], npz["labels"]
    except FileNotFoundError as exc:
        raise RuntimeError(f"bundled digits data missing: {path}") from exc
    return Dataset(pixels.astype(float) / 16.0, one_hot(labels, 10))
