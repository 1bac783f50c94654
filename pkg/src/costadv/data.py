"""Synthetic Gaussian-cluster classification data in the unit hypercube."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class DatasetParams:
    k: int = 10
    d: int = 8
    n_train: int = 6000
    n_val: int = 1000
    n_test: int = 2000
    noise: float = 0.13
    clusters_per_class: int = 2
    center_margin: float = 0.2
    seed: int = 0

    def __post_init__(self):
        n = self.n_train + self.n_val + self.n_test
        if self.k < 2 or self.d < 1 or self.clusters_per_class < 1:
            raise ValidationError("need k >= 2, d >= 1 and at least one cluster per class")
        if min(self.n_train, self.n_val, self.n_test) < 0 or n < self.k:
            raise ValidationError(f"need non-negative split sizes totalling at least k={self.k}")
        if self.noise < 0 or not 0 <= self.center_margin < 0.5:
            raise ValidationError("noise must be >= 0 and center_margin in [0, 0.5)")


@dataclass
class SyntheticDataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: np.ndarray  # "train" / "val" / "test" per row
    centers: np.ndarray  # (k, clusters_per_class, d), indexed by final label
    params: DatasetParams

    def part(self, name: str):
        mask = self.split == name
        return self.inputs[mask], self.labels[mask]

    def save(self, path):
        np.savez(path, inputs=self.inputs, labels=self.labels, split=self.split,
                 centers=self.centers, params=np.array([repr(asdict(self.params))]))

    @classmethod
    def load(cls, path) -> "SyntheticDataset":
        import ast

        try:
            with np.load(path, allow_pickle=False) as f:
                params = DatasetParams(**ast.literal_eval(str(f["params"][0])))
                return cls(f["inputs"], f["labels"], f["split"], f["centers"], params)
        except (OSError, KeyError, ValueError, SyntaxError) as exc:
            raise ValidationError(f"{path}: not a dataset file ({exc})") from None


def generate_dataset(params: DatasetParams) -> SyntheticDataset:
    """Balanced Gaussian clusters, clipped to [0, 1]^d, split train/val/test.

    Cluster groups are laid out first and then handed to class labels through
    a seeded permutation, so label order carries no geometric meaning.
    """
    p = params
    rng = np.random.default_rng(p.seed)
    n = p.n_train + p.n_val + p.n_test
    centers = rng.uniform(p.center_margin, 1 - p.center_margin, size=(p.k, p.clusters_per_class, p.d))
    relabel = rng.permutation(p.k)
    centers_by_label = np.empty_like(centers)
    centers_by_label[relabel] = centers

    labels = rng.permutation(np.arange(n) % p.k)
    which = rng.integers(p.clusters_per_class, size=n)
    raw = centers_by_label[labels, which] + p.noise * rng.standard_normal((n, p.d))
    clipped = np.mean((raw < 0) | (raw > 1))
    if clipped > 0.25:
        warnings.warn(f"{clipped:.0%} of coordinates were clipped to the unit box; noise={p.noise} is too large",
                      RuntimeWarning, stacklevel=2)
    inputs = np.clip(raw, 0.0, 1.0)
    split = np.array(["train"] * p.n_train + ["val"] * p.n_val + ["test"] * p.n_test)
    return SyntheticDataset(inputs, labels, split, centers_by_label, p)
