"""Synthetic two-class datasets and the feature CSV format (``f1..fd,label``)."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean(axis=0)) / x.std(axis=0)


def two_gaussians(n: int = 500, seed: int = 0, sep: float = 2.0):
    rng = np.random.default_rng([seed, 11])
    labels = rng.integers(0, 2, size=n)
    centers = np.array([[-sep / 2, 0.0], [sep / 2, 0.0]])
    x = centers[labels] + rng.normal(size=(n, 2))
    return _standardize(x), labels


def xor(n: int = 500, seed: int = 0, noise: float = 0.1):
    rng = np.random.default_rng([seed, 12])
    x = rng.uniform(-1.0, 1.0, size=(n, 2))
    labels = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(np.int64)
    x = x + rng.normal(scale=noise, size=x.shape)
    return _standardize(x), labels


def two_moons(n: int = 500, seed: int = 0, noise: float = 0.1):
    rng = np.random.default_rng([seed, 13])
    labels = rng.integers(0, 2, size=n)
    t = rng.uniform(0.0, np.pi, size=n)
    x = np.where(
        labels[:, None] == 0,
        np.stack([np.cos(t), np.sin(t)], axis=1),
        np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1),
    )
    x = x + rng.normal(scale=noise, size=x.shape)
    return _standardize(x), labels


GENERATORS = {"gaussians": two_gaussians, "xor": xor, "moons": two_moons}


def save_csv(path, x: np.ndarray, labels: np.ndarray):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i + 1}" for i in range(x.shape[1])] + ["label"])
        for row, lab in zip(x, labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def load_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "label" or any(h != f"f{i + 1}" for i, h in enumerate(header[:-1])):
            raise ValueError(f"expected header f1..fd,label, got {header}")
        rows = [r for r in reader if r]
    x = np.array([[float(v) for v in r[:-1]] for r in rows])
    labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return x, labels


def make_dataset(spec: str = "moons", n: int = 500, seed: int = 0):
    """``spec`` is a generator name or ``csv:PATH``."""
    if spec.startswith("csv:"):
        return load_csv(spec[4:])
    try:
        return GENERATORS[spec](n, seed)
    except KeyError:
        raise ValueError(f"unknown dataset {spec!r}; choose from {sorted(GENERATORS)} or csv:PATH") from None
