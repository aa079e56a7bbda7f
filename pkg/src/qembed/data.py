"""Synthetic datasets, the label-shuffle corruption protocol and CSV IO."""

import csv
import json
import os
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

CLUSTER_RADIUS = 3.0


@dataclass
class Dataset:
    features: np.ndarray  # M x F
    noisy_labels: np.ndarray  # M x K binary
    clean_labels: Optional[np.ndarray] = None  # M x K binary, diagnostics only
    corruption_flags: Optional[np.ndarray] = None  # M booleans

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
        m = self.features.shape[0]
        if self.noisy_labels.shape[0] != m:
            raise ValueError("feature and label row counts disagree")
        if not np.all((self.noisy_labels == 0) | (self.noisy_labels == 1)):
            raise ValueError("noisy labels must be binary")
        if self.clean_labels is not None:
            self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
            if self.clean_labels.shape != self.noisy_labels.shape:
                raise ValueError("clean label shape mismatch")
            if np.any(self.clean_labels.sum(axis=1) < 1):
                raise ValueError("each clean-label row needs at least one positive")
        if self.corruption_flags is not None:
            self.corruption_flags = np.asarray(self.corruption_flags, dtype=bool)
            if self.corruption_flags.shape[0] != m:
                raise ValueError("corruption flag count mismatch")

    @property
    def n_items(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return self.noisy_labels.shape[1]


@dataclass
class NoiseConfig:
    p_noise: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_noise <= 1.0:
            raise ValueError("p_noise must be in [0, 1]")


def _class_means(k, f):
    """Cluster centers on a circle in the first two feature dimensions."""
    means = np.zeros((k, f))
    angles = 2.0 * np.pi * np.arange(k) / k
    means[:, 0] = CLUSTER_RADIUS * np.cos(angles)
    means[:, 1] = CLUSTER_RADIUS * np.sin(angles)
    return means


def gen_synthetic(k, f, per_class, spread, seed):
    """K Gaussian clusters with one-hot clean labels; deterministic per seed."""
    if k < 2 or f < 2:
        raise ValueError("need k >= 2 and f >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    gen = np.random.Generator(np.random.PCG64(int(seed)))
    means = _class_means(k, f)
    feats = np.repeat(means, per_class, axis=0) + spread * gen.standard_normal(
        (k * per_class, f)
    )
    labels = np.zeros((k * per_class, k), dtype=np.int64)
    labels[np.arange(k * per_class), np.repeat(np.arange(k), per_class)] = 1
    return Dataset(feats, labels.copy(), clean_labels=labels)


def gen_synthetic_multilabel(k, f, rows, spread, seed):
    """Two-hot rows: each item sits between two class centers."""
    if k < 2 or f < 2:
        raise ValueError("need k >= 2 and f >= 2")
    gen = np.random.Generator(np.random.PCG64(int(seed)))
    means = _class_means(k, f)
    labels = np.zeros((rows, k), dtype=np.int64)
    feats = np.empty((rows, f))
    for i in range(rows):
        a, b = gen.choice(k, size=2, replace=False)
        labels[i, a] = labels[i, b] = 1
        feats[i] = 0.5 * (means[a] + means[b]) + spread * gen.standard_normal(f)
    return Dataset(feats, labels.copy(), clean_labels=labels)


def corrupt_labels(ds, cfg):
    """With probability p_noise, shuffle each clean label vector's elements.

    The drawn permutation may coincide with the identity; the flag records
    that a shuffle was drawn, not that the row changed.
    """
    if ds.clean_labels is None:
        raise ValueError("corrupt_labels needs clean labels")
    gen = np.random.Generator(np.random.PCG64(int(cfg.seed)))
    noisy = ds.clean_labels.copy()
    flags = np.zeros(ds.n_items, dtype=bool)
    for i in range(ds.n_items):
        if gen.random() < cfg.p_noise:
            noisy[i] = noisy[i][gen.permutation(ds.n_classes)]
            flags[i] = True
    return Dataset(ds.features.copy(), noisy, clean_labels=ds.clean_labels.copy(),
                   corruption_flags=flags)


def _header(f, k, with_clean, with_flags):
    cols = ["f%d" % i for i in range(f)] + ["y%d" % i for i in range(k)]
    if with_clean:
        cols += ["z%d" % i for i in range(k)]
    if with_flags:
        cols.append("flag")
    return cols


def save_dataset(path, ds):
    with_clean = ds.clean_labels is not None
    with_flags = ds.corruption_flags is not None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_header(ds.n_features, ds.n_classes, with_clean, with_flags))
        for i in range(ds.n_items):
            row = ["%.17g" % v for v in ds.features[i]]
            row += [str(int(v)) for v in ds.noisy_labels[i]]
            if with_clean:
                row += [str(int(v)) for v in ds.clean_labels[i]]
            if with_flags:
                row.append("1" if ds.corruption_flags[i] else "0")
            writer.writerow(row)


def load_dataset(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("%s: file is empty, expected a dataset header" % path)
        f = sum(1 for c in header if re.fullmatch(r"f\d+", c))
        k = sum(1 for c in header if re.fullmatch(r"y\d+", c))
        n_clean = sum(1 for c in header if re.fullmatch(r"z\d+", c))
        with_flags = "flag" in header
        if f < 1 or k < 1:
            raise ValueError("%s: header has no f*/y* columns" % path)
        if n_clean not in (0, k):
            raise ValueError(
                "%s: header has %d clean-label columns, expected 0 or %d"
                % (path, n_clean, k)
            )
        expected = f + k + n_clean + (1 if with_flags else 0)
        if len(header) != expected:
            raise ValueError(
                "%s: header has %d columns, expected %d (F=%d, K=%d)"
                % (path, len(header), expected, f, k)
            )
        feats, noisy, clean, flags = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != expected:
                raise ValueError(
                    "%s line %d: %d fields, expected %d" % (path, lineno, len(row), expected)
                )
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ValueError("%s line %d: %s" % (path, lineno, exc))
            feats.append(vals[:f])
            noisy.append(vals[f : f + k])
            if n_clean:
                clean.append(vals[f + k : f + 2 * k])
            if with_flags:
                flags.append(bool(vals[-1]))
    if not feats:
        raise ValueError("%s: no data rows" % path)
    return Dataset(
        np.array(feats),
        np.array(noisy, dtype=np.int64),
        clean_labels=np.array(clean, dtype=np.int64) if n_clean else None,
        corruption_flags=np.array(flags) if with_flags else None,
    )


def dataset_io(path, mode, ds=None):
    if mode == "write":
        if ds is None:
            raise ValueError("write mode needs a dataset")
        save_dataset(path, ds)
        return None
    if mode == "read":
        return load_dataset(path)
    raise ValueError("mode must be read or write")


def write_manifest(path, params):
    """Sidecar JSON echoing the generation parameters."""
    with open(path, "w") as fh:
        json.dump(params, fh, indent=2)


def split(ds, ratio, seed):
    """Seeded shuffle then split into (train, test); both sides non-empty."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    m = ds.n_items
    n_train = int(round(ratio * m))
    if n_train == 0 or n_train == m:
        raise ValueError("split leaves one side empty")
    gen = np.random.Generator(np.random.PCG64(int(seed)))
    order = gen.permutation(m)

    def take(idx):
        return Dataset(
            ds.features[idx],
            ds.noisy_labels[idx],
            clean_labels=None if ds.clean_labels is None else ds.clean_labels[idx],
            corruption_flags=None
            if ds.corruption_flags is None
            else ds.corruption_flags[idx],
        )

    return take(order[:n_train]), take(order[n_train:])
