"""Synthetic class-imbalanced Gaussian-mixture datasets.

Long-tail profiles decay class counts exponentially so the last class holds
exactly n_max/beta samples (before rounding); step profiles give the frequent
half n_max each and the minority half n_max/beta each. Class means sit on a
circle or on regular-simplex vertices; samples are isotropic Gaussians.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    GeometryError,
    InfeasibleProfileError,
    ParameterError,
)
from .linalg import SeededRng

LONGTAIL = "longtail"
STEP = "step"

CIRCLE = "circle"
SIMPLEX = "simplex"

DATASET_FORMAT_VERSION = 1


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ImbalanceProfile:
    kind: str
    num_classes: int
    n_max: int
    beta: float

    def __post_init__(self):
        if self.kind not in (LONGTAIL, STEP):
            raise ParameterError(f"unknown profile kind {self.kind!r}")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be >= 2")
        if self.n_max < 1:
            raise ParameterError("n_max must be >= 1")
        if self.beta < 1.0:
            raise ParameterError("beta must be >= 1")


@dataclass(frozen=True)
class ClassGeometry:
    input_dim: int
    class_mean_radius: float = 3.0
    within_class_std: float = 1.0
    mean_placement: str = CIRCLE

    def __post_init__(self):
        if self.input_dim < 1:
            raise ParameterError("input_dim must be >= 1")
        if self.class_mean_radius <= 0:
            raise ParameterError("class_mean_radius must be > 0")
        if self.within_class_std < 0:
            raise ParameterError("within_class_std must be >= 0")
        if self.mean_placement not in (CIRCLE, SIMPLEX):
            raise ParameterError(f"unknown mean_placement {self.mean_placement!r}")


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_counts: tuple
    profile: ImbalanceProfile
    geometry: ClassGeometry | None = None
    seed: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError("feature rows != label count")
        observed = np.bincount(self.labels, minlength=len(self.class_counts))
        if tuple(int(c) for c in observed) != tuple(int(c) for c in self.class_counts):
            raise DimensionError("class_counts do not match the labels")

    @property
    def num_classes(self) -> int:
        return len(self.class_counts)

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ClassGroups:
    head: tuple
    mid: tuple
    tail: tuple

    def all_classes(self) -> tuple:
        return tuple(sorted(self.head + self.mid + self.tail))


def class_counts(profile: ImbalanceProfile):
    """Per-class sample counts for a profile (rounded half-up)."""
    c = profile.num_classes
    if profile.kind == LONGTAIL:
        counts = [
            _round_half_up(profile.n_max * profile.beta ** (-j / (c - 1)))
            for j in range(c)
        ]
    else:
        n_min = _round_half_up(profile.n_max / profile.beta)
        head = -(-c // 2)  # ceil
        counts = [profile.n_max] * head + [n_min] * (c - head)
    if min(counts) < 1:
        raise InfeasibleProfileError(
            f"smallest class rounds to {min(counts)} samples (n_max={profile.n_max}, beta={profile.beta})"
        )
    return tuple(counts)


def class_means(geom: ClassGeometry, num_classes: int) -> np.ndarray:
    """Deterministic class-mean placement at class_mean_radius from origin."""
    r = geom.class_mean_radius
    means = np.zeros((num_classes, geom.input_dim))
    if geom.mean_placement == CIRCLE:
        if geom.input_dim < 2:
            raise GeometryError("circle placement needs input_dim >= 2")
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means[:, 0] = r * np.cos(angles)
        means[:, 1] = r * np.sin(angles)
        return means
    if geom.input_dim < num_classes - 1:
        raise GeometryError(
            f"simplex placement of {num_classes} classes needs input_dim >= {num_classes - 1}"
        )
    # regular simplex: centered unit vectors e_i - 1/C mapped into the
    # (C-1)-dim sum-zero subspace via a Helmert basis, then scaled to radius r
    c = num_classes
    centered = np.eye(c) - 1.0 / c
    helmert = np.zeros((c - 1, c))
    for i in range(1, c):
        helmert[i - 1, :i] = 1.0
        helmert[i - 1, i] = -i
        helmert[i - 1] /= np.sqrt(i * (i + 1))
    verts = centered @ helmert.T  # (c, c-1), pairwise equidistant
    verts *= r / np.linalg.norm(verts[0])
    means[:, : c - 1] = verts
    return means


def generate(profile: ImbalanceProfile, geom: ClassGeometry, rng: SeededRng) -> LabeledDataset:
    """Draw the dataset: counts[j] isotropic-Gaussian samples around mean j."""
    counts = class_counts(profile)
    means = class_means(geom, profile.num_classes)
    feats = []
    labels = []
    for j, n_j in enumerate(counts):
        noise = rng.normal(size=(n_j, geom.input_dim), std=geom.within_class_std)
        feats.append(means[j] + noise)
        labels.append(np.full(n_j, j, dtype=np.intp))
    return LabeledDataset(
        features=np.vstack(feats),
        labels=np.concatenate(labels),
        class_counts=counts,
        profile=profile,
        geometry=geom,
        seed=rng.seed,
    )


def split_head_mid_tail(counts, hi_threshold: float | None = None, lo_threshold: float | None = None) -> ClassGroups:
    """Group classes by frequency: head n_j > hi, tail n_j < lo, rest mid.

    Defaults scale from the largest class: hi = n_max/3.3, lo = n_max/20.
    """
    counts = list(counts)
    if not counts:
        raise ParameterError("counts must be non-empty")
    n_max = max(counts)
    hi = n_max / 3.3 if hi_threshold is None else hi_threshold
    lo = n_max / 20.0 if lo_threshold is None else lo_threshold
    head, mid, tail = [], [], []
    for j, n_j in enumerate(counts):
        if n_j > hi:
            head.append(j)
        elif n_j < lo:
            tail.append(j)
        else:
            mid.append(j)
    return ClassGroups(tuple(head), tuple(mid), tuple(tail))


def balanced_test_split(ds: LabeledDataset, per_class: int, rng: SeededRng):
    """(train, test): test holds per_class fresh draws per class from the same
    geometry; train is returned unchanged (nothing is removed)."""
    if per_class < 0:
        raise ParameterError("per_class must be >= 0")
    if ds.geometry is None:
        raise ParameterError("dataset carries no geometry to sample a test set from")
    means = class_means(ds.geometry, ds.num_classes)
    feats, labels = [], []
    for j in range(ds.num_classes):
        noise = rng.normal(size=(per_class, ds.geometry.input_dim), std=ds.geometry.within_class_std)
        feats.append(means[j] + noise)
        labels.append(np.full(per_class, j, dtype=np.intp))
    test = LabeledDataset(
        features=np.vstack(feats) if per_class > 0 else np.zeros((0, ds.geometry.input_dim)),
        labels=np.concatenate(labels) if per_class > 0 else np.zeros(0, dtype=np.intp),
        class_counts=tuple([per_class] * ds.num_classes),
        profile=ds.profile,
        geometry=ds.geometry,
        seed=rng.seed,
    )
    return ds, test


def save_dataset(ds: LabeledDataset, path) -> None:
    """Flat file: one JSON header line, then a CSV body of features + label.

    Floats are written with 17 significant digits, so a round trip is exact.
    """
    if ds.geometry is None:
        raise ParameterError("dataset has no geometry; cannot serialize header")
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "profile": {
            "kind": ds.profile.kind,
            "num_classes": ds.profile.num_classes,
            "n_max": ds.profile.n_max,
            "beta": ds.profile.beta,
        },
        "geometry": {
            "input_dim": ds.geometry.input_dim,
            "class_mean_radius": ds.geometry.class_mean_radius,
            "within_class_std": ds.geometry.within_class_std,
            "mean_placement": ds.geometry.mean_placement,
        },
        "seed": ds.seed,
        "class_counts": list(ds.class_counts),
    }
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{i}" for i in range(ds.features.shape[1])] + ["label"])
    for row, label in zip(ds.features, ds.labels):
        writer.writerow([format(x, ".17g") for x in row] + [int(label)])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.write(buf.getvalue())


def load_dataset(path) -> LabeledDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        reader = csv.reader(fh)
        columns = next(reader)
        dim = len(columns) - 1
        feats, labels = [], []
        for row in reader:
            feats.append([float(x) for x in row[:dim]])
            labels.append(int(row[dim]))
    profile = ImbalanceProfile(**header["profile"])
    geometry = ClassGeometry(**header["geometry"])
    return LabeledDataset(
        features=np.asarray(feats, dtype=np.float64).reshape(len(labels), dim),
        labels=np.asarray(labels, dtype=np.intp),
        class_counts=tuple(header["class_counts"]),
        profile=profile,
        geometry=geometry,
        seed=header.get("seed"),
    )
