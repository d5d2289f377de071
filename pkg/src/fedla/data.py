"""Synthetic classification data, client partitioning and k-fold splits.

Datasets are kept as a pair of arrays (``features`` of shape ``(n, d)`` and
integer ``labels`` of shape ``(n,)``).  Partitions and folds refer back to the
dataset through integer index arrays, which keeps every split auditable.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

MODES = ("iid", "dirichlet_preference")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)

    def histogram(self):
        return label_histogram(self.labels, self.num_classes)


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    num_classes: int = 2
    samples_per_class: int = 500
    input_dim: int = 16
    class_separation: float = 2.5
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("must be at least 2", key="data.num_classes")
        if self.samples_per_class < 1:
            raise ConfigError("must be positive", key="data.samples_per_class")
        if self.input_dim < self.num_classes:
            raise ConfigError("must be >= num_classes", key="data.input_dim")
        if self.class_separation <= 0:
            raise ConfigError("must be positive", key="data.class_separation")
        if self.noise_std <= 0:
            raise ConfigError("must be positive", key="data.noise_std")


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int = 10
    mode: str = "iid"
    samples_per_client: int = 60
    alpha: float = 0.5
    preference_weight: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("must be positive", key="num_clients")
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {MODES}", key="partition.mode")
        if self.samples_per_client < 1:
            raise ConfigError("must be positive", key="partition.samples_per_client")
        if self.alpha <= 0:
            raise ConfigError("must be positive", key="partition.alpha")
        if self.preference_weight <= 0:
            raise ConfigError("must be positive", key="partition.preference_weight")


@dataclass(frozen=True)
class ClientPartition:
    client_id: int
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    histogram: np.ndarray

    @property
    def sample_count(self):
        return len(self.labels)


def label_histogram(labels, num_classes) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes).astype(np.int64)


def class_anchors(num_classes, input_dim, separation):
    """Class means on scaled basis vectors; every pair is exactly ``separation`` apart."""
    anchors = np.zeros((num_classes, input_dim))
    anchors[np.arange(num_classes), np.arange(num_classes)] = separation / np.sqrt(2.0)
    return anchors


def generate_synthetic(spec: SyntheticDatasetSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    anchors = class_anchors(spec.num_classes, spec.input_dim, spec.class_separation)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    noise = rng.normal(0.0, spec.noise_std, size=(labels.size, spec.input_dim))
    features = anchors[labels] + noise
    return Dataset(features, labels, spec.num_classes)


def largest_remainder(proportions, total) -> np.ndarray:
    """Integer apportionment of ``total`` that sums exactly; ties go to the lower index."""
    p = np.asarray(proportions, dtype=float)
    p = p / p.sum()
    quotas = p * total
    counts = np.floor(quotas).astype(np.int64)
    short = int(total - counts.sum())
    if short > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _make_partitions(dataset, per_client_indices):
    parts = []
    for cid, idx in enumerate(per_client_indices):
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        labels = dataset.labels[idx]
        parts.append(
            ClientPartition(
                client_id=cid,
                indices=idx,
                features=dataset.features[idx],
                labels=labels,
                histogram=label_histogram(labels, dataset.num_classes),
            )
        )
    return parts


def _pools_by_class(dataset, rng):
    return [list(rng.permutation(np.flatnonzero(dataset.labels == c))) for c in range(dataset.num_classes)]


def _check_capacity(dataset, spec):
    need = spec.num_clients * spec.samples_per_client
    if need > len(dataset):
        raise ConfigError(
            f"{spec.num_clients} clients x {spec.samples_per_client} samples = {need} "
            f"exceeds dataset size {len(dataset)}",
            key="partition.samples_per_client",
        )


def partition_iid(dataset: Dataset, spec: PartitionSpec) -> List[ClientPartition]:
    """Stratified equal-size split: each client mirrors the dataset's class mix.

    Per-client class counts come from largest-remainder apportionment of the
    global class proportions, with a floor of one sample per class.
    """
    _check_capacity(dataset, spec)
    n_cls = dataset.num_classes
    if spec.samples_per_client < n_cls:
        raise ConfigError(
            f"samples_per_client={spec.samples_per_client} cannot cover {n_cls} classes",
            key="partition.samples_per_client",
        )
    rng = np.random.default_rng(spec.seed)
    pools = _pools_by_class(dataset, rng)
    available = np.array([len(p) for p in pools])
    if np.any(available < spec.num_clients):
        raise ConfigError("some class has fewer samples than there are clients", key="partition")
    # floor of one per class, remainder proportional to the class mix
    extra = largest_remainder(available - 1, spec.samples_per_client - n_cls) if spec.samples_per_client > n_cls else np.zeros(n_cls, dtype=np.int64)
    quota = extra + 1
    per_client = []
    for _ in range(spec.num_clients):
        take = np.minimum(quota, available)
        deficit = spec.samples_per_client - int(take.sum())
        while deficit > 0:
            c = int(np.argmax(available - take))
            take[c] += 1
            deficit -= 1
        idx = []
        for c in range(n_cls):
            idx.extend(pools[c][: take[c]])
            del pools[c][: take[c]]
        available = available - take
        per_client.append(idx)
    return _make_partitions(dataset, per_client)


def preference_concentration(client_id, num_classes, alpha, preference_weight):
    conc = np.full(num_classes, float(alpha))
    conc[client_id % num_classes] *= preference_weight
    return conc


def partition_dirichlet_preference(dataset: Dataset, spec: PartitionSpec) -> List[ClientPartition]:
    """Label-skewed equal-size split.

    Client ``i`` prefers class ``i mod n_classes``.  Its class proportions are
    drawn from a Dirichlet whose concentration is ``alpha`` on every class,
    multiplied by ``preference_weight`` on the preferred one.  Counts are
    apportioned by largest remainder; a class that has run dry is backfilled
    from whichever class has the most samples left.
    """
    _check_capacity(dataset, spec)
    n_cls = dataset.num_classes
    rng = np.random.default_rng(spec.seed)
    proportions = np.array(
        [
            rng.dirichlet(preference_concentration(i, n_cls, spec.alpha, spec.preference_weight))
            for i in range(spec.num_clients)
        ]
    )
    pools = _pools_by_class(dataset, rng)
    available = np.array([len(p) for p in pools])
    per_client = []
    for cid in range(spec.num_clients):
        want = largest_remainder(proportions[cid], spec.samples_per_client)
        take = np.minimum(want, available)
        deficit = spec.samples_per_client - int(take.sum())
        if deficit > 0:
            log.warning("client %d: %d samples backfilled, preferred classes exhausted", cid, deficit)
        while deficit > 0:
            c = int(np.argmax(available - take))
            take[c] += 1
            deficit -= 1
        idx = []
        for c in range(n_cls):
            idx.extend(pools[c][: take[c]])
            del pools[c][: take[c]]
        available = available - take
        per_client.append(idx)
    return _make_partitions(dataset, per_client)


def partition(dataset: Dataset, spec: PartitionSpec) -> List[ClientPartition]:
    if spec.mode == "iid":
        return partition_iid(dataset, spec)
    return partition_dirichlet_preference(dataset, spec)


def kfold_split(labels, k: int, seed) -> np.ndarray:
    """Stratified fold assignment: returns a fold index in ``[0, k)`` per sample.

    Samples are shuffled within each class, classes are laid end to end, and
    folds are dealt round-robin along that sequence, so both overall fold sizes
    and per-class fold counts differ by at most one.
    """
    labels = np.asarray(labels)
    n = labels.size
    if k < 2:
        raise ConfigError("must be at least 2", key="kfold")
    if k > n:
        raise ConfigError(f"k={k} exceeds dataset size {n}", key="kfold")
    rng = np.random.default_rng(seed)
    ordered = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    folds = np.empty(n, dtype=np.int64)
    folds[ordered] = np.arange(n) % k
    return folds


def partition_report_csv(partitions: Sequence[ClientPartition]) -> str:
    """Client-by-class count matrix as CSV text."""
    n_cls = len(partitions[0].histogram) if partitions else 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["client_id"] + [f"class_{c}_count" for c in range(n_cls)])
    for p in partitions:
        writer.writerow([p.client_id, *(int(v) for v in p.histogram)])
    return buf.getvalue()
