"""Federated simulation loop: selection, local training, aggregation, evaluation.

Every random draw is keyed off the experiment seed through
``numpy.random.SeedSequence`` with a fixed tag per purpose, so client selection,
initial models and partitions are shared by all strategies run with the same
seed, and client training streams do not depend on execution order.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import aggregation, data, metrics, model
from .errors import ConfigError, FedLAError, NumericalError

log = logging.getLogger(__name__)

# SeedSequence tags, one per purpose
_DATA, _FOLDS, _PARTITION, _INIT, _SELECT, _CLIENT, _CENTRAL = range(7)

PARTITION_MODES = {"iid": "iid", "noniid": "dirichlet_preference", "dirichlet_preference": "dirichlet_preference"}


@dataclass(frozen=True)
class ExperimentConfig:
    num_clients: int = 10
    selection_fraction: float = 0.5
    global_epochs: int = 50
    local_epochs: int = 10
    mu: float = 0.01
    strategy: str = "fedavg"
    mode: str = "noniid"
    seed: int = 0
    kfold: int = 5
    hidden_dims: tuple = (32,)
    data: data.SyntheticDatasetSpec = data.SyntheticDatasetSpec()
    samples_per_client: int = 64
    alpha: float = 0.5
    preference_weight: float = 4.0
    optimizer: model.TrainConfig = model.TrainConfig()
    targets: tuple = ()
    eval_metric: str = "accuracy"
    init_std: float = 0.1
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))
        if self.num_clients < 1:
            raise ConfigError("must be positive", key="num_clients")
        if not 0.0 < self.selection_fraction <= 1.0:
            raise ConfigError("selection_fraction out of (0,1]", key="selection_fraction")
        if self.global_epochs < 1:
            raise ConfigError("must be positive", key="global_epochs")
        if self.local_epochs < 0:
            raise ConfigError("must be non-negative", key="local_epochs")
        if self.mu < 0:
            raise ConfigError("must be non-negative", key="mu")
        if self.strategy not in aggregation.STRATEGIES:
            raise ConfigError(f"must be one of {aggregation.STRATEGIES}", key="strategy")
        if self.mode not in PARTITION_MODES:
            raise ConfigError(f"must be one of {tuple(PARTITION_MODES)}", key="mode")
        if self.seed < 0:
            raise ConfigError("must be non-negative", key="seed")
        if self.kfold < 2:
            raise ConfigError("must be at least 2", key="kfold")
        if self.eval_metric not in ("accuracy", "macro_f1"):
            raise ConfigError("must be 'accuracy' or 'macro_f1'", key="eval_metric")
        if self.init_std <= 0:
            raise ConfigError("must be positive", key="init_std")
        if self.workers < 1:
            raise ConfigError("must be positive", key="workers")
        if self.samples_per_client * self.num_clients > self.train_pool_size:
            raise ConfigError(
                f"{self.num_clients} clients x {self.samples_per_client} samples exceeds the "
                f"{self.train_pool_size} training samples available per fold",
                key="samples_per_client",
            )
        # validates alpha / preference weight
        self.partition_spec(0)

    @property
    def train_pool_size(self):
        """Training samples in the smallest training split (largest held-out fold)."""
        total = self.data.num_classes * self.data.samples_per_class
        return total - -(-total // self.kfold)

    @property
    def arch(self):
        return model.MlpArchitecture(self.data.input_dim, self.hidden_dims, self.data.num_classes)

    @property
    def num_selected(self):
        return max(1, int(np.floor(self.selection_fraction * self.num_clients + 0.5)))

    @property
    def local_mu(self):
        return self.mu if aggregation.uses_proximal_term(self.strategy) else 0.0

    def seed_sequence(self, *tags):
        return np.random.SeedSequence([self.seed, *tags])

    def partition_spec(self, fold):
        return data.PartitionSpec(
            num_clients=self.num_clients,
            mode=PARTITION_MODES[self.mode],
            samples_per_client=self.samples_per_client,
            alpha=self.alpha,
            preference_weight=self.preference_weight,
            seed=int(self.seed_sequence(_PARTITION, fold).generate_state(1)[0]),
        )


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    selected_clients: tuple
    weights: Dict[int, float]
    eval_metric: float
    train_loss_mean: float
    wall_time: float = 0.0
    fold: Optional[int] = None


@dataclass
class RunResult:
    strategy: str
    mode: str
    records: List[RoundRecord]  # fold-averaged, one per round
    fold_records: List[List[RoundRecord]] = field(default_factory=list)
    targets: tuple = ()
    rounds_to_target: Dict[float, Optional[int]] = field(default_factory=dict)

    @property
    def curve(self):
        return [(r.round_index, r.eval_metric) for r in self.records]

    @property
    def final_metric(self):
        return self.records[-1].eval_metric


@dataclass(frozen=True)
class FoldData:
    fold: int
    partitions: List[data.ClientPartition]
    test: data.Dataset


def fold_mean(values: Sequence[float]) -> float:
    """Mean over folds in fold order; shared by the loop and the CSV re-readers."""
    return float(np.mean(np.asarray(values, dtype=float)))


def build_dataset(config: ExperimentConfig) -> data.Dataset:
    seed = int(config.seed_sequence(_DATA).generate_state(1)[0])
    return data.generate_synthetic(replace(config.data, seed=seed))


def build_folds(config: ExperimentConfig, dataset: Optional[data.Dataset] = None) -> List[FoldData]:
    """Client partitions (from the training folds) and the held-out fold, per split."""
    if dataset is None:
        dataset = build_dataset(config)
    fold_seed = int(config.seed_sequence(_FOLDS).generate_state(1)[0])
    assignment = data.kfold_split(dataset.labels, config.kfold, fold_seed)
    out = []
    for f in range(config.kfold):
        train_idx = np.flatnonzero(assignment != f)
        train = dataset.subset(train_idx)
        parts = data.partition(train, config.partition_spec(f))
        # keep indices relative to the full dataset
        parts = [replace(p, indices=train_idx[p.indices]) for p in parts]
        out.append(FoldData(f, parts, dataset.subset(np.flatnonzero(assignment == f))))
    return out


def initial_params(config: ExperimentConfig, fold: int = 0) -> np.ndarray:
    rng = np.random.default_rng(config.seed_sequence(_INIT, fold))
    return model.init_params(config.arch, rng, config.init_std)


def select_clients(round_index: int, config: ExperimentConfig, fold: int = 0) -> List[int]:
    """Uniform draw of ``round(C * N)`` (at least one) distinct client ids, sorted."""
    rng = np.random.default_rng(config.seed_sequence(_SELECT, fold, round_index))
    chosen = rng.choice(config.num_clients, size=config.num_selected, replace=False)
    return sorted(int(c) for c in chosen)


def client_seed(config: ExperimentConfig, fold: int, round_index: int, client_id: int):
    return config.seed_sequence(_CLIENT, fold, round_index, client_id)


def evaluate(params, config: ExperimentConfig, test: data.Dataset) -> float:
    probs = model.forward(params, config.arch, test.features)
    acc, f1 = metrics.classification_metrics(probs, test.labels)
    return acc if config.eval_metric == "accuracy" else f1


def _train_client(global_params, part, config, fold, round_index):
    try:
        params = model.train_local(
            global_params,
            config.arch,
            part.features,
            part.labels,
            config.local_epochs,
            config.local_mu,
            client_seed(config, fold, round_index, part.client_id),
            config.optimizer,
        )
    except NumericalError as exc:
        raise exc.with_context(round_index=round_index, client_id=part.client_id, fold=fold) from exc
    loss = model.cross_entropy(params, config.arch, part.features, part.labels)
    return aggregation.ClientUpdate(part.client_id, params, part.histogram, part.sample_count), loss


def run_round(
    global_params: np.ndarray,
    partitions: Sequence[data.ClientPartition],
    config: ExperimentConfig,
    round_index: int,
    fold: int = 0,
    test: Optional[data.Dataset] = None,
    executor=None,
) -> Tuple[np.ndarray, RoundRecord]:
    if len(partitions) != config.num_clients:
        raise ConfigError(f"got {len(partitions)} partitions for {config.num_clients} clients")
    started = time.perf_counter()
    selected = select_clients(round_index, config, fold)
    jobs = [partitions[c] for c in selected]
    if executor is not None:
        results = list(executor.map(lambda p: _train_client(global_params, p, config, fold, round_index), jobs))
    else:
        results = [_train_client(global_params, p, config, fold, round_index) for p in jobs]
    updates = [u for u, _ in results]
    weights = aggregation.weights_for(config.strategy, updates)
    try:
        new_global = aggregation.aggregate(updates, weights)
    except NumericalError as exc:
        raise exc.with_context(round_index=round_index, fold=fold) from exc
    metric = evaluate(new_global, config, test) if test is not None else float("nan")
    record = RoundRecord(
        round_index=round_index,
        selected_clients=tuple(selected),
        weights=weights,
        eval_metric=metric,
        train_loss_mean=fold_mean([loss for _, loss in results]),
        wall_time=time.perf_counter() - started,
        fold=fold,
    )
    return new_global, record


def run_fold(config: ExperimentConfig, fold_data: FoldData, on_record=None) -> List[RoundRecord]:
    params = initial_params(config, fold_data.fold)
    records = []
    executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for r in range(1, config.global_epochs + 1):
            params, rec = run_round(params, fold_data.partitions, config, r, fold_data.fold, fold_data.test, executor)
            records.append(rec)
            if on_record is not None:
                on_record(rec)
    finally:
        if executor is not None:
            executor.shutdown()
    return records


def summarize(strategy, mode, fold_records, targets) -> RunResult:
    """Average per-fold curves round by round and locate target crossings."""
    mean_records = []
    for recs in zip(*fold_records):
        mean_records.append(
            RoundRecord(
                round_index=recs[0].round_index,
                selected_clients=(),
                weights={},
                eval_metric=fold_mean([r.eval_metric for r in recs]),
                train_loss_mean=fold_mean([r.train_loss_mean for r in recs]),
                wall_time=sum(r.wall_time for r in recs),
            )
        )
    result = RunResult(strategy, mode, mean_records, list(fold_records), tuple(targets))
    result.rounds_to_target = {t: metrics.rounds_to_target(result.curve, t) for t in result.targets}
    return result


def run_experiment(config: ExperimentConfig, folds: Optional[List[FoldData]] = None, on_record=None) -> RunResult:
    """All folds for one strategy; metrics are per-round means over folds."""
    if folds is None:
        folds = build_folds(config)
    fold_records = []
    for fd in folds:
        try:
            fold_records.append(run_fold(config, fd, on_record))
        except NumericalError as exc:
            raise exc.with_context(fold=fd.fold) from exc
        except FedLAError as exc:
            raise type(exc)(f"fold {fd.fold}: {exc}") from exc
    return summarize(config.strategy, config.mode, fold_records, config.targets)


def pooled(partitions: Sequence[data.ClientPartition]) -> data.Dataset:
    """Union of all client data, in client order."""
    feats = np.concatenate([p.features for p in partitions])
    labels = np.concatenate([p.labels for p in partitions])
    n_cls = len(partitions[0].histogram)
    return data.Dataset(feats, labels, n_cls)


def run_centralized_fold(config: ExperimentConfig, fold_data: FoldData) -> List[RoundRecord]:
    pool = pooled(fold_data.partitions)
    params = initial_params(config, fold_data.fold)
    opt = config.optimizer
    state = model.AdamState.zeros(params.shape[0], opt.lr, opt.beta1, opt.beta2, opt.epsilon)
    rng = np.random.default_rng(config.seed_sequence(_CENTRAL, fold_data.fold))
    total_steps = config.global_epochs * config.local_epochs * -(-len(pool) // opt.batch_size)
    records = []
    for r in range(1, config.global_epochs + 1):
        started = time.perf_counter()
        params, state = model.run_adam_epochs(
            params, None, config.arch, pool.features, pool.labels,
            config.local_epochs, 0.0, rng, state, opt, total_steps,
        )
        records.append(
            RoundRecord(
                round_index=r,
                selected_clients=(),
                weights={},
                eval_metric=evaluate(params, config, fold_data.test),
                train_loss_mean=model.cross_entropy(params, config.arch, pool.features, pool.labels),
                wall_time=time.perf_counter() - started,
                fold=fold_data.fold,
            )
        )
    return records


def run_centralized_baseline(config: ExperimentConfig, folds: Optional[List[FoldData]] = None) -> RunResult:
    """One model on the pooled client data for ``E_g * E_l`` epochs.

    Evaluated every ``E_l`` epochs so its curve lines up with communication rounds.
    """
    if folds is None:
        folds = build_folds(config)
    fold_records = [run_centralized_fold(config, fd) for fd in folds]
    return summarize("central", config.mode, fold_records, config.targets)
