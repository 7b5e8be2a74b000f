"""Synthetic workload generation: data, client shards, and task schedules.

The dataset is a Gaussian analog of a superclass/subclass image benchmark:
classes inside a task share a superclass mean, so tasks overlap internally
and sequential training on them exhibits forgetting. Sharding is Dirichlet
non-IID; schedules are the three client-task orderings (column, balanced,
shuffled). Everything is a pure function of its arguments and a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArtifactIOError, ConfigurationError, WorkloadError
from .metrics import fmt17
from .rng import STREAM_DATA, STREAM_PARTITION, STREAM_SCHEDULE, stream_rng

SUBCLASS_SPREAD = 0.5
TEST_FRACTION = 0.2
MAX_PARTITION_ATTEMPTS = 100


@dataclass(frozen=True)
class TaskSpec:
    """One task: an ID and the ordered set of class indices it owns."""

    task_id: int
    class_ids: tuple[int, ...]
    classes_per_task: int

    def __post_init__(self) -> None:
        if self.task_id < 0:
            raise ConfigurationError("task_id must be non-negative")
        if len(self.class_ids) != self.classes_per_task or self.classes_per_task < 1:
            raise ConfigurationError("class_ids size must equal classes_per_task (>= 1)")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ConfigurationError("task class_ids must be distinct")


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_to_superclass: dict[int, int]

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("dataset inputs/labels shape mismatch")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise ConfigurationError("dataset label exceeds num_classes")

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class TaskMatrix:
    """Clients x steps grid of task IDs: entry (i, s) is client i's task at step s."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.int64)
        if entries.ndim != 2 or entries.size == 0:
            raise ConfigurationError("task matrix must be a non-empty 2-d grid")
        if entries.min() < 0:
            raise ConfigurationError("task matrix entries must be non-negative task IDs")
        object.__setattr__(self, "entries", entries)

    @property
    def num_clients(self) -> int:
        return self.entries.shape[0]

    @property
    def num_steps(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class ShardSpec:
    """One client's local data: per-task lists of example indices into a Dataset.

    Index lists keep the seeded-random order produced by partitioning; the
    held-out split relies on that order being unbiased within each class.
    """

    client_id: int
    indices_per_task: dict[int, np.ndarray]

    def size_for_task(self, task_id: int) -> int:
        return int(self.indices_per_task.get(task_id, np.empty(0)).size)


def generate_overlapping_dataset(
    num_tasks: int,
    classes_per_task: int,
    examples_per_class: int,
    input_dim: int,
    noise_sigma: float,
    seed: int,
) -> tuple[Dataset, list[TaskSpec]]:
    """Gaussian-blob dataset with intra-task overlap.

    Each task draws a superclass mean; each of its classes sits at that mean
    plus a scaled private offset, and examples add isotropic noise. Classes
    are numbered task-major: task t owns classes [t*cpt, (t+1)*cpt).
    """
    if min(num_tasks, classes_per_task, examples_per_class, input_dim) < 1:
        raise ConfigurationError("dataset sizes must all be positive")
    if not noise_sigma > 0.0:
        raise ConfigurationError("noise_sigma must be positive")
    rng = stream_rng(seed, STREAM_DATA)
    inputs = []
    labels = []
    tasks = []
    class_to_superclass: dict[int, int] = {}
    for t in range(num_tasks):
        super_mean = rng.normal(size=input_dim)
        class_ids = tuple(range(t * classes_per_task, (t + 1) * classes_per_task))
        for c in class_ids:
            class_mean = super_mean + SUBCLASS_SPREAD * rng.normal(size=input_dim)
            inputs.append(class_mean + noise_sigma * rng.normal(size=(examples_per_class, input_dim)))
            labels.append(np.full(examples_per_class, c, dtype=np.int64))
            class_to_superclass[c] = t
        tasks.append(TaskSpec(t, class_ids, classes_per_task))
    dataset = Dataset(
        np.concatenate(inputs, axis=0),
        np.concatenate(labels),
        num_tasks * classes_per_task,
        class_to_superclass,
    )
    return dataset, tasks


def partition_noniid(
    dataset: Dataset,
    tasks: list[TaskSpec],
    num_clients: int,
    alpha: float,
    seed: int,
) -> list[ShardSpec]:
    """Split every class across clients with Dirichlet(alpha) proportions.

    Each client must end up with at least one example of every class; a draw
    violating that is retried, up to MAX_PARTITION_ATTEMPTS per class.
    """
    if num_clients < 1:
        raise ConfigurationError("num_clients must be >= 1")
    if not alpha > 0.0:
        raise ConfigurationError("alpha must be positive")
    rng = stream_rng(seed, STREAM_PARTITION)
    per_client_class: list[dict[int, np.ndarray]] = [dict() for _ in range(num_clients)]
    for task in tasks:
        for c in task.class_ids:
            idx = np.flatnonzero(dataset.labels == c)
            if idx.size < num_clients:
                raise ConfigurationError(
                    f"class {c} has {idx.size} examples, fewer than {num_clients} clients"
                )
            permuted = rng.permutation(idx)
            parts = None
            for _ in range(MAX_PARTITION_ATTEMPTS):
                props = rng.dirichlet(np.full(num_clients, alpha))
                cuts = np.floor(np.cumsum(props)[:-1] * idx.size).astype(np.int64)
                candidate = np.split(permuted, cuts)
                if all(p.size >= 1 for p in candidate):
                    parts = candidate
                    break
            if parts is None:
                raise ConfigurationError(
                    f"could not give every client an example of class {c} "
                    f"after {MAX_PARTITION_ATTEMPTS} draws; raise examples_per_class or alpha"
                )
            for client, part in enumerate(parts):
                per_client_class[client][c] = part
    shards = []
    for client in range(num_clients):
        indices_per_task = {
            task.task_id: np.concatenate([per_client_class[client][c] for c in task.class_ids])
            for task in tasks
        }
        shards.append(ShardSpec(client, indices_per_task))
    return shards


def split_train_test(
    dataset: Dataset, shard: ShardSpec, task: TaskSpec, test_fraction: float = TEST_FRACTION
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class held-out split of one client's shard for one task.

    For each class the first floor(test_fraction * n) indices of the shard's
    stored (seeded-random) order are held out; the rest train. Deterministic
    given the shard, so training and evaluation always agree on the split.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigurationError("test_fraction must be in [0, 1)")
    idx = shard.indices_per_task.get(task.task_id)
    if idx is None or idx.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    train_parts = []
    test_parts = []
    for c in task.class_ids:
        cls = idx[dataset.labels[idx] == c]
        n_test = math.floor(test_fraction * cls.size)
        test_parts.append(cls[:n_test])
        train_parts.append(cls[n_test:])
    return np.concatenate(train_parts), np.concatenate(test_parts)


def schedule_column(num_clients: int, num_tasks: int) -> TaskMatrix:
    """All clients see tasks in the same 0..T-1 order."""
    if num_clients < 1 or num_tasks < 1:
        raise ConfigurationError("num_clients and num_tasks must be >= 1")
    row = np.arange(num_tasks, dtype=np.int64)
    return TaskMatrix(np.tile(row, (num_clients, 1)))


def schedule_balanced(num_clients: int, num_tasks: int, seed: int) -> TaskMatrix:
    """Rotated rows of one seeded task permutation: at most one client per task per step."""
    if num_clients < 1 or num_tasks < 1:
        raise ConfigurationError("num_clients and num_tasks must be >= 1")
    if num_clients > num_tasks:
        raise ConfigurationError(
            f"balanced schedule needs num_clients <= num_tasks, got {num_clients} > {num_tasks}"
        )
    perm = stream_rng(seed, STREAM_SCHEDULE).permutation(num_tasks)
    entries = np.empty((num_clients, num_tasks), dtype=np.int64)
    for i in range(num_clients):
        entries[i] = np.roll(perm, -i)
    return TaskMatrix(entries)


def schedule_shuffled(num_clients: int, num_tasks: int, seed: int) -> TaskMatrix:
    """Independent seeded task permutation per client."""
    if num_clients < 1 or num_tasks < 1:
        raise ConfigurationError("num_clients and num_tasks must be >= 1")
    rng = stream_rng(seed, STREAM_SCHEDULE)
    entries = np.stack([rng.permutation(num_tasks) for _ in range(num_clients)])
    return TaskMatrix(entries.astype(np.int64))


def export_dataset_file(dataset: Dataset, tasks: list[TaskSpec], path: str) -> int:
    """Write one example per line: comma-separated features, label, task_id.

    Returns the number of example rows written. Floats use 17 significant
    digits so the file reproduces the in-memory values exactly.
    """
    class_to_task = {}
    for task in tasks:
        for c in task.class_ids:
            class_to_task[c] = task.task_id
    missing = set(np.unique(dataset.labels)) - set(class_to_task)
    if missing:
        raise WorkloadError(f"labels {sorted(missing)} belong to no task")
    header = ",".join(f"f{j}" for j in range(dataset.input_dim)) + ",label,task_id"
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for row, label in zip(dataset.inputs, dataset.labels):
                features = ",".join(fmt17(v) for v in row)
                fh.write(f"{features},{int(label)},{class_to_task[int(label)]}\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write dataset to {path}: {exc}") from exc
    return len(dataset)
