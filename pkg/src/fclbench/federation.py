"""The federator/client round loop with FedAvg and a simulated duration model.

Rounds are synchronous: the federator selects clients, each trains locally on
its scheduled task under the configured window and continual strategy, and
the sample-weighted average of their parameters becomes the next global
model. Durations are simulated from per-client resource profiles; nothing
here touches wall-clock time, so reruns are bit-identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .continual import (
    ContinualStrategy,
    Ewc,
    EwcAnchor,
    Gem,
    StrategyState,
    WindowMode,
    estimate_fisher,
    ewc_penalty_grad,
    gem_project,
    make_window_mask,
    update_memory,
)
from .errors import ConfigurationError, ExperimentAbort, FclbenchError, ProtocolError, WorkloadError
from .model import (
    Batch,
    ClassMask,
    DEFAULT_HIDDEN,
    ModelParams,
    init_params,
    loss_and_grad,
    predict,
    sgd_step,
)
from .rng import (
    STREAM_FISHER,
    STREAM_INIT,
    STREAM_MEMORY,
    STREAM_SELECT,
    STREAM_TRAIN,
    stream_rng,
)
from .workload import Dataset, ShardSpec, TaskMatrix, TaskSpec, split_train_test

log = logging.getLogger(__name__)

BYTES_PER_PARAM = 8


@dataclass(frozen=True)
class ClientProfile:
    """Resource description of one client: compute speed, placement, link."""

    client_id: int
    speed_factor: float
    node_id: int
    link_latency_s: float
    link_throughput_Bps: float

    def __post_init__(self) -> None:
        if self.speed_factor <= 0.0 or self.link_throughput_Bps <= 0.0:
            raise ConfigurationError("speed_factor and link_throughput_Bps must be positive")
        if self.link_latency_s < 0.0:
            raise ConfigurationError("link_latency_s must be non-negative")


@dataclass
class ClientUpdate:
    client_id: int
    params: np.ndarray
    num_samples: int
    sim_duration_s: float = 0.0

    def __post_init__(self) -> None:
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.num_samples < 1:
            raise ProtocolError("client update must carry num_samples >= 1")


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int
    clients_per_round: int
    rounds_per_task: int
    local_epochs: int
    batch_size: int
    lr: float
    aggregation: str
    window: str
    strategy: ContinualStrategy
    seed: int
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN

    def __post_init__(self) -> None:
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise ConfigurationError(
                f"clients_per_round must be in [1, {self.num_clients}], got {self.clients_per_round}"
            )
        if self.rounds_per_task < 0 or self.local_epochs < 0:
            raise ConfigurationError("rounds_per_task and local_epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not (math.isfinite(self.lr) and self.lr > 0.0):
            raise ConfigurationError("lr must be finite and positive")
        if self.aggregation != "fedavg":
            raise ConfigurationError(f"unknown aggregation {self.aggregation!r}")
        if self.window not in WindowMode.ALL:
            raise ConfigurationError(f"unknown window {self.window!r}")


@dataclass
class RoundRecord:
    round_id: int
    step: int
    selected: list[int]
    federator_duration_s: float
    client_durations_s: dict[int, float]
    avg_accuracy: float
    per_task_accuracy: dict[int, float]


def select_clients(round_id: int, num_clients: int, k: int, rng: np.random.Generator) -> list[int]:
    """k distinct client IDs for this round, ascending; k = all returns everyone."""
    if round_id < 0:
        raise ConfigurationError("round_id must be non-negative")
    if not 1 <= k <= num_clients:
        raise ConfigurationError(f"clients_per_round must be in [1, {num_clients}], got {k}")
    if k == num_clients:
        return list(range(num_clients))
    chosen = rng.choice(num_clients, size=k, replace=False)
    return sorted(int(c) for c in chosen)


def _memory_gradients(
    params: ModelParams, state: StrategyState, current_task_id: int
) -> list[np.ndarray]:
    """Full-window loss gradients on each stored past-task memory batch."""
    full = ClassMask.all_active(params.num_classes)
    grads = []
    for task_id in state.memory.task_ids():
        if task_id == current_task_id:
            continue
        _, g = loss_and_grad(params, state.memory.per_task[task_id], full)
        grads.append(g)
    return grads


def local_train(
    global_params: ModelParams,
    dataset: Dataset,
    shard: ShardSpec,
    task: TaskSpec,
    cfg: FederationConfig,
    state: StrategyState,
    tasks_seen: list[TaskSpec],
    rng: np.random.Generator,
) -> tuple[ClientUpdate | None, StrategyState]:
    """Local SGD over the client's train split of ``task`` from the global model.

    The window mask fixes which classes the client may emit; EWC adds its
    penalty gradient (skipped entirely at lambda 0 so that trajectory stays
    bit-identical to Naive); GEM projects each minibatch gradient against the
    stored memories. Returns None instead of an update when the client has no
    training data for the task.
    """
    train_idx, _ = split_train_test(dataset, shard, task)
    if train_idx.size == 0:
        log.warning("client %d has no training data for task %d; skipping", shard.client_id, task.task_id)
        return None, state
    mask = make_window_mask(cfg.window, task, tasks_seen, global_params.num_classes)
    inputs = dataset.inputs[train_idx]
    labels = dataset.labels[train_idx]
    params = ModelParams(
        global_params.values.copy(),
        global_params.shapes,
        global_params.num_classes,
        global_params.input_dim,
    )
    for _ in range(cfg.local_epochs):
        order = rng.permutation(train_idx.size)
        for start in range(0, order.size, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            _, grad = loss_and_grad(params, Batch(inputs[sel], labels[sel]), mask)
            if isinstance(cfg.strategy, Ewc):
                if cfg.strategy.lam != 0.0 and state.anchors:
                    grad = grad + ewc_penalty_grad(params, state.anchors, cfg.strategy.lam)
            elif isinstance(cfg.strategy, Gem):
                mem_grads = _memory_gradients(params, state, task.task_id)
                if mem_grads:
                    grad = gem_project(grad, mem_grads, cfg.strategy.margin)
            params = sgd_step(params, grad, cfg.lr)
    update = ClientUpdate(shard.client_id, params.values, int(train_idx.size))
    return update, state


def fedavg(updates: list[ClientUpdate]) -> np.ndarray:
    """Sample-weighted average of client parameter vectors.

    Computed in delta form around the lowest-ID update with a compensated
    (Neumaier) sum in ascending client-ID order: identical updates come back
    bit-exactly, and any permutation of the input list gives identical bytes.
    """
    if not updates:
        raise ProtocolError("fedavg requires at least one client update")
    ordered = sorted(updates, key=lambda u: u.client_id)
    length = ordered[0].params.shape[0]
    if any(u.params.shape != (length,) for u in ordered):
        raise ProtocolError("client updates disagree on parameter length")
    base = ordered[0].params
    total = sum(u.num_samples for u in ordered)
    acc = np.zeros(length)
    comp = np.zeros(length)
    for u in ordered:
        term = u.num_samples * (u.params - base)
        fresh = acc + term
        comp += np.where(np.abs(acc) >= np.abs(term), (acc - fresh) + term, (term - fresh) + acc)
        acc = fresh
    delta = (acc + comp) / float(total)
    if not delta.any():
        return base.copy()
    return base + delta


def simulate_durations(
    profiles: list[ClientProfile],
    selected: list[int],
    work_units: dict[int, float],
    model_bytes: int,
) -> tuple[dict[int, float], float]:
    """Per-client and federator round durations under the contention model.

    A client's compute term scales with how many selected clients share its
    node; both directions of model transfer ride its own link. The federator
    waits for the slowest client, then receives all uploads sequentially.
    """
    if not selected:
        raise ProtocolError("cannot simulate durations for an empty selection")
    by_id = {p.client_id: p for p in profiles}
    missing = [c for c in selected if c not in by_id]
    if missing:
        raise ConfigurationError(f"no resource profile for clients {missing}")
    node_load: dict[int, int] = {}
    for c in selected:
        node_load[by_id[c].node_id] = node_load.get(by_id[c].node_id, 0) + 1
    durations: dict[int, float] = {}
    for c in selected:
        p = by_id[c]
        compute = node_load[p.node_id] * work_units.get(c, 0.0) / p.speed_factor
        transfer = 2.0 * p.link_latency_s + 2.0 * model_bytes / p.link_throughput_Bps
        durations[c] = compute + transfer
    receive = sum(model_bytes / by_id[c].link_throughput_Bps for c in selected)
    federator = max(durations.values()) + receive
    return durations, federator


def _tasks_in_step(schedule: TaskMatrix, step: int) -> list[int]:
    return [int(t) for t in schedule.entries[:, step]]


def run_experiment(
    cfg: FederationConfig,
    dataset: Dataset,
    tasks: list[TaskSpec],
    shards: list[ShardSpec],
    schedule: TaskMatrix,
    profiles: list[ClientProfile],
) -> list[RoundRecord]:
    """Drive the full schedule; one RoundRecord per federated round.

    Per schedule step, runs rounds_per_task rounds on that step's tasks and
    then lets every client finalize its strategy state for the task it just
    completed (EWC anchors, GEM memories). Evaluation after each round is the
    mean per-task accuracy on the union of client test splits over every task
    any client has seen so far, masked by the configured window.
    """
    if schedule.num_clients != cfg.num_clients or len(shards) != cfg.num_clients:
        raise ConfigurationError("schedule/shards/num_clients disagree")
    if len(profiles) != cfg.num_clients:
        raise ConfigurationError("need exactly one resource profile per client")
    task_by_id = {t.task_id: t for t in tasks}
    bad = set(int(t) for t in schedule.entries.ravel()) - set(task_by_id)
    if bad:
        raise ConfigurationError(f"schedule references unknown tasks {sorted(bad)}")

    params = init_params(
        dataset.input_dim, dataset.num_classes, cfg.hidden_sizes, stream_rng(cfg.seed, STREAM_INIT)
    )
    model_bytes = BYTES_PER_PARAM * params.values.size
    states = {c: StrategyState() for c in range(cfg.num_clients)}

    splits = {
        (shard.client_id, t.task_id): split_train_test(dataset, shard, t)
        for shard in shards
        for t in tasks
    }
    test_union = {
        t.task_id: np.concatenate([splits[(c, t.task_id)][1] for c in range(cfg.num_clients)])
        for t in tasks
    }

    records: list[RoundRecord] = []
    seen_ids: list[int] = []
    round_id = 0
    for step in range(schedule.num_steps):
        for tid in _tasks_in_step(schedule, step):
            if tid not in seen_ids:
                seen_ids.append(tid)
        tasks_seen = [task_by_id[tid] for tid in seen_ids]
        eval_tasks = [t for t in tasks_seen if test_union[t.task_id].size > 0]
        if not eval_tasks and cfg.rounds_per_task > 0:
            raise WorkloadError(
                "no held-out test examples for any seen task; raise examples_per_class"
            )
        for _ in range(cfg.rounds_per_task):
            selected = select_clients(
                round_id, cfg.num_clients, cfg.clients_per_round,
                stream_rng(cfg.seed, STREAM_SELECT, round_id),
            )
            updates: list[ClientUpdate] = []
            work_units: dict[int, float] = {}
            for c in selected:
                task = task_by_id[int(schedule.entries[c, step])]
                try:
                    update, states[c] = local_train(
                        params, dataset, shards[c], task, cfg, states[c], tasks_seen,
                        stream_rng(cfg.seed, STREAM_TRAIN, round_id, c),
                    )
                except FclbenchError as exc:
                    raise ExperimentAbort(round_id, c, exc) from exc
                if update is not None:
                    updates.append(update)
                    work_units[c] = float(update.num_samples * cfg.local_epochs)
            try:
                durations, federator_s = simulate_durations(
                    profiles, [u.client_id for u in updates], work_units, model_bytes
                )
                for u in updates:
                    u.sim_duration_s = durations[u.client_id]
                new_values = fedavg(updates)
            except FclbenchError as exc:
                raise ExperimentAbort(round_id, None, exc) from exc
            params = ModelParams(new_values, params.shapes, params.num_classes, params.input_dim)

            per_task_acc: dict[int, float] = {}
            for t in eval_tasks:
                mask = make_window_mask(cfg.window, t, tasks_seen, dataset.num_classes)
                idx = test_union[t.task_id]
                preds = predict(params, dataset.inputs[idx], mask)
                per_task_acc[t.task_id] = float(np.mean(preds == dataset.labels[idx]))
            avg_acc = float(sum(per_task_acc.values()) / len(per_task_acc))
            records.append(
                RoundRecord(
                    round_id, step, list(selected), federator_s, durations, avg_acc, per_task_acc
                )
            )
            round_id += 1

        for c in range(cfg.num_clients):
            task = task_by_id[int(schedule.entries[c, step])]
            train_idx, _ = splits[(c, task.task_id)]
            if train_idx.size == 0:
                continue
            batch = Batch(dataset.inputs[train_idx], dataset.labels[train_idx])
            if isinstance(cfg.strategy, Ewc):
                fisher = estimate_fisher(
                    params, batch, cfg.strategy.fisher_samples,
                    stream_rng(cfg.seed, STREAM_FISHER, step, c),
                )
                states[c] = StrategyState(
                    states[c].anchors + (EwcAnchor(params.values.copy(), fisher),),
                    states[c].memory,
                )
            elif isinstance(cfg.strategy, Gem):
                memory = update_memory(
                    states[c].memory, task, batch, cfg.strategy.memory_per_task,
                    stream_rng(cfg.seed, STREAM_MEMORY, step, c),
                )
                states[c] = StrategyState(states[c].anchors, memory)
    return records
