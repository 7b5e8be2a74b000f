"""Federation round loop: selection, local training, FedAvg, durations."""

import math

import numpy as np
import pytest

from fclbench.continual import Naive, StrategyState, WindowMode
from fclbench.errors import ConfigurationError, ExperimentAbort, ProtocolError
from fclbench.federation import (
    ClientProfile,
    ClientUpdate,
    FederationConfig,
    fedavg,
    local_train,
    run_experiment,
    select_clients,
    simulate_durations,
)
from fclbench.model import Batch, init_params, loss_and_grad, sgd_step
from fclbench.continual import make_window_mask
from fclbench.rng import STREAM_SELECT, STREAM_TRAIN, stream_rng
from fclbench.workload import (
    generate_overlapping_dataset,
    partition_noniid,
    schedule_column,
    split_train_test,
)


def make_cfg(**kwargs):
    base = dict(
        num_clients=2,
        clients_per_round=2,
        rounds_per_task=2,
        local_epochs=1,
        batch_size=8,
        lr=0.05,
        aggregation="fedavg",
        window=WindowMode.SLIDING,
        strategy=Naive(),
        seed=0,
    )
    base.update(kwargs)
    return FederationConfig(**base)


def make_world(num_tasks=2, num_clients=2, examples_per_class=12, seed=0):
    dataset, tasks = generate_overlapping_dataset(num_tasks, 3, examples_per_class, 8, 0.3, seed)
    shards = partition_noniid(dataset, tasks, num_clients, 0.5, seed)
    schedule = schedule_column(num_clients, num_tasks)
    profiles = [ClientProfile(i, 1.0, i % 2, 0.01, 1e9) for i in range(num_clients)]
    return dataset, tasks, shards, schedule, profiles


# ------------------------------------------------------------------ selection

def test_select_all_clients_in_order():
    got = select_clients(0, 25, 25, stream_rng(0, STREAM_SELECT, 0))
    assert got == list(range(25))


def test_select_subset_distinct_sorted_deterministic():
    a = select_clients(3, 10, 5, stream_rng(7, STREAM_SELECT, 3))
    b = select_clients(3, 10, 5, stream_rng(7, STREAM_SELECT, 3))
    assert a == b == sorted(set(a))
    assert len(a) == 5 and all(0 <= c < 10 for c in a)


def test_select_rejects_bad_k():
    with pytest.raises(ConfigurationError):
        select_clients(0, 4, 0, stream_rng(0, STREAM_SELECT, 0))
    with pytest.raises(ConfigurationError):
        select_clients(0, 4, 5, stream_rng(0, STREAM_SELECT, 0))


# --------------------------------------------------------------- local_train

def test_local_train_zero_epochs_returns_global():
    dataset, tasks, shards, _, _ = make_world()
    cfg = make_cfg(local_epochs=0)
    params = init_params(dataset.input_dim, dataset.num_classes, (4,), np.random.default_rng(0))
    update, _ = local_train(
        params, dataset, shards[0], tasks[0], cfg, StrategyState(), [tasks[0]],
        stream_rng(0, STREAM_TRAIN, 0, 0),
    )
    assert update.params.tobytes() == params.values.tobytes()


def test_local_train_matches_reference_sgd_loop():
    dataset, tasks, shards, _, _ = make_world()
    cfg = make_cfg(local_epochs=2, batch_size=4)
    params = init_params(dataset.input_dim, dataset.num_classes, (4,), np.random.default_rng(1))
    update, _ = local_train(
        params, dataset, shards[1], tasks[0], cfg, StrategyState(), [tasks[0]],
        stream_rng(0, STREAM_TRAIN, 5, 1),
    )

    rng = stream_rng(0, STREAM_TRAIN, 5, 1)
    train_idx, _ = split_train_test(dataset, shards[1], tasks[0])
    mask = make_window_mask(cfg.window, tasks[0], [tasks[0]], dataset.num_classes)
    ref = params
    for _ in range(2):
        order = rng.permutation(train_idx.size)
        for start in range(0, order.size, 4):
            sel = order[start : start + 4]
            batch = Batch(dataset.inputs[train_idx[sel]], dataset.labels[train_idx[sel]])
            _, grad = loss_and_grad(ref, batch, mask)
            ref = sgd_step(ref, grad, cfg.lr)
    assert update.params.tobytes() == ref.values.tobytes()
    assert update.num_samples == train_idx.size


# --------------------------------------------------------------------- fedavg

def test_fedavg_identical_updates_fixed_point():
    vec = np.random.default_rng(0).normal(size=50)
    updates = [ClientUpdate(i, vec.copy(), num_samples=i + 1) for i in range(4)]
    out = fedavg(updates)
    assert out.tobytes() == vec.tobytes()


def test_fedavg_weighted_mean_hand_case():
    updates = [ClientUpdate(0, np.array([0.0]), 1), ClientUpdate(1, np.array([4.0]), 3)]
    assert fedavg(updates).tolist() == [3.0]


def test_fedavg_equal_weights_is_arithmetic_mean():
    rng = np.random.default_rng(1)
    vecs = [rng.normal(size=30) for _ in range(5)]
    updates = [ClientUpdate(i, v, 7) for i, v in enumerate(vecs)]
    mean = np.mean(np.stack(vecs), axis=0)
    assert np.max(np.abs(fedavg(updates) - mean)) < 1e-15


def test_fedavg_matches_fsum_oracle():
    rng = np.random.default_rng(2)
    for _ in range(30):
        k = int(rng.integers(1, 8))
        n = int(rng.integers(1, 40))
        weights = [int(w) for w in rng.integers(1, 100, size=k)]
        vecs = [rng.uniform(-1, 1, size=n) for _ in range(k)]
        updates = [ClientUpdate(i, v, w) for i, (v, w) in enumerate(zip(vecs, weights))]
        got = fedavg(updates)
        total = float(sum(weights))
        want = np.array([
            math.fsum(w * v[j] for w, v in zip(weights, vecs)) / total for j in range(n)
        ])
        assert np.max(np.abs(got - want)) < 1e-15


def test_fedavg_permutation_invariant_bitwise():
    rng = np.random.default_rng(3)
    updates = [ClientUpdate(i, rng.normal(size=20), int(rng.integers(1, 50))) for i in range(6)]
    base = fedavg(updates)
    for _ in range(5):
        perm = [updates[i] for i in rng.permutation(6)]
        assert fedavg(perm).tobytes() == base.tobytes()


def test_fedavg_errors():
    with pytest.raises(ProtocolError):
        fedavg([])
    with pytest.raises(ProtocolError):
        fedavg([ClientUpdate(0, np.zeros(3), 1), ClientUpdate(1, np.zeros(4), 1)])
    with pytest.raises(ProtocolError):
        ClientUpdate(0, np.zeros(3), 0)


# ------------------------------------------------------------------ durations

def test_durations_symmetric_for_equal_profiles():
    profiles = [ClientProfile(i, 1.0, i, 0.01, 1e8) for i in range(3)]
    durations, fed = simulate_durations(profiles, [0, 1, 2], {i: 10.0 for i in range(3)}, 8000)
    assert len(set(durations.values())) == 1
    only = next(iter(durations.values()))
    assert fed == pytest.approx(only + 3 * 8000 / 1e8)


def test_durations_contention_doubles_compute_term():
    lone = [ClientProfile(0, 1.0, 0, 0.0, 1e12), ClientProfile(1, 1.0, 1, 0.0, 1e12)]
    packed = [ClientProfile(0, 1.0, 0, 0.0, 1e12), ClientProfile(1, 1.0, 0, 0.0, 1e12)]
    work = {0: 5.0, 1: 5.0}
    d_lone, _ = simulate_durations(lone, [0, 1], work, 0)
    d_packed, _ = simulate_durations(packed, [0, 1], work, 0)
    assert d_packed[0] == pytest.approx(2 * d_lone[0])


def test_durations_monotone_in_inputs():
    profiles = [ClientProfile(0, 2.0, 0, 0.01, 1e8)]
    base, _ = simulate_durations(profiles, [0], {0: 10.0}, 1000)
    more_work, _ = simulate_durations(profiles, [0], {0: 20.0}, 1000)
    more_bytes, _ = simulate_durations(profiles, [0], {0: 10.0}, 2000)
    slower_link = [ClientProfile(0, 2.0, 0, 0.05, 1e8)]
    more_latency, _ = simulate_durations(slower_link, [0], {0: 10.0}, 1000)
    assert more_work[0] > base[0]
    assert more_bytes[0] > base[0]
    assert more_latency[0] > base[0]


def test_durations_missing_profile_and_empty_selection():
    profiles = [ClientProfile(0, 1.0, 0, 0.0, 1e8)]
    with pytest.raises(ConfigurationError):
        simulate_durations(profiles, [0, 1], {0: 1.0, 1: 1.0}, 10)
    with pytest.raises(ProtocolError):
        simulate_durations(profiles, [], {}, 10)


def test_profile_validation():
    with pytest.raises(ConfigurationError):
        ClientProfile(0, 0.0, 0, 0.0, 1e8)
    with pytest.raises(ConfigurationError):
        ClientProfile(0, 1.0, 0, -0.1, 1e8)
    with pytest.raises(ConfigurationError):
        ClientProfile(0, 1.0, 0, 0.0, 0.0)


# -------------------------------------------------------------- round loop

def test_run_experiment_rerun_bit_identical():
    world = make_world()
    cfg = make_cfg()
    a = run_experiment(cfg, *world)
    b = run_experiment(cfg, *world)
    assert len(a) == len(b) == cfg.rounds_per_task * world[3].num_steps
    for ra, rb in zip(a, b):
        assert ra.round_id == rb.round_id and ra.step == rb.step
        assert ra.selected == rb.selected
        assert ra.avg_accuracy == rb.avg_accuracy
        assert ra.per_task_accuracy == rb.per_task_accuracy
        assert ra.client_durations_s == rb.client_durations_s
        assert ra.federator_duration_s == rb.federator_duration_s


def test_run_experiment_zero_rounds_empty():
    world = make_world()
    assert run_experiment(make_cfg(rounds_per_task=0), *world) == []


def test_round_records_internally_consistent():
    world = make_world(num_tasks=3, num_clients=3, examples_per_class=15)
    cfg = make_cfg(num_clients=3, clients_per_round=2, rounds_per_task=2)
    records = run_experiment(cfg, *world)
    for rec in records:
        assert len(rec.selected) == 2
        assert 0.0 <= rec.avg_accuracy <= 1.0
        for acc in rec.per_task_accuracy.values():
            assert 0.0 <= acc <= 1.0
        mean = sum(rec.per_task_accuracy.values()) / len(rec.per_task_accuracy)
        assert abs(mean - rec.avg_accuracy) < 1e-12
        assert set(rec.client_durations_s) == set(rec.selected)
        assert rec.federator_duration_s >= max(rec.client_durations_s.values())
    # tasks seen only ever grows, one new task per column step here
    for rec in records:
        assert len(rec.per_task_accuracy) == rec.step + 1


def test_run_experiment_abort_names_round_and_client():
    world = make_world()
    cfg = make_cfg(lr=1e300, rounds_per_task=3)  # numeric blow-up to non-finite grads
    with pytest.raises(ExperimentAbort) as info, np.errstate(all="ignore"):
        run_experiment(cfg, *world)
    assert info.value.round_id >= 0
    assert "round" in str(info.value)


def test_run_experiment_validates_shapes():
    dataset, tasks, shards, schedule, profiles = make_world()
    cfg = make_cfg(num_clients=3, clients_per_round=3)
    with pytest.raises(ConfigurationError):
        run_experiment(cfg, dataset, tasks, shards, schedule, profiles)


def test_federation_config_validation():
    with pytest.raises(ConfigurationError):
        make_cfg(clients_per_round=5)
    with pytest.raises(ConfigurationError):
        make_cfg(lr=-0.1)
    with pytest.raises(ConfigurationError):
        make_cfg(aggregation="median")
    with pytest.raises(ConfigurationError):
        make_cfg(window="diagonal")
    with pytest.raises(ConfigurationError):
        make_cfg(batch_size=0)
