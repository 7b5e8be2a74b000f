"""Experiment orchestration on top of the engine modules.

Takes a resolved config, materializes the workload and resource profiles for
each seed, drives the federated round loop, and persists artifacts. One seed
is one fully independent run: dataset, partition, schedule, initialization,
and selection all derive from it through named streams.
"""

from __future__ import annotations

import logging
import math
import os
import time
from typing import Any

from .config import SCHEMES, config_to_text, parse_config_text, resolve_config
from .continual import ContinualStrategy, Ewc, Gem, Naive
from .errors import ArtifactIOError, ConfigurationError
from .federation import ClientProfile, FederationConfig, run_experiment
from .metrics import ExperimentArtifact, dumps17, write_artifact, write_text_file
from .rng import STREAM_RESOURCES, stream_rng
from .workload import (
    Dataset,
    TaskSpec,
    export_dataset_file,
    generate_overlapping_dataset,
    partition_noniid,
    schedule_balanced,
    schedule_column,
    schedule_shuffled,
)

log = logging.getLogger(__name__)


def build_strategy(resolved: dict[str, Any]) -> ContinualStrategy:
    name = resolved["federation.strategy"]
    if name == "naive":
        return Naive()
    if name == "ewc":
        return Ewc(resolved["federation.ewc_lambda"], resolved["federation.fisher_samples"])
    return Gem(resolved["federation.gem_memory_per_task"], resolved["federation.gem_margin"])


def build_profiles(resolved: dict[str, Any], seed: int) -> list[ClientProfile]:
    """Explicit per-client profiles, or the round-robin node-packing generator."""
    num_clients = resolved["partition.num_clients"]
    if "resources.profiles.0.speed_factor" in resolved:
        return [
            ClientProfile(
                client_id=i,
                speed_factor=resolved[f"resources.profiles.{i}.speed_factor"],
                node_id=resolved[f"resources.profiles.{i}.node_id"],
                link_latency_s=resolved[f"resources.profiles.{i}.link_latency_s"],
                link_throughput_Bps=resolved[f"resources.profiles.{i}.link_throughput_bps"],
            )
            for i in range(num_clients)
        ]
    clients_per_node = resolved["resources.clients_per_node"]
    if clients_per_node > 0:
        nodes = math.ceil(num_clients / clients_per_node)
    else:
        nodes = resolved["resources.nodes"]
    jitter = resolved["resources.speed_jitter"]
    rng = stream_rng(seed, STREAM_RESOURCES)
    profiles = []
    for i in range(num_clients):
        speed = 1.0 if jitter == 0.0 else 1.0 + jitter * float(rng.uniform(-1.0, 1.0))
        profiles.append(
            ClientProfile(
                client_id=i,
                speed_factor=speed,
                node_id=i % nodes,
                link_latency_s=resolved["resources.link_latency_s"],
                link_throughput_Bps=resolved["resources.link_throughput_bps"],
            )
        )
    return profiles


def build_workload(resolved: dict[str, Any], seed: int) -> tuple[Dataset, list[TaskSpec]]:
    return generate_overlapping_dataset(
        num_tasks=resolved["dataset.num_tasks"],
        classes_per_task=resolved["dataset.classes_per_task"],
        examples_per_class=resolved["dataset.examples_per_class"],
        input_dim=resolved["dataset.input_dim"],
        noise_sigma=resolved["dataset.noise_sigma"],
        seed=seed,
    )


def build_schedule(resolved: dict[str, Any], seed: int):
    scheme = resolved["schedule.scheme"]
    num_clients = resolved["partition.num_clients"]
    num_tasks = resolved["dataset.num_tasks"]
    if scheme == "column":
        return schedule_column(num_clients, num_tasks)
    if scheme == "balanced":
        return schedule_balanced(num_clients, num_tasks, seed)
    return schedule_shuffled(num_clients, num_tasks, seed)


def build_federation_config(resolved: dict[str, Any], seed: int) -> FederationConfig:
    return FederationConfig(
        num_clients=resolved["partition.num_clients"],
        clients_per_round=resolved["federation.clients_per_round"],
        rounds_per_task=resolved["federation.rounds_per_task"],
        local_epochs=resolved["federation.local_epochs"],
        batch_size=resolved["federation.batch_size"],
        lr=resolved["federation.lr"],
        aggregation=resolved["federation.aggregation"],
        window=resolved["federation.window"],
        strategy=build_strategy(resolved),
        seed=seed,
    )


def run_single(resolved: dict[str, Any], seed: int) -> ExperimentArtifact:
    """One complete run of the resolved config under one seed (no I/O)."""
    started = time.monotonic()
    dataset, tasks = build_workload(resolved, seed)
    shards = partition_noniid(dataset, tasks, resolved["partition.num_clients"],
                              resolved["partition.alpha"], seed)
    schedule = build_schedule(resolved, seed)
    profiles = build_profiles(resolved, seed)
    cfg = build_federation_config(resolved, seed)
    records = run_experiment(cfg, dataset, tasks, shards, schedule, profiles)
    wall = time.monotonic() - started
    return ExperimentArtifact(dict(resolved), records, schedule, wall, seed)


def run_config(resolved: dict[str, Any]) -> list[dict[str, Any]]:
    """Run every seed and persist artifacts; returns one summary per seed."""
    summaries = []
    for seed in resolved["seeds"]:
        artifact = run_single(resolved, seed)
        summary = write_artifact(artifact, resolved["out_dir"])
        summary["wall_time_s"] = artifact.wall_time_s
        log.info(
            "seed %d finished: %d rounds, final avg accuracy %.4f",
            seed, summary["num_rounds"], summary["final_avg_accuracy"],
        )
        summaries.append(summary)
    return summaries


def compare_schemes(resolved: dict[str, Any]) -> dict[str, Any]:
    """Run the config under all three schedule schemes across all seeds.

    Balanced requires num_clients <= num_tasks, so the comparison refuses
    configs where that fails rather than comparing a partial set.
    """
    if resolved["partition.num_clients"] > resolved["dataset.num_tasks"]:
        raise ConfigurationError(
            "compare-schemes needs partition.num_clients <= dataset.num_tasks "
            "so the balanced scheme is runnable"
        )
    base_name = resolved["experiment_name"]
    schemes_doc: dict[str, Any] = {}
    for scheme in SCHEMES:
        variant = dict(resolved)
        variant["schedule.scheme"] = scheme
        variant["experiment_name"] = f"{base_name}-{scheme}"
        summaries = run_config(variant)
        per_seed = {str(s["seed"]): s["final_avg_accuracy"] for s in summaries}
        mean_final = sum(s["final_avg_accuracy"] for s in summaries) / len(summaries)
        schemes_doc[scheme] = {
            "mean_final_avg_accuracy": mean_final,
            "per_seed_final_avg_accuracy": per_seed,
        }
    doc = {
        "experiment_name": base_name,
        "seeds": list(resolved["seeds"]),
        "schemes": schemes_doc,
    }
    out_dir = os.path.join(resolved["out_dir"], base_name)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create {out_dir}: {exc}") from exc
    path = os.path.join(out_dir, "scheme_comparison.json")
    write_text_file(dumps17(doc) + "\n", path)
    doc["comparison_path"] = path
    return doc


def export_dataset(resolved: dict[str, Any], path: str) -> dict[str, Any]:
    """Write the first seed's dataset as columnar text; returns file facts."""
    seed = resolved["seeds"][0]
    dataset, tasks = build_workload(resolved, seed)
    rows = export_dataset_file(dataset, tasks, path)
    return {
        "path": path,
        "seed": seed,
        "num_examples": rows,
        "num_classes": dataset.num_classes,
        "num_tasks": len(tasks),
        "input_dim": dataset.input_dim,
    }


def validate_config_text(config_text: str, overrides: list[str]) -> dict[str, Any]:
    resolved = resolve_config(parse_config_text(config_text), overrides)
    return {"resolved": resolved, "resolved_text": config_to_text(resolved)}
