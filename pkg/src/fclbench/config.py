"""Experiment configuration: flat dotted-key text, schema, resolution.

The on-disk format is one `section.key = value` per line, `#` comments, and
blank lines. Resolution applies file values, then overrides in order, then
defaults, then validation; unknown keys and unparsable values are rejected
naming the full key path. A resolved config re-serialized with
``config_to_text`` and parsed again resolves to the identical mapping.
"""

from __future__ import annotations

import math
import re
from typing import Any, Iterable

from .errors import ArtifactIOError, ConfigurationError

SCHEMES = ("column", "balanced", "shuffled")
WINDOWS = ("sliding", "expanding", "full")
STRATEGIES = ("naive", "ewc", "gem")

# Key -> (kind, default). Order here is the canonical serialization order.
SCHEMA: dict[str, tuple[str, Any]] = {
    "experiment_name": ("str", "fcl"),
    "dataset.num_tasks": ("int", 10),
    "dataset.classes_per_task": ("int", 5),
    "dataset.examples_per_class": ("int", 20),
    "dataset.input_dim": ("int", 32),
    "dataset.noise_sigma": ("float", 0.3),
    "partition.num_clients": ("int", 4),
    "partition.alpha": ("float", 0.5),
    "schedule.scheme": ("str", "column"),
    "federation.clients_per_round": ("int", 0),  # 0 resolves to all clients
    "federation.rounds_per_task": ("int", 10),
    "federation.local_epochs": ("int", 2),
    "federation.batch_size": ("int", 64),
    "federation.lr": ("float", 0.05),
    "federation.aggregation": ("str", "fedavg"),
    "federation.window": ("str", "expanding"),
    "federation.strategy": ("str", "naive"),
    "federation.ewc_lambda": ("float", 10.0),
    "federation.fisher_samples": ("int", 64),
    "federation.gem_memory_per_task": ("int", 16),
    "federation.gem_margin": ("float", 0.0),
    "resources.nodes": ("int", 2),
    "resources.clients_per_node": ("int", 0),  # 0 means derive from nodes
    "resources.speed_jitter": ("float", 0.0),
    "resources.link_latency_s": ("float", 0.01),
    "resources.link_throughput_bps": ("float", 1e9),
    "seeds": ("int_list", (0, 1, 2, 3, 4)),
    "out_dir": ("str", "out"),
}

PROFILE_KEY = re.compile(r"^resources\.profiles\.(\d+)\.([a-z_]+)$")
PROFILE_FIELDS = {
    "speed_factor": "float",
    "node_id": "int",
    "link_latency_s": "float",
    "link_throughput_bps": "float",
}
GENERATOR_KEYS = ("resources.nodes", "resources.clients_per_node", "resources.speed_jitter")


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> raw value strings; duplicates and malformed lines rejected."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigurationError(f"line {lineno}: duplicate key '{key}'")
        raw[key] = value.strip()
    return raw


def read_config_file(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read config file {path}: {exc}") from exc


def _parse_value(key: str, kind: str, raw: str) -> Any:
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError("not finite")
            return value
        if kind == "int_list":
            items = [part.strip() for part in raw.split(",") if part.strip()]
            if not items:
                raise ValueError("empty list")
            return [int(part) for part in items]
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"config key '{key}': cannot parse {raw!r} as {kind}") from exc


def apply_overrides(raw: dict[str, str], overrides: Iterable[str]) -> dict[str, str]:
    out = dict(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        if not key:
            raise ConfigurationError(f"override {item!r} has an empty key")
        out[key] = value.strip()
    return out


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigurationError(message)


def resolve_config(raw: dict[str, str], overrides: Iterable[str] = ()) -> dict[str, Any]:
    """Typed, validated, fully-defaulted config mapping in canonical key order."""
    merged = apply_overrides(raw, overrides)
    profile_values: dict[tuple[int, str], Any] = {}
    for key, value in merged.items():
        if key in SCHEMA:
            continue
        match = PROFILE_KEY.match(key)
        if match is None:
            raise ConfigurationError(f"unknown config key '{key}'")
        index, fld = int(match.group(1)), match.group(2)
        if fld not in PROFILE_FIELDS:
            raise ConfigurationError(f"unknown config key '{key}'")
        profile_values[(index, fld)] = _parse_value(key, PROFILE_FIELDS[fld], value)

    resolved: dict[str, Any] = {}
    for key, (kind, default) in SCHEMA.items():
        if key in merged:
            resolved[key] = _parse_value(key, kind, merged[key])
        else:
            resolved[key] = list(default) if kind == "int_list" else default

    _validate(resolved, profile_values, explicit=set(merged))

    if resolved["federation.clients_per_round"] == 0:
        resolved["federation.clients_per_round"] = resolved["partition.num_clients"]
    for (index, fld) in sorted(profile_values):
        resolved[f"resources.profiles.{index}.{fld}"] = profile_values[(index, fld)]
    return resolved


def _validate(resolved: dict[str, Any], profiles: dict[tuple[int, str], Any], explicit: set[str]) -> None:
    name = resolved["experiment_name"]
    _require(bool(name) and "/" not in name and "\\" not in name and name not in (".", ".."),
             f"experiment_name {name!r} must be a plain directory name")
    for key in ("dataset.num_tasks", "dataset.classes_per_task", "dataset.examples_per_class",
                "dataset.input_dim", "partition.num_clients", "federation.batch_size",
                "federation.fisher_samples", "federation.gem_memory_per_task", "resources.nodes"):
        _require(resolved[key] >= 1, f"config key '{key}': must be >= 1, got {resolved[key]}")
    for key in ("federation.clients_per_round", "federation.rounds_per_task",
                "federation.local_epochs", "resources.clients_per_node"):
        _require(resolved[key] >= 0, f"config key '{key}': must be >= 0, got {resolved[key]}")
    for key in ("dataset.noise_sigma", "partition.alpha", "federation.lr",
                "resources.link_throughput_bps"):
        _require(resolved[key] > 0.0, f"config key '{key}': must be > 0, got {resolved[key]}")
    for key in ("federation.ewc_lambda", "federation.gem_margin", "resources.link_latency_s"):
        _require(resolved[key] >= 0.0, f"config key '{key}': must be >= 0, got {resolved[key]}")
    _require(0.0 <= resolved["resources.speed_jitter"] < 1.0,
             "config key 'resources.speed_jitter': must be in [0, 1)")
    _require(resolved["schedule.scheme"] in SCHEMES,
             f"config key 'schedule.scheme': expected one of {SCHEMES}, got {resolved['schedule.scheme']!r}")
    _require(resolved["federation.window"] in WINDOWS,
             f"config key 'federation.window': expected one of {WINDOWS}, got {resolved['federation.window']!r}")
    _require(resolved["federation.strategy"] in STRATEGIES,
             f"config key 'federation.strategy': expected one of {STRATEGIES}, got {resolved['federation.strategy']!r}")
    _require(resolved["federation.aggregation"] == "fedavg",
             f"config key 'federation.aggregation': only 'fedavg' is supported")
    num_clients = resolved["partition.num_clients"]
    _require(resolved["federation.clients_per_round"] <= num_clients,
             f"config key 'federation.clients_per_round': must be <= num_clients ({num_clients})")
    if resolved["schedule.scheme"] == "balanced":
        _require(num_clients <= resolved["dataset.num_tasks"],
                 "balanced schedule requires partition.num_clients <= dataset.num_tasks")
    seeds = resolved["seeds"]
    _require(len(seeds) >= 1, "config key 'seeds': must list at least one seed")
    _require(all(s >= 0 for s in seeds), "config key 'seeds': seeds must be non-negative")
    _require(len(set(seeds)) == len(seeds), "config key 'seeds': seeds must be distinct")
    _require(bool(resolved["out_dir"]), "config key 'out_dir': must be non-empty")

    if profiles:
        # Only flag generator keys that were set to non-default values, so a
        # serialized resolved config (which spells out defaults) re-parses.
        custom_generator = [
            k for k in GENERATOR_KEYS if k in explicit and resolved[k] != SCHEMA[k][1]
        ]
        _require(not custom_generator,
                 f"explicit resources.profiles.* cannot be combined with {custom_generator}")
        indices = sorted({i for (i, _) in profiles})
        _require(indices == list(range(num_clients)),
                 f"resources.profiles.* must cover clients 0..{num_clients - 1}, got {indices}")
        for i in range(num_clients):
            for fld in PROFILE_FIELDS:
                _require((i, fld) in profiles,
                         f"resources.profiles.{i}.{fld} is missing")
            _require(profiles[(i, "speed_factor")] > 0.0,
                     f"resources.profiles.{i}.speed_factor must be > 0")
            _require(profiles[(i, "link_throughput_bps")] > 0.0,
                     f"resources.profiles.{i}.link_throughput_bps must be > 0")
            _require(profiles[(i, "link_latency_s")] >= 0.0,
                     f"resources.profiles.{i}.link_latency_s must be >= 0")
            _require(profiles[(i, "node_id")] >= 0,
                     f"resources.profiles.{i}.node_id must be >= 0")


def has_explicit_profiles(resolved: dict[str, Any]) -> bool:
    return any(PROFILE_KEY.match(key) for key in resolved)


def config_to_text(resolved: dict[str, Any]) -> str:
    """Serialize a resolved config so that parsing it resolves identically."""
    lines = []
    for key, value in resolved.items():
        if isinstance(value, list):
            rendered = ", ".join(str(v) for v in value)
        elif isinstance(value, float):
            rendered = "%.17g" % value
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"
