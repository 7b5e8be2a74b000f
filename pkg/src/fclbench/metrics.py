"""Artifact persistence: per-round CSV, run summary JSON, resolved config.

All numbers are rendered with 17 significant digits, which round-trips every
float64 exactly, and all serialization is insertion-ordered, so files written
for the same experiment are byte-identical across runs. Wall-clock time is
kept on the in-memory artifact only; it never reaches disk.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Any

from .errors import ArtifactIOError

ROUNDS_CSV_HEADER = (
    "round",
    "step",
    "avg_accuracy",
    "federator_duration_s",
    "client_durations_json",
    "per_task_accuracy_json",
)


def fmt17(x: float) -> str:
    """Render a float with 17 significant digits (exact float64 round-trip)."""
    return "%.17g" % float(x)


def dumps17(obj: Any) -> str:
    """Deterministic JSON: insertion-ordered keys, floats via fmt17."""
    out = io.StringIO()
    _emit(obj, out)
    return out.getvalue()


def _emit(obj: Any, out: io.StringIO) -> None:
    if obj is None or isinstance(obj, bool):
        out.write(json.dumps(obj))
    elif isinstance(obj, int):
        out.write(str(obj))
    elif isinstance(obj, float):
        out.write(fmt17(obj))
    elif isinstance(obj, str):
        out.write(json.dumps(obj))
    elif isinstance(obj, dict):
        out.write("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                out.write(", ")
            out.write(json.dumps(str(key)))
            out.write(": ")
            _emit(value, out)
        out.write("}")
    elif isinstance(obj, (list, tuple)):
        out.write("[")
        for i, value in enumerate(obj):
            if i:
                out.write(", ")
            _emit(value, out)
        out.write("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class ExperimentArtifact:
    """Everything one run produced, before persistence."""

    config_snapshot: dict[str, Any]
    records: list
    schedule: Any
    wall_time_s: float
    seed: int


def _duration_map(record) -> dict[str, float]:
    return {str(cid): float(record.client_durations_s[cid]) for cid in sorted(record.client_durations_s)}


def _accuracy_map(record) -> dict[str, float]:
    return {str(tid): float(record.per_task_accuracy[tid]) for tid in sorted(record.per_task_accuracy)}


def write_rounds_csv(records: list, path: str) -> None:
    """One row per round; nested per-client/per-task maps embedded as JSON cells."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ROUNDS_CSV_HEADER)
            for rec in records:
                writer.writerow(
                    (
                        rec.round_id,
                        rec.step,
                        fmt17(rec.avg_accuracy),
                        fmt17(rec.federator_duration_s),
                        dumps17(_duration_map(rec)),
                        dumps17(_accuracy_map(rec)),
                    )
                )
    except OSError as exc:
        raise ArtifactIOError(f"cannot write rounds csv to {path}: {exc}") from exc


def read_rounds_csv(path: str) -> list[dict[str, Any]]:
    """Parse a rounds.csv back into typed per-round dicts."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != ROUNDS_CSV_HEADER:
                raise ArtifactIOError(f"unexpected rounds csv header in {path}: {header}")
            rows = []
            for raw in reader:
                rows.append(
                    {
                        "round": int(raw[0]),
                        "step": int(raw[1]),
                        "avg_accuracy": float(raw[2]),
                        "federator_duration_s": float(raw[3]),
                        "client_durations_s": {int(k): v for k, v in json.loads(raw[4]).items()},
                        "per_task_accuracy": {int(k): v for k, v in json.loads(raw[5]).items()},
                    }
                )
            return rows
    except OSError as exc:
        raise ArtifactIOError(f"cannot read rounds csv from {path}: {exc}") from exc


def summary_document(artifact: ExperimentArtifact) -> dict[str, Any]:
    """Cross-run comparison payload: identifiers, headline metrics, resolved config."""
    records = artifact.records
    cfg = artifact.config_snapshot
    final = float(records[-1].avg_accuracy) if records else 0.0
    mean = float(sum(r.avg_accuracy for r in records) / len(records)) if records else 0.0
    return {
        "experiment_name": cfg["experiment_name"],
        "scheme": cfg["schedule.scheme"],
        "seed": artifact.seed,
        "num_rounds": len(records),
        "final_avg_accuracy": final,
        "mean_avg_accuracy": mean,
        "config": dict(cfg),
    }


def write_summary_json(artifact: ExperimentArtifact, path: str) -> dict[str, Any]:
    doc = summary_document(artifact)
    write_text_file(dumps17(doc) + "\n", path)
    return doc


def write_config_json(config_snapshot: dict[str, Any], path: str) -> None:
    write_text_file(dumps17(dict(config_snapshot)) + "\n", path)


def write_text_file(text: str, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc


def run_directory(out_dir: str, experiment_name: str, seed: int) -> str:
    path = os.path.join(out_dir, experiment_name, str(seed))
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create artifact directory {path}: {exc}") from exc
    return path


def write_artifact(artifact: ExperimentArtifact, out_dir: str) -> dict[str, Any]:
    """Persist rounds.csv, summary.json, config.resolved.json for one run.

    Returns the summary document; the run directory is
    <out_dir>/<experiment_name>/<seed>/.
    """
    cfg = artifact.config_snapshot
    run_dir = run_directory(out_dir, cfg["experiment_name"], artifact.seed)
    write_rounds_csv(artifact.records, os.path.join(run_dir, "rounds.csv"))
    doc = write_summary_json(artifact, os.path.join(run_dir, "summary.json"))
    write_config_json(cfg, os.path.join(run_dir, "config.resolved.json"))
    doc["artifact_dir"] = run_dir
    return doc
