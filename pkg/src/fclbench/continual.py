"""Continual-learning strategies and window-mask construction.

Three strategies: Naive (plain SGD), Ewc (quadratic penalty anchored at
post-task parameter snapshots, weighted by a diagonal empirical Fisher), and
Gem (per-minibatch gradient projection so stored past-task memories never see
their loss gradient reversed). Window masks implement the Task-IL / Domain-IL
/ plain-FL output restrictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConfigurationError, NumericError, WorkloadError
from .model import Batch, ClassMask, ModelParams, per_example_grads
from .workload import TaskSpec

GEM_MAX_ITERS = 1000
GEM_TOL = 1e-9


class WindowMode:
    """Output-class visibility during training and evaluation."""

    SLIDING = "sliding"
    EXPANDING = "expanding"
    FULL = "full"
    ALL = (SLIDING, EXPANDING, FULL)


@dataclass(frozen=True)
class Naive:
    """No forgetting mitigation; sequential fine-tuning."""


@dataclass(frozen=True)
class Ewc:
    lam: float
    fisher_samples: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam >= 0.0):
            raise ConfigurationError("EWC lambda must be finite and >= 0")
        if self.fisher_samples < 1:
            raise ConfigurationError("EWC fisher_samples must be >= 1")


@dataclass(frozen=True)
class Gem:
    memory_per_task: int
    margin: float = 0.0

    def __post_init__(self) -> None:
        if self.memory_per_task < 1:
            raise ConfigurationError("GEM memory_per_task must be >= 1")
        if not (math.isfinite(self.margin) and self.margin >= 0.0):
            raise ConfigurationError("GEM margin must be finite and >= 0")


ContinualStrategy = Union[Naive, Ewc, Gem]


@dataclass(frozen=True)
class EwcAnchor:
    """Post-task parameter snapshot and its diagonal Fisher weights."""

    anchor_params: np.ndarray
    fisher_diag: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchor_params", np.asarray(self.anchor_params, dtype=np.float64))
        object.__setattr__(self, "fisher_diag", np.asarray(self.fisher_diag, dtype=np.float64))
        if self.anchor_params.shape != self.fisher_diag.shape or self.anchor_params.ndim != 1:
            raise ConfigurationError("anchor and fisher vectors must be 1-d and equal length")
        if np.any(self.fisher_diag < 0.0):
            raise ConfigurationError("fisher entries must be non-negative")


@dataclass(frozen=True)
class EpisodicMemory:
    """Stored examples per past task, each at most memory_per_task rows."""

    per_task: dict[int, Batch] = field(default_factory=dict)

    def task_ids(self) -> list[int]:
        return sorted(self.per_task)


@dataclass(frozen=True)
class StrategyState:
    """Per-client continual state carried across tasks."""

    anchors: tuple[EwcAnchor, ...] = ()
    memory: EpisodicMemory = field(default_factory=EpisodicMemory)


def make_window_mask(
    mode: str,
    current_task: TaskSpec,
    tasks_seen: list[TaskSpec],
    num_classes: int,
) -> ClassMask:
    """Active-class mask for training/evaluating ``current_task`` under ``mode``."""
    if mode == WindowMode.FULL:
        return ClassMask.all_active(num_classes)
    if not tasks_seen:
        raise ConfigurationError(f"{mode} window requires a non-empty task history")
    seen_ids = {t.task_id for t in tasks_seen}
    if current_task.task_id not in seen_ids:
        raise ConfigurationError(
            f"task {current_task.task_id} is not in the seen set {sorted(seen_ids)}"
        )
    active = np.zeros(num_classes, dtype=bool)
    if mode == WindowMode.SLIDING:
        active[list(current_task.class_ids)] = True
    elif mode == WindowMode.EXPANDING:
        for t in tasks_seen:
            active[list(t.class_ids)] = True
    else:
        raise ConfigurationError(f"unknown window mode {mode!r}")
    return ClassMask(active)


def estimate_fisher(
    params: ModelParams,
    data: Batch,
    fisher_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Diagonal empirical Fisher: mean squared per-example gradient.

    Gradients are taken at the observed labels with all classes active, so
    the estimate does not depend on any window. When fisher_samples covers
    the whole batch no subsampling (and no rng draw) happens.
    """
    if fisher_samples < 1:
        raise ConfigurationError("fisher_samples must be >= 1")
    n = len(data)
    if n < 1:
        raise WorkloadError("cannot estimate fisher from empty data")
    if fisher_samples < n:
        idx = np.sort(rng.choice(n, size=fisher_samples, replace=False))
        data = Batch(data.inputs[idx], data.labels[idx])
    grads = per_example_grads(params, data, ClassMask.all_active(params.num_classes))
    return np.mean(grads * grads, axis=0)


def ewc_penalty_grad(params: ModelParams, anchors: tuple[EwcAnchor, ...], lam: float) -> np.ndarray:
    """Gradient of the summed anchor penalties: lam * sum_a F_a * (theta - theta*_a)."""
    if not (math.isfinite(lam) and lam >= 0.0):
        raise ConfigurationError("lambda must be finite and >= 0")
    total = np.zeros_like(params.values)
    for anchor in anchors:
        if anchor.anchor_params.shape != params.values.shape:
            raise ConfigurationError("anchor length does not match parameter vector")
        total += anchor.fisher_diag * (params.values - anchor.anchor_params)
    return lam * total


def gem_project(grad: np.ndarray, memory_grads: list[np.ndarray], margin: float = 0.0) -> np.ndarray:
    """Project ``grad`` so no memory gradient's dot product goes negative.

    If every constraint already holds the input is returned untouched.
    Otherwise solves the dual of min ||g~ - g||^2 s.t. <g~, g_k> >= 0 by
    projected coordinate descent on 0.5 v'GG'v + (Gg)'v with v bounded below
    by ``margin``, and returns g + G'v.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to gem_project")
    if not memory_grads:
        return grad
    G = np.stack([np.asarray(g, dtype=np.float64) for g in memory_grads])
    if G.shape[1] != grad.shape[0]:
        raise ConfigurationError("memory gradient length does not match gradient")
    if not np.all(np.isfinite(G)):
        raise NumericError("non-finite memory gradient passed to gem_project")
    dots = G @ grad
    if np.all(dots >= 0.0):
        return grad
    P = G @ G.T
    q = dots
    t = G.shape[0]
    v = np.full(t, margin, dtype=np.float64)
    diag = np.diag(P)
    for _ in range(GEM_MAX_ITERS):
        max_change = 0.0
        for k in range(t):
            if diag[k] <= 0.0:
                new_vk = margin
            else:
                new_vk = max(margin, v[k] - (P[k] @ v + q[k]) / diag[k])
            max_change = max(max_change, abs(new_vk - v[k]))
            v[k] = new_vk
        if max_change < GEM_TOL:
            break
    return grad + G.T @ v


def update_memory(
    memory: EpisodicMemory,
    task: TaskSpec,
    task_data: Batch,
    memory_per_task: int,
    rng: np.random.Generator,
) -> EpisodicMemory:
    """Store a seeded reservoir sample of the task's data under its task ID."""
    if memory_per_task < 1:
        raise ConfigurationError("memory_per_task must be >= 1")
    allowed = set(task.class_ids)
    if not all(int(label) in allowed for label in task_data.labels):
        raise WorkloadError(f"memory data contains labels outside task {task.task_id}")
    n = len(task_data)
    k = min(memory_per_task, n)
    reservoir = list(range(k))
    for i in range(k, n):
        j = int(rng.integers(0, i + 1))
        if j < k:
            reservoir[j] = i
    keep = np.asarray(reservoir, dtype=np.int64)
    stored = Batch(task_data.inputs[keep], task_data.labels[keep])
    per_task = dict(memory.per_task)
    per_task[task.task_id] = stored
    return EpisodicMemory(per_task)
