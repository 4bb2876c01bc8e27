"""Synthetic prompt-conditioned reward tasks."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError
from .policy import PolicyConfig


class TaskKind(str, Enum):
    COUNT = "count"
    PATTERN = "pattern"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    seq_len: int
    vocab_size: int
    # count: one (target_token, target_count) per prompt; pattern: one template per prompt
    target_tokens: tuple[int, ...] = ()
    target_counts: tuple[int, ...] = ()
    templates: tuple[tuple[int, ...], ...] = ()

    @property
    def num_prompts(self) -> int:
        return len(self.templates) if self.kind is TaskKind.PATTERN else len(self.target_tokens)


def reward(seq, prompt: int, task: TaskSpec) -> float:
    seq = np.asarray(seq)
    if seq.shape != (task.seq_len,):
        raise ValueError(f"sequence length {seq.shape} != ({task.seq_len},)")
    if not 0 <= prompt < task.num_prompts:
        raise ConfigError(f"task has no parameters for prompt {prompt}")
    if task.kind is TaskKind.COUNT:
        count = int(np.sum(seq == task.target_tokens[prompt]))
        return 1.0 - abs(count - task.target_counts[prompt]) / task.seq_len
    template = np.asarray(task.templates[prompt])
    return float(np.mean(seq == template))


def make_task(kind, config: PolicyConfig, seed: int) -> TaskSpec:
    kind = TaskKind(kind)
    rng = np.random.default_rng(seed)
    N, V, P = config.seq_len, config.vocab_size, config.num_prompts
    if kind is TaskKind.COUNT:
        tokens = tuple(int(t) for t in rng.integers(0, V, size=P))
        counts = tuple(int(c) for c in rng.integers(1, N, size=P))
        return TaskSpec(kind, N, V, target_tokens=tokens, target_counts=counts)

    min_dist = N / 4
    templates: list[np.ndarray] = []
    attempts = 0
    while len(templates) < P and attempts < 10_000:
        attempts += 1
        cand = rng.integers(0, V, size=N)
        if all(np.sum(cand != t) >= min_dist for t in templates):
            templates.append(cand)
    if len(templates) < P:
        raise ConfigError(f"could not draw {P} templates at Hamming distance >= {min_dist}")
    return TaskSpec(kind, N, V, templates=tuple(tuple(int(x) for x in t) for t in templates))


def reward_fn(task: TaskSpec):
    return lambda seq, prompt: reward(seq, prompt, task)
