"""Iterative unmasking sampler with generation-order ranks."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .policy import MASK, PROB_FLOOR, PolicyParams, forward, forward_batch, fully_masked, softmax


class OrderRule(str, Enum):
    CONFIDENCE = "confidence"
    UNIFORM_RANDOM = "uniform-random"


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 8
    temperature: float = 1.0
    order_rule: OrderRule = OrderRule.CONFIDENCE

    def validate(self, seq_len: int) -> None:
        if not 1 <= self.steps <= seq_len:
            raise ConfigError(f"steps must lie in [1, {seq_len}], got {self.steps}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class Rollout:
    final: np.ndarray                    # x0, shape (N,)
    ranks: np.ndarray                    # 1-based unmasking order, shape (N,)
    prompt: int
    reward: float
    behavior_probs_empty: np.ndarray     # pi_old(final[i] | fully masked, prompt)
    batch_sizes: tuple[int, ...]
    trajectory: Optional[tuple[np.ndarray, ...]] = None   # states x^(T) .. x^(1)

    @property
    def seq_len(self) -> int:
        return int(self.final.shape[0])

    def with_reward(self, reward: float) -> "Rollout":
        return replace(self, reward=float(reward))


def batch_sizes(n: int, steps: int) -> tuple[int, ...]:
    """Unmask counts per step: ceil(n/steps) for the first n % steps steps, floor after."""
    base, extra = divmod(n, steps)
    return tuple(base + 1 if t < extra else base for t in range(steps))


def rollout(
    params_old: PolicyParams,
    prompt: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    record: bool = False,
    reward_fn: Optional[Callable[[np.ndarray, int], float]] = None,
) -> Rollout:
    N = params_old.config.seq_len
    cfg.validate(N)
    state = fully_masked(N)
    ranks = np.zeros(N, dtype=np.int64)
    trajectory = [] if record else None
    next_rank = 1
    sizes = batch_sizes(N, cfg.steps)
    for b in sizes:
        if record:
            trajectory.append(state.copy())
        logits = forward_batch(params_old, state, prompt).logits[0]
        masked = np.flatnonzero(state == MASK)
        if OrderRule(cfg.order_rule) is OrderRule.CONFIDENCE:
            conf = softmax(logits[masked]).max(axis=-1)
            chosen = masked[np.argsort(-conf, kind="stable")[:b]]
        else:
            chosen = rng.choice(masked, size=b, replace=False)
        chosen = np.sort(chosen)
        rows = softmax(logits[chosen], cfg.temperature)
        u = rng.random(len(chosen))
        values = (np.cumsum(rows, axis=-1) < u[:, None]).sum(axis=-1)
        state[chosen] = np.minimum(values, rows.shape[-1] - 1)
        ranks[chosen] = np.arange(next_rank, next_rank + len(chosen))
        next_rank += len(chosen)
    final = state
    empty_probs = forward(params_old, fully_masked(N), prompt)
    cached = np.maximum(empty_probs[np.arange(N), final], PROB_FLOOR)
    reward = float(reward_fn(final, prompt)) if reward_fn is not None else float("nan")
    return Rollout(
        final=final,
        ranks=ranks,
        prompt=int(prompt),
        reward=reward,
        behavior_probs_empty=cached,
        batch_sizes=sizes,
        trajectory=tuple(trajectory) if record else None,
    )


def _check_index(r: Rollout, i: int) -> None:
    if not 0 <= i < r.seq_len:
        raise ValueError(f"position {i} out of range [0, {r.seq_len})")


def context_before(r: Rollout, i: int) -> np.ndarray:
    """State revealing exactly the positions ranked before ``i``, with their final values."""
    _check_index(r, i)
    return np.where(r.ranks < r.ranks[i], r.final, MASK)


def future_set(r: Rollout, i: int) -> np.ndarray:
    _check_index(r, i)
    return np.flatnonzero(r.ranks > r.ranks[i])


def remask_draws(n: int, p_k: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent boolean remask rows of length ``n``.

    A row with nothing remasked is re-forced to remask one uniform position.
    """
    if not 0.0 < p_k < 1.0:
        raise ValueError(f"remask probability must lie in (0, 1), got {p_k}")
    remasked = rng.random((size, n)) < p_k
    empty = np.flatnonzero(~remasked.any(axis=1))
    if empty.size:
        remasked[empty, rng.integers(n, size=empty.size)] = True
    return remasked


def remask_draw(n: int, p_k: float, rng: np.random.Generator) -> np.ndarray:
    return remask_draws(n, p_k, rng, 1)[0]


def remask_context(r: Rollout, p_k: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Independently remask each position with probability ``p_k``.

    Returns the retained-token context and the sorted remasked support set.
    """
    remasked = remask_draw(r.seq_len, p_k, rng)
    return np.where(remasked, MASK, r.final), np.flatnonzero(remasked)


def step_batches(r: Rollout) -> list[np.ndarray]:
    """Positions unmasked at each sampler step, in rank order."""
    order = np.argsort(r.ranks)
    bounds = np.cumsum((0,) + r.batch_sizes)
    return [order[bounds[t]:bounds[t + 1]] for t in range(len(r.batch_sizes))]


def format_trajectory(r: Rollout, seed: int) -> str:
    lines = [f"prompt={r.prompt} seed={seed}"]
    T = len(r.batch_sizes)
    for step, batch in enumerate(step_batches(r)):
        pairs = ",".join(f"{int(p)}:{int(r.final[p])}" for p in sorted(batch))
        lines.append(f"t={T - step} unmasked={pairs}")
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str) -> tuple[int, int, list[tuple[int, list[tuple[int, int]]]]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = dict(kv.split("=") for kv in lines[0].split())
    steps = []
    for ln in lines[1:]:
        t_part, u_part = ln.split(" ", 1)
        t = int(t_part.split("=")[1])
        body = u_part.split("=", 1)[1]
        pairs = [tuple(int(x) for x in item.split(":")) for item in body.split(",") if item]
        steps.append((t, pairs))
    return int(head["prompt"]), int(head["seed"]), steps

