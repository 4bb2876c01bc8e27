"""Rollout / partition / staged inner loop / synchronize, for all three paradigms."""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from . import env
from .errors import ConfigError, TrainingError
from .harness.metrics import MetricsRow
from .hierarchy import (
    CreditWeights,
    Stage,
    StagePlan,
    TokenPartition,
    credit_weights,
    partition,
    sample_support,
    sampling_rate,
    stage_schedule,
)
from .objective import ClipConfig, RatioKind, group_advantages, group_step
from .policy import PolicyConfig, PolicyParams, forward, fully_masked, init_policy, row_entropies, save_checkpoint
from .rollout import Rollout, SamplerConfig, remask_draw, rollout

log = logging.getLogger(__name__)


class Paradigm(str, Enum):
    HT_GRPO = "ht-grpo"
    RANDOM_REMASK = "random-remask"
    TRAJECTORY = "trajectory"
    REVEALED_STRUCTURE = "revealed-structure"


@dataclass(frozen=True)
class TrainConfig:
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    plan: StagePlan = field(default_factory=StagePlan)
    credit: CreditWeights = field(default_factory=CreditWeights)
    clip: ClipConfig = field(default_factory=ClipConfig)
    alpha: float = 0.3
    group_size: int = 9
    delta: float = 1e-4
    paradigm: Paradigm = Paradigm.HT_GRPO
    baseline_steps: int = 8
    remask_p_min: float = 0.3
    remask_p_max: float = 0.9
    learning_rate: float = 0.05
    cycles: int = 200
    seed: int = 7
    task_kind: env.TaskKind = env.TaskKind.PATTERN
    task_seed: int = 0
    checkpoint_every: int = 0

    def validate(self) -> None:
        self.policy.validate()
        self.sampler.validate(self.policy.seq_len)
        self.plan.validate()
        self.credit.validate()
        self.clip.validate()
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.group_size < 2:
            raise ConfigError(f"group size must be >= 2, got {self.group_size}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.cycles < 0:
            raise ConfigError(f"cycles must be >= 0, got {self.cycles}")
        if self.baseline_steps < 1:
            raise ConfigError("baseline_steps must be >= 1")
        if not 0.0 < self.remask_p_min <= self.remask_p_max < 1.0:
            raise ConfigError("need 0 < remask_p_min <= remask_p_max < 1")
        Paradigm(self.paradigm)

    def task(self) -> env.TaskSpec:
        return _task(env.TaskKind(self.task_kind), self.policy, self.task_seed)


@functools.lru_cache(maxsize=32)
def _task(kind: env.TaskKind, policy: PolicyConfig, seed: int) -> env.TaskSpec:
    return env.make_task(kind, policy, seed)


@dataclass
class TrainState:
    params: PolicyParams
    old: PolicyParams
    ref: PolicyParams
    cycle: int
    rng: np.random.Generator
    metrics: list = field(default_factory=list)


@dataclass
class Trace:
    """Optional per-step diagnostics for tests and analysis."""

    params: list = field(default_factory=list)        # theta before each inner step
    rollouts: list = field(default_factory=list)      # the group of each cycle
    losses: list = field(default_factory=list)
    supports: list = field(default_factory=list)      # (cycle, step, stage, g, M, partition)
    ratio_dev: list = field(default_factory=list)     # (cycle, step, max |r - 1|)
    # remask paradigm: (p_k, |future set|, contaminated) per supported token
    contamination: list = field(default_factory=list)


def init_state(cfg: TrainConfig) -> TrainState:
    cfg.validate()
    params = init_policy(cfg.policy, cfg.seed)
    return TrainState(
        params=params,
        old=params.copy(),
        ref=params.copy(),
        cycle=0,
        rng=np.random.default_rng([cfg.seed, 1]),
    )


def sync_old(state: TrainState) -> TrainState:
    state.old = state.params.copy()
    return state


def remask_rate(cfg: TrainConfig, k: int) -> float:
    """Remask probability for baseline step k, linear from p_min to p_max."""
    K = cfg.baseline_steps
    return cfg.remask_p_min + (cfg.remask_p_max - cfg.remask_p_min) * (k / max(1, K - 1))


def inner_schedule(cfg: TrainConfig) -> list[tuple[str, int, float]]:
    """(stage label, within-stage counter, sampling or remask rate) per inner step."""
    paradigm = Paradigm(cfg.paradigm)
    if paradigm is Paradigm.RANDOM_REMASK:
        return [("remask", k, remask_rate(cfg, k)) for k in range(cfg.baseline_steps)]
    if paradigm is Paradigm.TRAJECTORY:
        return [("trajectory", k, 1.0) for k in range(cfg.baseline_steps)]
    return [
        (stage.value, k_s, sampling_rate(cfg.plan, stage, k_s, cfg.plan.budget(stage)))
        for stage, k_s in stage_schedule(cfg.plan)
    ]


def _stage_entropies(params: PolicyParams, prompt: int, parts: list[TokenPartition]) -> tuple[float, float]:
    H = row_entropies(forward(params, fully_masked(params.config.seq_len), prompt))
    s = float(np.mean([H[p.structure].mean() for p in parts]))
    r = float(np.mean([H[p.refinement].mean() for p in parts]))
    return s, r


def _contamination_events(r: Rollout, M: np.ndarray, p_k: float) -> list[tuple[float, int, bool]]:
    retained = np.ones(r.seq_len, dtype=bool)
    retained[M] = False
    events = []
    for i in M:
        future = r.ranks > r.ranks[i]
        events.append((p_k, int(future.sum()), bool(np.any(future & retained))))
    return events


def train_cycle(
    state: TrainState, cfg: TrainConfig, trace: Optional[Trace] = None
) -> tuple[TrainState, list[MetricsRow]]:
    paradigm = Paradigm(cfg.paradigm)
    task = cfg.task()
    N = cfg.policy.seq_len
    G = cfg.group_size
    prompt = state.cycle % cfg.policy.num_prompts
    reward_fn = env.reward_fn(task)

    # rollout phase, behavior policy frozen
    rollouts = [rollout(state.old, prompt, cfg.sampler, state.rng, reward_fn=reward_fn) for _ in range(G)]
    adv = group_advantages([r.reward for r in rollouts], cfg.delta)
    parts = [partition(r, cfg.alpha) for r in rollouts]
    if trace is not None:
        trace.rollouts.append(rollouts)
    if paradigm in (Paradigm.HT_GRPO, Paradigm.REVEALED_STRUCTURE):
        weights = [credit_weights(p, cfg.credit) for p in parts]
    else:
        weights = [np.ones(N) for _ in rollouts]
    structures = [p.structure for p in parts]
    mean_reward = float(adv.raw_rewards.mean())
    std_reward = float(adv.raw_rewards.std())

    rows = []
    for step, (label, k_s, rate) in enumerate(inner_schedule(cfg)):
        if paradigm is Paradigm.RANDOM_REMASK:
            kind = RatioKind.RANDOM_REMASK
            supports = [np.flatnonzero(remask_draw(N, rate, state.rng)) for _ in rollouts]
            if trace is not None:
                for r, M in zip(rollouts, supports):
                    trace.contamination.extend(_contamination_events(r, M, rate))
        elif paradigm is Paradigm.TRAJECTORY:
            kind = RatioKind.TRAJECTORY
            supports = [np.arange(N) for _ in rollouts]
        else:
            stage = Stage(label)
            supports = [sample_support(p, stage, rate, state.rng) for p in parts]
            if paradigm is Paradigm.REVEALED_STRUCTURE and stage is Stage.REFINEMENT:
                kind = RatioKind.REVEALED_STRUCTURE
            else:
                kind = RatioKind.PROMPT_CONDITIONED

        ent_s, ent_r = _stage_entropies(state.params, prompt, parts)
        where = f"cycle {state.cycle}, step {step} ({label} k={k_s})"
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                res = group_step(
                    state.params, state.old, state.ref, rollouts, supports, weights,
                    adv.advantages, kind, cfg.clip, structures,
                )
        except FloatingPointError as exc:
            raise TrainingError(f"non-finite loss/gradient at {where}: {exc}") from exc
        if not (np.isfinite(res.loss) and np.all(np.isfinite(res.grad))):
            raise TrainingError(f"non-finite loss/gradient at {where}: loss={res.loss}")
        all_ratios = np.concatenate(res.ratios)
        all_binding = np.concatenate(res.binding)
        if trace is not None:
            trace.params.append(state.params.params.copy())
            trace.losses.append(res.loss)
            trace.ratio_dev.append((state.cycle, step, float(np.max(np.abs(all_ratios - 1.0)))))
            for g, M in enumerate(supports):
                trace.supports.append((state.cycle, step, label, g, M, parts[g]))
        rows.append(MetricsRow(
            cycle=state.cycle,
            stage=label,
            k_s=k_s,
            gamma=float(rate),
            mean_reward=mean_reward,
            std_reward=std_reward,
            loss=float(res.loss),
            kl=float(res.kl),
            clip_fraction=float(all_binding.mean()),
            mean_ratio=float(all_ratios.mean()),
            mean_entropy_structure=ent_s,
            mean_entropy_refinement=ent_r,
        ))
        # gradient ascent on the objective == descent on the loss
        with np.errstate(over="ignore", invalid="ignore"):
            theta = state.params.params - cfg.learning_rate * res.grad
        if not np.all(np.isfinite(theta)):
            raise TrainingError(f"update produced non-finite parameters at {where}")
        state.params = PolicyParams(theta, state.params.config, state.params.version + 1)

    sync_old(state)
    state.cycle += 1
    state.metrics.extend(rows)
    return state, rows


def _checkpoint(state: TrainState, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state.params, out_dir / f"ckpt_{state.cycle}.bin")
    save_checkpoint(state.old, out_dir / f"ckpt_{state.cycle}.old.bin")
    ref_path = out_dir / "ref.bin"
    if not ref_path.exists():
        save_checkpoint(state.ref, ref_path)


def train(
    cfg: TrainConfig, checkpoint_dir=None, trace: Optional[Trace] = None
) -> tuple[TrainState, list[MetricsRow]]:
    state = init_state(cfg)
    for _ in range(cfg.cycles):
        state, rows = train_cycle(state, cfg, trace)
        if checkpoint_dir is not None and cfg.checkpoint_every > 0 and state.cycle % cfg.checkpoint_every == 0:
            _checkpoint(state, Path(checkpoint_dir))
        if log.isEnabledFor(logging.DEBUG):
            log.debug("cycle %d reward %.4f loss %.4f", state.cycle, rows[0].mean_reward, rows[-1].loss)
    return state, state.metrics


def run_paradigm(cfg: TrainConfig, checkpoint_dir=None, trace: Optional[Trace] = None):
    """Train a baseline paradigm through the shared loop."""
    if Paradigm(cfg.paradigm) not in (Paradigm.RANDOM_REMASK, Paradigm.TRAJECTORY):
        raise ConfigError(f"run_paradigm expects a baseline paradigm, got {cfg.paradigm}")
    return train(cfg, checkpoint_dir, trace)
