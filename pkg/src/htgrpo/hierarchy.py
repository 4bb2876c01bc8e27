"""Rank partition, staged inner-loop schedule, annealed subset sampling, credit weights."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .rollout import Rollout


class Stage(str, Enum):
    GLOBAL = "global"
    STRUCTURE = "structure"
    REFINEMENT = "refinement"


STAGE_ORDER = (Stage.GLOBAL, Stage.STRUCTURE, Stage.REFINEMENT)


class AnnealMode(str, Enum):
    DOWN = "down"
    UP = "up"
    CONSTANT = "constant"


@dataclass(frozen=True)
class TokenPartition:
    n_s: int
    structure: np.ndarray
    refinement: np.ndarray

    @property
    def seq_len(self) -> int:
        return int(self.structure.size + self.refinement.size)

    def stage_set(self, stage: Stage) -> np.ndarray:
        stage = Stage(stage)
        if stage is Stage.GLOBAL:
            return np.arange(self.seq_len)
        if stage is Stage.STRUCTURE:
            return self.structure
        return self.refinement


def structure_count(n: int, alpha: float) -> int:
    """floor(alpha * n) clamped to [1, n - 1]."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return min(max(math.floor(alpha * n), 1), n - 1)


def partition(r: Rollout, alpha: float) -> TokenPartition:
    return partition_ranks(r.ranks, alpha)


def partition_ranks(ranks: np.ndarray, alpha: float) -> TokenPartition:
    ranks = np.asarray(ranks)
    n_s = structure_count(ranks.size, alpha)
    return TokenPartition(
        n_s=n_s,
        structure=np.flatnonzero(ranks <= n_s),
        refinement=np.flatnonzero(ranks > n_s),
    )


@dataclass(frozen=True)
class StagePlan:
    budgets: tuple[int, int, int] = (2, 4, 2)
    gammas: dict = field(default_factory=lambda: {s: (1.0, 0.5) for s in STAGE_ORDER})
    mode: AnnealMode = AnnealMode.DOWN

    @classmethod
    def uniform(cls, budgets=(2, 4, 2), gamma_max=1.0, gamma_min=0.5, mode=AnnealMode.DOWN) -> "StagePlan":
        plan = cls(tuple(budgets), {s: (gamma_max, gamma_min) for s in STAGE_ORDER}, AnnealMode(mode))
        plan.validate()
        return plan

    @property
    def total(self) -> int:
        return sum(self.budgets)

    def budget(self, stage: Stage) -> int:
        return self.budgets[STAGE_ORDER.index(Stage(stage))]

    def validate(self) -> None:
        if len(self.budgets) != 3 or any(b < 0 for b in self.budgets):
            raise ConfigError(f"stage budgets must be three nonnegative integers, got {self.budgets}")
        if self.total < 1:
            raise ConfigError("total inner-loop budget K must be >= 1")
        for stage in STAGE_ORDER:
            g_max, g_min = self.gammas[stage]
            if not (0.0 < g_min <= g_max <= 1.0):
                raise ConfigError(
                    f"{stage.value}: need 0 < gamma_min <= gamma_max <= 1, got ({g_max}, {g_min})"
                )
        AnnealMode(self.mode)


_SHAPES = {
    AnnealMode.DOWN: lambda p: 1.0 - p,
    AnnealMode.UP: lambda p: p,
    AnnealMode.CONSTANT: lambda p: 0.5,
}


def sampling_rate(plan: StagePlan, stage: Stage, k_s: int, n_s_stage: int) -> float:
    if not 0 <= k_s < n_s_stage:
        raise ValueError(f"k_s={k_s} outside [0, {n_s_stage})")
    g_max, g_min = plan.gammas[Stage(stage)]
    denom = max(1, n_s_stage - 1)
    mode = AnnealMode(plan.mode)
    if mode is AnnealMode.DOWN:
        # written as (denom - k)/denom so the endpoints are exact
        return g_min + (g_max - g_min) * ((denom - k_s) / denom)
    return g_min + (g_max - g_min) * _SHAPES[mode](k_s / denom)


def sample_support(part: TokenPartition, stage: Stage, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(gamma) subset of the stage's eligible positions, never empty."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    eligible = part.stage_set(stage)
    keep = rng.random(eligible.size) < gamma
    if not keep.any():
        keep[rng.integers(eligible.size)] = True
    return eligible[keep]


@dataclass(frozen=True)
class CreditWeights:
    lambda_s: float = 1.5
    lambda_r: float = 0.5

    def validate(self, allow_uniform: bool = True) -> None:
        # lambda_s = lambda_r = 1 is the uniform-credit ablation
        if allow_uniform and self.lambda_s == 1.0 and self.lambda_r == 1.0:
            return
        if not (self.lambda_s > 1.0 > self.lambda_r >= 0.0):
            raise ConfigError(
                f"credit weights need lambda_s > 1 > lambda_r >= 0, got ({self.lambda_s}, {self.lambda_r})"
            )


def credit_weights(part: TokenPartition, cw: CreditWeights) -> np.ndarray:
    w = np.empty(part.seq_len, dtype=np.float64)
    w[part.structure] = cw.lambda_s
    w[part.refinement] = cw.lambda_r
    return w


def stage_schedule(plan: StagePlan) -> list[tuple[Stage, int]]:
    if plan.total < 1:
        raise ConfigError("total inner-loop budget K must be >= 1")
    return [(stage, k) for stage in STAGE_ORDER for k in range(plan.budget(stage))]
