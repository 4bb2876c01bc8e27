"""Group-relative advantages, importance ratios and the clipped surrogate loss.

All three training paradigms share one per-token objective

    (1/|M|) sum_{i in M} min(r_i * A_i, clip(r_i, 1 - eps, 1 + eps) * A_i) - beta * KL

and differ only in the support set ``M``, the conditioning context used for
the ratio ``r_i`` and the per-token weight folded into ``A_i``.  Contexts are
selected with :class:`RatioKind`.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .policy import (
    LOG_FLOOR,
    MASK,
    PolicyParams,
    backward,
    forward_batch,
    fully_masked,
    kl_rows,
    log_softmax,
    softmax,
)
from .rollout import Rollout, context_before


class RatioKind(str, Enum):
    PROMPT_CONDITIONED = "prompt-conditioned"
    RANDOM_REMASK = "random-remask"
    TRAJECTORY = "trajectory"
    # ablation: refinement tokens see the rollout's structural tokens
    REVEALED_STRUCTURE = "revealed-structure"


@dataclass(frozen=True)
class ClipConfig:
    epsilon: float = 0.2
    beta: float = 0.01

    def validate(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not self.beta >= 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")


@dataclass(frozen=True)
class AdvantageGroup:
    raw_rewards: np.ndarray
    advantages: np.ndarray
    delta: float


def group_advantages(rewards, delta: float = 1e-4) -> AdvantageGroup:
    """Standardize rewards within the group using the population std."""
    R = np.asarray(rewards, dtype=np.float64)
    if R.ndim != 1 or R.size < 2:
        raise ValueError("group advantages need at least two rewards")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    centered = R - R.mean()
    # second pass removes the rounding residue of the mean, which 1/delta would amplify
    centered -= centered.mean()
    adv = centered / (R.std() + delta)
    return AdvantageGroup(R, adv, float(delta))


def contamination_probability(p_k: float, f: int) -> float:
    """Chance that at least one of ``f`` future tokens survives independent remasking."""
    if not 0.0 < p_k < 1.0:
        raise ValueError(f"p_k must lie in (0, 1), got {p_k}")
    if f < 0:
        raise ValueError("future-set size must be nonnegative")
    return 1.0 - p_k ** f


def ratio_contexts(
    r: Rollout, kind: RatioKind, M: np.ndarray, structure: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Context batch for the tokens in ``M`` and the batch row each token reads from."""
    kind = RatioKind(kind)
    M = np.asarray(M, dtype=np.int64)
    N = r.seq_len
    if kind is RatioKind.PROMPT_CONDITIONED:
        return fully_masked(N)[None, :], np.zeros(M.size, dtype=np.int64)
    if kind is RatioKind.RANDOM_REMASK:
        ctx = r.final.copy()
        ctx[M] = MASK
        return ctx[None, :], np.zeros(M.size, dtype=np.int64)
    if kind is RatioKind.TRAJECTORY:
        return np.stack([context_before(r, int(i)) for i in M]), np.arange(M.size)
    if structure is None:
        raise ValueError("revealed-structure ratios need the structural set")
    revealed = np.full(N, MASK, dtype=np.int64)
    revealed[structure] = r.final[structure]
    rows = np.where(np.isin(M, structure), 0, 1)
    return np.stack([fully_masked(N), revealed]), rows


def _gather_logp(logits: np.ndarray, rows: np.ndarray, M: np.ndarray, values: np.ndarray):
    lsm = log_softmax(logits)
    raw = lsm[rows, M, values]
    return np.maximum(raw, LOG_FLOOR), raw > LOG_FLOOR


def _old_logp(params_old: PolicyParams, r: Rollout, contexts: np.ndarray, rows: np.ndarray, M: np.ndarray):
    empty = np.all(contexts == MASK, axis=1)
    out = np.empty(M.size)
    from_cache = empty[rows]
    if from_cache.any():
        if r.behavior_probs_empty is None:
            raise RuntimeError("rollout carries no cached fully-masked behavior probabilities")
        out[from_cache] = np.log(r.behavior_probs_empty[M[from_cache]])
    if not from_cache.all():
        logits = forward_batch(params_old, contexts, r.prompt).logits
        lp, _ = _gather_logp(logits, rows, M, r.final[M])
        out[~from_cache] = lp[~from_cache]
    return out


def importance_ratios(
    params: PolicyParams,
    params_old: PolicyParams,
    r: Rollout,
    kind: RatioKind,
    M,
    structure: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-token ratios pi_theta / pi_old for the tokens in ``M``.

    Fully masked contexts read the denominator from the rollout's cache.
    """
    M = np.asarray(M, dtype=np.int64)
    contexts, rows = ratio_contexts(r, kind, M, structure)
    logits = forward_batch(params, contexts, r.prompt).logits
    new, _ = _gather_logp(logits, rows, M, r.final[M])
    return np.exp(new - _old_logp(params_old, r, contexts, rows, M))


def clip_binding(ratios: np.ndarray, adv: np.ndarray, epsilon: float) -> np.ndarray:
    """Tokens whose min() picks the clipped branch strictly; kinks count as unclipped."""
    return ((adv > 0) & (ratios > 1.0 + epsilon)) | ((adv < 0) & (ratios < 1.0 - epsilon))


def clipped_surrogate(ratios, weighted_adv, clip: ClipConfig) -> tuple[float, np.ndarray]:
    """Mean clipped surrogate and its derivative with respect to each ratio."""
    r = np.asarray(ratios, dtype=np.float64)
    a = np.asarray(weighted_adv, dtype=np.float64)
    if r.shape != a.shape or r.ndim != 1:
        raise ValueError(f"ratio/advantage length mismatch: {r.shape} vs {a.shape}")
    if r.size == 0:
        raise ValueError("clipped surrogate needs at least one token")
    eps = clip.epsilon
    terms = np.minimum(r * a, np.clip(r, 1.0 - eps, 1.0 + eps) * a)
    cot = np.where(clip_binding(r, a, eps), 0.0, a) / r.size
    return float(terms.mean()), cot


def _kl_and_dlogits(params: PolicyParams, params_ref: PolicyParams, prompt: int, M: np.ndarray):
    N = params.config.seq_len
    cache = forward_batch(params, fully_masked(N), prompt)
    ref_logits = forward_batch(params_ref, fully_masked(N), prompt).logits[0]
    p = softmax(cache.logits[0])
    kl = kl_rows(p, softmax(ref_logits), M)
    lp = np.maximum(log_softmax(cache.logits[0]), LOG_FLOOR)
    lq = np.maximum(log_softmax(ref_logits), LOG_FLOOR)
    row_kl = np.sum(p * (lp - lq), axis=-1, keepdims=True)
    d = np.zeros_like(cache.logits)
    d[0, M] = p[M] * (lp[M] - lq[M] - row_kl[M]) / M.size
    return kl, cache, d


def kl_penalty(params: PolicyParams, params_ref: PolicyParams, prompt: int, M) -> float:
    """KL(pi_theta || pi_ref) at the fully masked context, averaged over ``M``."""
    M = np.asarray(M, dtype=np.int64)
    if M.size == 0:
        raise ValueError("kl_penalty needs a nonempty support")
    N = params.config.seq_len
    p = softmax(forward_batch(params, fully_masked(N), prompt).logits[0])
    q = softmax(forward_batch(params_ref, fully_masked(N), prompt).logits[0])
    return kl_rows(p, q, M)


@dataclass
class StepResult:
    loss: float
    grad: np.ndarray
    surrogate: float
    kl: float
    ratios: np.ndarray
    binding: np.ndarray


def inner_step(
    params: PolicyParams,
    params_old: PolicyParams,
    params_ref: PolicyParams,
    r: Rollout,
    M,
    weights: np.ndarray,
    A_g: float,
    kind: RatioKind,
    clip: ClipConfig,
    structure: Optional[np.ndarray] = None,
) -> StepResult:
    M = np.asarray(M, dtype=np.int64)
    if M.size == 0:
        raise ValueError("support set is empty")
    contexts, rows = ratio_contexts(r, kind, M, structure)
    cache = forward_batch(params, contexts, r.prompt)
    values = r.final[M]
    new, live = _gather_logp(cache.logits, rows, M, values)
    ratios = np.exp(new - _old_logp(params_old, r, contexts, rows, M))
    adv = A_g * np.asarray(weights, dtype=np.float64)[M]
    surr, cot = clipped_surrogate(ratios, adv, clip)

    # loss = -surr + beta*kl; d loss / d logp_i = -cot_i * r_i
    g_logp = np.where(live, -cot * ratios, 0.0)
    probs = softmax(cache.logits[rows, M])
    d_rows = -probs * g_logp[:, None]
    d_rows[np.arange(M.size), values] += g_logp
    dlogits = np.zeros_like(cache.logits)
    np.add.at(dlogits, (rows, M), d_rows)
    grad = backward(params, cache, dlogits)

    if clip.beta > 0:
        kl, kl_cache, d_kl = _kl_and_dlogits(params, params_ref, r.prompt, M)
        grad = grad + clip.beta * backward(params, kl_cache, d_kl)
    else:
        kl = kl_penalty(params, params_ref, r.prompt, M)
    loss = -(surr - clip.beta * kl)
    return StepResult(loss, grad, surr, kl, ratios, clip_binding(ratios, adv, clip.epsilon))


def inner_step_loss(params, params_old, params_ref, r, M, weights, A_g, kind, clip, structure=None):
    """Scalar loss (negated objective) and its gradient for one group member."""
    res = inner_step(params, params_old, params_ref, r, M, weights, A_g, kind, clip, structure)
    return res.loss, res.grad


@dataclass
class GroupStep:
    loss: float
    grad: np.ndarray
    kl: float
    ratios: list
    binding: list


def group_step(
    params: PolicyParams,
    params_old: PolicyParams,
    params_ref: PolicyParams,
    rollouts: Sequence[Rollout],
    supports: Sequence[np.ndarray],
    weights: Sequence[np.ndarray],
    advantages: np.ndarray,
    kind: RatioKind,
    clip: ClipConfig,
    structures: Optional[Sequence[np.ndarray]] = None,
) -> GroupStep:
    """Mean over the group of per-rollout losses and gradients, in rollout order."""
    G = len(rollouts)
    loss = 0.0
    kl = 0.0
    grad = np.zeros_like(params.params)
    ratios, binding = [], []
    for g in range(G):
        res = inner_step(
            params, params_old, params_ref, rollouts[g], supports[g], weights[g],
            float(advantages[g]), kind, clip, None if structures is None else structures[g],
        )
        loss += res.loss
        kl += res.kl
        grad += res.grad
        ratios.append(res.ratios)
        binding.append(res.binding)
    return GroupStep(loss / G, grad / G, kl / G, ratios, binding)
