"""Monte-Carlo checks of the entropy and contamination properties.

Entropy checks are paired: every trial evaluates both contexts on the same
sampled trajectory, and the pass rule is ``mean(H_small - H_large) >= -3 SE``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from ..hierarchy import partition
from ..objective import contamination_probability
from ..policy import MASK, PolicyParams, forward_batch, fully_masked, row_entropies, softmax
from ..rollout import SamplerConfig, remask_draws, rollout

SE_MULTIPLIER = 3.0
C2_TOLERANCE = 0.01


@dataclass(frozen=True)
class PropCheck:
    prop: str
    statistic: float
    bound: float
    passed: bool
    trials: int
    detail: str = ""

    def line(self) -> str:
        return f"{self.prop} {self.statistic:.6f} {self.bound:.6f} {'pass' if self.passed else 'fail'}"


@dataclass
class PropositionReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def text(self) -> str:
        return "".join(c.line() + "\n" for c in self.checks)


def _entropy_at(params: PolicyParams, contexts: np.ndarray, prompts: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """(B, N) entropies for a batch of contexts."""
    out = []
    for s in range(0, len(contexts), chunk):
        logits = forward_batch(params, contexts[s:s + chunk], prompts[s:s + chunk]).logits
        out.append(row_entropies(softmax(logits)))
    return np.concatenate(out)


def _paired_check(name: str, diffs: np.ndarray, detail: str = "") -> PropCheck:
    mean = float(diffs.mean())
    se = float(diffs.std(ddof=1) / np.sqrt(diffs.size)) if diffs.size > 1 else 0.0
    bound = -SE_MULTIPLIER * se
    return PropCheck(name, mean, bound, mean >= bound, int(diffs.size), detail)


def verify_prop_c1(
    params: PolicyParams,
    trials: int,
    n: int = 0,
    n_prime: Optional[int] = None,
    sampler: SamplerConfig = SamplerConfig(),
    seed: int = 0,
) -> PropCheck:
    """Mean entropy at a held-out position shrinks as more of its trajectory is revealed."""
    cfg = params.config
    N = cfg.seq_len
    n_prime = N // 2 if n_prime is None else n_prime
    if not 0 <= n <= n_prime <= N - 1:
        raise ValueError(f"need 0 <= n <= n' <= N-1, got n={n}, n'={n_prime}")
    rng = np.random.default_rng(seed)
    ctx_small = np.full((trials, N), MASK, dtype=np.int64)
    ctx_large = np.full((trials, N), MASK, dtype=np.int64)
    prompts = np.arange(trials) % cfg.num_prompts
    held = np.empty(trials, dtype=np.int64)
    for t in range(trials):
        r = rollout(params, int(prompts[t]), sampler, rng)
        i = int(rng.integers(N))
        order = [j for j in np.argsort(r.ranks) if j != i]
        ctx_small[t, order[:n]] = r.final[order[:n]]
        ctx_large[t, order[:n_prime]] = r.final[order[:n_prime]]
        held[t] = i
    rows = np.arange(trials)
    h_small = _entropy_at(params, ctx_small, prompts)[rows, held]
    h_large = _entropy_at(params, ctx_large, prompts)[rows, held]
    return _paired_check(
        f"C1[n={n},n'={n_prime}]", h_small - h_large,
        f"H(n)={h_small.mean():.6f} H(n')={h_large.mean():.6f}",
    )


def contamination_frequency(p_k: float, f: int, trials: int, rng: np.random.Generator, seq_len: int = 64) -> float:
    """Share of remask draws that leave at least one of ``f`` future tokens visible.

    The probed token is ranked ``seq_len - f`` so its future set has exactly ``f`` members.
    ``seq_len`` is large so the empty-draw re-forcing rule has negligible effect.
    """
    if f >= seq_len:
        raise ValueError("future set must be smaller than the sequence")
    remasked = remask_draws(seq_len, p_k, rng, trials)
    contaminated = np.any(~remasked[:, seq_len - f:], axis=1)
    return float(contaminated.mean())


def verify_prop_c2(
    p_grid: Iterable[float] = (0.3, 0.5, 0.9),
    f_grid: Iterable[int] = (1, 3, 10),
    trials: int = 100_000,
    seed: int = 0,
) -> list[PropCheck]:
    rng = np.random.default_rng(seed)
    checks = []
    for p_k in p_grid:
        for f in f_grid:
            freq = contamination_frequency(p_k, f, trials, rng)
            gap = abs(freq - contamination_probability(p_k, f))
            checks.append(PropCheck(
                f"C2[p={p_k},f={f}]", gap, C2_TOLERANCE, gap <= C2_TOLERANCE, trials,
                f"freq={freq:.6f} closed={contamination_probability(p_k, f):.6f}",
            ))
    return checks


def verify_prop_c3(
    params: PolicyParams,
    alpha: float,
    trials: int,
    sampler: SamplerConfig = SamplerConfig(),
    seed: int = 0,
) -> PropCheck:
    """Refinement-token entropy at the fully masked context vs with structure revealed."""
    cfg = params.config
    N = cfg.seq_len
    rng = np.random.default_rng(seed)
    prompts = np.arange(trials) % cfg.num_prompts
    revealed = np.full((trials, N), MASK, dtype=np.int64)
    refine = np.zeros((trials, N), dtype=bool)
    for t in range(trials):
        r = rollout(params, int(prompts[t]), sampler, rng)
        part = partition(r, alpha)
        revealed[t, part.structure] = r.final[part.structure]
        refine[t, part.refinement] = True
    h_empty = _entropy_at(params, np.tile(fully_masked(N), (trials, 1)), prompts)
    h_struct = _entropy_at(params, revealed, prompts)
    counts = refine.sum(axis=1)
    mean_empty = (h_empty * refine).sum(axis=1) / counts
    mean_struct = (h_struct * refine).sum(axis=1) / counts
    return _paired_check(
        f"C3[alpha={alpha}]", mean_empty - mean_struct,
        f"H(empty)={mean_empty.mean():.6f} H(structure)={mean_struct.mean():.6f}",
    )


def verify_all(
    params: PolicyParams,
    alpha: float = 0.3,
    entropy_trials: int = 5000,
    contamination_trials: int = 100_000,
    sampler: SamplerConfig = SamplerConfig(),
    seed: int = 0,
) -> PropositionReport:
    checks = [verify_prop_c1(params, entropy_trials, sampler=sampler, seed=seed)]
    checks += verify_prop_c2(trials=contamination_trials, seed=seed)
    checks.append(verify_prop_c3(params, alpha, entropy_trials, sampler=sampler, seed=seed))
    return PropositionReport(checks)
