"""Acceptance criteria, one test each; the summary prints a pass/fail line per criterion."""
import math
import time

import numpy as np
import pytest

from htgrpo.harness.config import dump_config, parse_config
from htgrpo.harness.metrics import per_cycle, read_csv, write_csv
from htgrpo.harness.props import verify_prop_c1, verify_prop_c2, verify_prop_c3
from htgrpo.hierarchy import (
    STAGE_ORDER,
    Stage,
    StagePlan,
    partition,
    partition_ranks,
    sample_support,
    sampling_rate,
    stage_schedule,
    structure_count,
)
from htgrpo.objective import ClipConfig, RatioKind, group_advantages, group_step, inner_step_loss
from htgrpo.policy import (
    PolicyConfig,
    PolicyParams,
    forward,
    fully_masked,
    init_policy,
    kl_rows,
    load_checkpoint,
    save_checkpoint,
    softmax,
)
from htgrpo.rollout import SamplerConfig, rollout
from htgrpo.trainer import Paradigm, TrainConfig, Trace, train

KINDS = [RatioKind.PROMPT_CONDITIONED, RatioKind.RANDOM_REMASK, RatioKind.TRAJECTORY]


@pytest.mark.criterion(1, "gradient correctness")
def test_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = PolicyConfig()
    clip = ClipConfig(0.2, 0.01)
    h = 1e-5
    worst = 0.0
    for t in range(20):
        old = init_policy(cfg, int(rng.integers(1 << 30)))
        params = PolicyParams(old.params + 0.05 * rng.normal(size=old.params.size), cfg)
        ref = PolicyParams(old.params + 0.05 * rng.normal(size=old.params.size), cfg)
        r = rollout(old, int(rng.integers(4)), SamplerConfig(), rng)
        part = partition(r, 0.3)
        kind = KINDS[t % 3]
        if kind is RatioKind.TRAJECTORY:
            M, w = np.arange(16), np.ones(16)
        elif kind is RatioKind.RANDOM_REMASK:
            M, w = np.flatnonzero(rng.random(16) < 0.5) if t % 2 else np.arange(4, 12), np.ones(16)
        else:
            stage = STAGE_ORDER[t % 3]
            M = sample_support(part, stage, 0.6, rng)
            w = np.where(np.isin(np.arange(16), part.structure), 1.5, 0.5)
        A = float(rng.normal())
        _, g = inner_step_loss(params, old, ref, r, M, w, A, kind, clip)
        for j in rng.choice(g.size, 50, replace=False):
            tp, tm = params.params.copy(), params.params.copy()
            tp[j] += h
            tm[j] -= h
            lp = inner_step_loss(PolicyParams(tp, cfg), old, ref, r, M, w, A, kind, clip)[0]
            lm = inner_step_loss(PolicyParams(tm, cfg), old, ref, r, M, w, A, kind, clip)[0]
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(g[j] - fd) / max(abs(g[j]), abs(fd), 1e-6))
    elapsed = time.perf_counter() - start
    print(f"worst relative error {worst:.3e} in {elapsed:.1f}s")
    assert worst <= 1e-4
    assert elapsed <= 60


@pytest.mark.criterion(2, "ratio centering")
def test_ratio_centering():
    for paradigm in (Paradigm.HT_GRPO, Paradigm.RANDOM_REMASK, Paradigm.TRAJECTORY):
        trace = Trace()
        _, rows = train(TrainConfig(paradigm=paradigm, cycles=100), trace=trace)
        first = [dev for cycle, step, dev in trace.ratio_dev if step == 0]
        assert len(first) == 100
        assert max(first) <= 1e-10, paradigm
        steps = len(rows) // 100
        assert all(rows[c * steps].clip_fraction == 0.0 for c in range(100))


@pytest.mark.criterion(3, "contamination law")
def test_contamination_law():
    start = time.perf_counter()
    checks = verify_prop_c2(p_grid=(0.3, 0.5, 0.9), f_grid=(1, 3, 10), trials=100_000, seed=0)
    elapsed = time.perf_counter() - start
    for c in checks:
        print(c.line(), c.detail)
    assert len(checks) == 9
    assert all(c.passed for c in checks)
    assert elapsed <= 60


@pytest.mark.criterion(4, "entropy reduction on trained policy")
def test_entropy_reduction(trained_seed7):
    state, _ = trained_seed7
    start = time.perf_counter()
    c1 = verify_prop_c1(state.params, 5000, n=0, n_prime=8, seed=0)
    c3 = verify_prop_c3(state.params, 0.3, 5000, seed=0)
    elapsed = time.perf_counter() - start
    for c in (c1, c3):
        print(c.line(), c.detail)
    assert elapsed <= 300
    assert c1.passed, c1.line()
    assert c3.passed, c3.line()


@pytest.mark.criterion(5, "schedule exactness")
def test_schedule_exactness():
    plan = StagePlan.uniform(budgets=(2, 4, 2), gamma_max=1.0, gamma_min=0.5, mode="down")
    got = [sampling_rate(plan, Stage.STRUCTURE, k, 4) for k in range(4)]
    assert np.max(np.abs(np.array(got) - [1.0, 0.8333333333333334, 0.6666666666666667, 0.5])) <= 1e-12
    assert [s.value[0].upper() for s, _ in stage_schedule(plan)] == list("GGSSSSRR")
    for alpha in (0.1, 0.3, 0.5):
        for n in (10, 16, 64):
            expected = min(max(math.floor(alpha * n), 1), n - 1)
            assert structure_count(n, alpha) == expected
            part = partition_ranks(np.random.default_rng(n).permutation(n) + 1, alpha)
            assert (part.structure.size, part.refinement.size) == (expected, n - expected)


def _reward_gain(rows):
    rewards = [c[1] for c in per_cycle(rows)]
    return float(np.mean(rewards[:10])), float(np.mean(rewards[-10:]))


@pytest.mark.criterion(6, "learning signal")
def test_learning_signal(trained_seed7):
    results = {7: _reward_gain(trained_seed7[1])}
    for seed in (8, 9, 10, 11):
        start = time.perf_counter()
        _, rows = train(TrainConfig(seed=seed, cycles=200))
        assert time.perf_counter() - start <= 600
        results[seed] = _reward_gain(rows)
    for seed, (first, last) in results.items():
        print(f"seed {seed}: first10 {first:.4f} last10 {last:.4f}")
    assert sum(last > first for first, last in results.values()) >= 4


def _unified_loss(params, old, ref, rollouts, adv, clip):
    """Uniform-weight objective over all tokens at the fully masked context, computed directly."""
    N = params.config.seq_len
    total = 0.0
    for r, a in zip(rollouts, adv):
        p = forward(params, fully_masked(N), r.prompt)
        q = forward(ref, fully_masked(N), r.prompt)
        ratios = np.maximum(p[np.arange(N), r.final], 1e-12) / r.behavior_probs_empty
        surr = np.mean(np.minimum(ratios * a, np.clip(ratios, 1 - clip.epsilon, 1 + clip.epsilon) * a))
        kl = np.mean(np.sum(p * (np.log(np.maximum(p, 1e-12)) - np.log(np.maximum(q, 1e-12))), axis=1))
        total += -(surr - clip.beta * kl)
    return total / len(rollouts)


@pytest.mark.criterion(7, "degenerate reduction")
def test_degenerate_reduction():
    cfg = parse_config("""
        lambda_s = 1.0
        lambda_r = 1.0
        budget_global = 8
        budget_structure = 0
        budget_refinement = 0
        gamma_max = 1.0
        gamma_min = 1.0
        anneal_mode = constant
        cycles = 10
    """)
    trace = Trace()
    state, rows = train(cfg, trace=trace)
    assert len(trace.losses) == 80
    ref = init_policy(cfg.policy, cfg.seed)
    K = 8
    for c in range(10):
        rollouts = trace.rollouts[c]
        adv = group_advantages([r.reward for r in rollouts], cfg.delta).advantages
        old = PolicyParams(trace.params[c * K], cfg.policy)
        for k in range(K):
            theta = PolicyParams(trace.params[c * K + k], cfg.policy)
            supports = [M for (cy, st, _, _, M, _) in trace.supports if cy == c and st == k]
            assert all(np.array_equal(M, np.arange(16)) for M in supports)
            uniform = group_step(theta, old, ref, rollouts, [np.arange(16)] * len(rollouts),
                                 [np.ones(16)] * len(rollouts), adv, RatioKind.PROMPT_CONDITIONED, cfg.clip)
            assert uniform.loss == trace.losses[c * K + k]          # bit-for-bit
            assert rows[c * K + k].loss == trace.losses[c * K + k]
            direct = _unified_loss(theta, old, ref, rollouts, adv, cfg.clip)
            assert direct == pytest.approx(uniform.loss, abs=1e-12)


@pytest.mark.criterion(8, "invariant suite")
def test_invariant_suite(tmp_path):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    # advantage zero-sum
    for _ in range(500):
        R = rng.normal(size=int(rng.integers(2, 20))) * 10 ** rng.uniform(-3, 3)
        assert abs(group_advantages(R).advantages.sum()) <= 1e-9
    assert abs(group_advantages([683.3084372268484] * 3).advantages.sum()) <= 1e-9
    # KL
    for _ in range(500):
        p = softmax(rng.normal(size=(4, 8)) * 4)
        q = softmax(rng.normal(size=(4, 8)) * 4)
        assert kl_rows(p, q, range(4)) >= 0.0
        assert kl_rows(p, p, range(4)) <= 1e-12
    # ranks and supports
    params = init_policy(PolicyConfig(), 3)
    for t in range(200):
        steps = int(rng.integers(1, 17))
        r = rollout(params, t % 4, SamplerConfig(steps=steps), rng)
        assert sorted(r.ranks.tolist()) == list(range(1, 17))
        part = partition(r, float(rng.uniform(0.01, 0.99)))
        for stage in STAGE_ORDER:
            M = sample_support(part, stage, float(rng.uniform(1e-3, 1.0)), rng)
            assert M.size >= 1 and np.all(np.isin(M, part.stage_set(stage)))
    # reference immutability
    trace_cfg = TrainConfig(cycles=5)
    ref0 = init_policy(trace_cfg.policy, trace_cfg.seed).params.copy()
    state, rows = train(trace_cfg)
    assert state.ref.params.tobytes() == ref0.tobytes()
    # checkpoint round trip
    save_checkpoint(state.params, tmp_path / "c.bin")
    back = load_checkpoint(tmp_path / "c.bin")
    assert back.params.tobytes() == state.params.params.tobytes() and back.version == state.params.version
    # config and CSV schema
    assert parse_config(dump_config(trace_cfg)) == trace_cfg
    assert parse_config("") == TrainConfig()
    write_csv(rows, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == (
        "cycle,stage,k_s,gamma,mean_reward,std_reward,loss,kl,clip_fraction,mean_ratio,"
        "mean_entropy_structure,mean_entropy_refinement"
    )
    assert read_csv(tmp_path / "m.csv") == rows
    assert time.perf_counter() - start <= 120
