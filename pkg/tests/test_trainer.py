import collections

import numpy as np
import pytest

from htgrpo.errors import ConfigError, TrainingError
from htgrpo.harness.config import apply_overrides
from htgrpo.hierarchy import Stage
from htgrpo.objective import RatioKind, importance_ratios
from htgrpo.policy import PolicyParams, load_checkpoint
from htgrpo.rollout import SamplerConfig, rollout
from htgrpo.trainer import (
    Paradigm,
    TrainConfig,
    Trace,
    init_state,
    inner_schedule,
    remask_rate,
    run_paradigm,
    sync_old,
    train,
    train_cycle,
)


def small(**over):
    return apply_overrides(TrainConfig(), {"cycles": 3, **over})


def test_rows_per_cycle():
    state, rows = train_cycle(init_state(TrainConfig()), TrainConfig())
    assert len(rows) == 8
    assert [r.stage for r in rows] == ["global"] * 2 + ["structure"] * 4 + ["refinement"] * 2
    assert [r.k_s for r in rows] == [0, 1, 0, 1, 2, 3, 0, 1]
    assert state.cycle == 1 and state.params.version == 8


@pytest.mark.parametrize("paradigm", [p.value for p in Paradigm])
def test_first_step_centered(paradigm):
    _, rows = train(small(paradigm=paradigm))
    for row in rows[::8]:
        assert row.mean_ratio == pytest.approx(1.0, abs=1e-10)
        assert row.clip_fraction == 0.0
    for row in rows:
        assert 0.0 <= row.clip_fraction <= 1.0 and row.kl >= 0.0 and 0.0 < row.gamma <= 1.0


def test_zero_learning_rate_keeps_params():
    cfg = small(learning_rate=0.0)
    state = init_state(cfg)
    before = state.params.params.copy()
    state, _ = train_cycle(state, cfg)
    assert state.params.params.tobytes() == before.tobytes()


def test_determinism():
    _, a = train(small(cycles=4))
    _, b = train(small(cycles=4))
    assert a == b


def test_zero_cycles():
    state, rows = train(small(cycles=0))
    assert rows == [] and state.cycle == 0
    assert np.array_equal(state.params.params, init_state(small()).params.params)


def test_reference_immutable():
    cfg = small(cycles=5)
    ref0 = init_state(cfg).ref.params.copy()
    state, _ = train(cfg)
    assert state.ref.params.tobytes() == ref0.tobytes()
    assert state.old.params.tobytes() == state.params.params.tobytes()


def test_sync_old():
    cfg = small()
    state, _ = train(cfg)
    state.params = PolicyParams(state.params.params + 0.1, state.params.config, state.params.version + 1)
    ref = state.ref.params.copy()
    sync_old(state)
    snap = state.old.params.copy()
    sync_old(state)
    assert state.old.params.tobytes() == snap.tobytes()
    assert state.old.params is not state.params.params
    assert state.ref.params.tobytes() == ref.tobytes()
    r = rollout(state.old, 0, SamplerConfig(), np.random.default_rng(0))
    assert np.allclose(importance_ratios(state.params, state.old, r, "prompt-conditioned", np.arange(16)), 1.0,
                       atol=1e-12)


def test_stage_purity():
    trace = Trace()
    train(small(cycles=4), trace=trace)
    seen = set()
    for _, _, label, _, M, part in trace.supports:
        seen.add(label)
        if label == Stage.STRUCTURE.value:
            assert np.all(np.isin(M, part.structure))
        elif label == Stage.REFINEMENT.value:
            assert np.all(np.isin(M, part.refinement))
        assert M.size >= 1
    assert seen == {"global", "structure", "refinement"}


def test_trajectory_supports_are_all_positions():
    trace = Trace()
    train(small(cycles=2, paradigm="trajectory"), trace=trace)
    assert all(np.array_equal(M, np.arange(16)) for *_, M, _ in trace.supports)


def test_remask_schedule():
    cfg = TrainConfig(paradigm=Paradigm.RANDOM_REMASK)
    rates = [rate for _, _, rate in inner_schedule(cfg)]
    assert len(rates) == 8
    assert rates[0] == pytest.approx(0.3) and rates[-1] == pytest.approx(0.9)
    assert np.allclose(np.diff(rates), 0.6 / 7)
    assert remask_rate(cfg, 0) == 0.3


def test_remask_near_one_matches_prompt_conditioned(params, rng):
    r = rollout(params, 0, SamplerConfig(), rng)
    new = PolicyParams(params.params + 0.05 * rng.normal(size=params.params.size), params.config)
    from htgrpo.rollout import remask_context

    _, M = remask_context(r, 1 - 1e-9, rng)
    a = importance_ratios(new, params, r, RatioKind.RANDOM_REMASK, M)
    b = importance_ratios(new, params, r, RatioKind.PROMPT_CONDITIONED, M)
    assert np.max(np.abs(a - b)) <= 1e-6


@pytest.mark.slow
def test_remask_contamination_buckets():
    # a small, fast configuration so each (p_k, f) bucket gets thousands of events
    cfg = apply_overrides(TrainConfig(), dict(
        paradigm="random-remask", seq_len=8, vocab_size=4, steps=4, baseline_steps=2,
        group_size=32, cycles=400, learning_rate=0.0,
    ))
    trace = Trace()
    train(cfg, trace=trace)
    buckets = collections.defaultdict(list)
    for p_k, f, hit in trace.contamination:
        buckets[(p_k, f)].append(hit)
    assert len(buckets) == 16
    for (p_k, f), hits in buckets.items():
        assert abs(np.mean(hits) - (1 - p_k ** f)) <= 0.02, (p_k, f, len(hits))


def test_run_paradigm_guard():
    with pytest.raises(ConfigError):
        run_paradigm(small())
    _, rows = run_paradigm(small(cycles=1, paradigm="random-remask"))
    assert [r.stage for r in rows] == ["remask"] * 8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_aborts():
    cfg = small(learning_rate=1e308)
    with pytest.raises(TrainingError, match="non-finite"):
        train(cfg)


def test_checkpoints(tmp_path):
    cfg = small(cycles=4, checkpoint_every=2)
    state, _ = train(cfg, checkpoint_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["ckpt_2.bin", "ckpt_2.old.bin", "ckpt_4.bin", "ckpt_4.old.bin", "ref.bin"]
    assert load_checkpoint(tmp_path / "ckpt_4.bin").params.tobytes() == state.params.params.tobytes()
    assert load_checkpoint(tmp_path / "ref.bin").params.tobytes() == state.ref.params.tobytes()


@pytest.mark.parametrize("over", [{"group_size": 1}, {"alpha": 0.0}, {"learning_rate": -1.0}])
def test_config_validation(over):
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), over)
