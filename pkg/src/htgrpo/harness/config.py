"""Line-oriented ``key = value`` run configuration."""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from ..env import TaskKind
from ..errors import ConfigError
from ..hierarchy import STAGE_ORDER, AnnealMode, StagePlan
from ..rollout import OrderRule
from ..trainer import Paradigm, TrainConfig

_POLICY_KEYS = {
    "vocab_size": int, "seq_len": int, "num_prompts": int,
    "embed_dim": int, "hidden_dim": int, "init_scale": float,
}
_SAMPLER_KEYS = {"steps": int, "temperature": float, "order_rule": OrderRule}
_TOP_KEYS = {
    "alpha": float, "group_size": int, "delta": float, "paradigm": Paradigm,
    "baseline_steps": int, "remask_p_min": float, "remask_p_max": float,
    "learning_rate": float, "cycles": int, "seed": int, "task_kind": TaskKind,
    "task_seed": int, "checkpoint_every": int,
}
_PLAN_KEYS = {
    "budget_global": int, "budget_structure": int, "budget_refinement": int,
    "gamma_max": float, "gamma_min": float, "anneal_mode": AnnealMode,
}
# optional per-stage overrides, e.g. gamma_max_structure
_PLAN_KEYS.update({f"gamma_{b}_{s.value}": float for b in ("max", "min") for s in STAGE_ORDER})
_OTHER_KEYS = {"lambda_s": float, "lambda_r": float, "epsilon": float, "beta": float}

KNOWN_KEYS = {**_POLICY_KEYS, **_SAMPLER_KEYS, **_TOP_KEYS, **_PLAN_KEYS, **_OTHER_KEYS}


def _convert(key: str, raw: str, lineno: int):
    kind = KNOWN_KEYS[key]
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {key!r}: {raw!r} ({exc})") from None


def parse_pairs(text: str) -> dict[str, tuple[object, int]]:
    values: dict[str, tuple[object, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if not raw:
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        values[key] = (_convert(key, raw, lineno), lineno)
    return values


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    """Return ``cfg`` with flat config keys replaced; the result is validated."""
    unknown = set(overrides) - set(KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    ov = {k: KNOWN_KEYS[k](v) if isinstance(v, str) else v for k, v in overrides.items()}
    policy = replace(cfg.policy, **{k: v for k, v in ov.items() if k in _POLICY_KEYS})
    sampler = replace(cfg.sampler, **{k: v for k, v in ov.items() if k in _SAMPLER_KEYS})
    clip = replace(cfg.clip, **{k: ov[k] for k in ("epsilon", "beta") if k in ov})
    credit = replace(cfg.credit, **{k: ov[k] for k in ("lambda_s", "lambda_r") if k in ov})

    plan = cfg.plan
    budgets = list(plan.budgets)
    for idx, s in enumerate(STAGE_ORDER):
        budgets[idx] = ov.get(f"budget_{s.value}", budgets[idx])
    gammas = {}
    for s in STAGE_ORDER:
        g_max, g_min = plan.gammas[s]
        g_max = ov.get(f"gamma_max_{s.value}", ov.get("gamma_max", g_max))
        g_min = ov.get(f"gamma_min_{s.value}", ov.get("gamma_min", g_min))
        gammas[s] = (float(g_max), float(g_min))
    plan = StagePlan(tuple(budgets), gammas, ov.get("anneal_mode", plan.mode))

    out = replace(
        cfg, policy=policy, sampler=sampler, clip=clip, credit=credit, plan=plan,
        **{k: v for k, v in ov.items() if k in _TOP_KEYS},
    )
    out.validate()
    return out


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    pairs = parse_pairs(text)
    base = base or TrainConfig()
    try:
        return apply_overrides(base, {k: v for k, (v, _) in pairs.items()})
    except ConfigError as exc:
        # point at the offending line when the message names a key
        for key, (_, lineno) in pairs.items():
            if key in str(exc):
                raise ConfigError(f"line {lineno}: {exc}") from None
        raise


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def dump_config(cfg: TrainConfig) -> str:
    """Serialize every key so a run can be reproduced from its directory."""
    p, s = cfg.policy, cfg.sampler
    lines = [
        f"vocab_size = {p.vocab_size}", f"seq_len = {p.seq_len}", f"num_prompts = {p.num_prompts}",
        f"embed_dim = {p.embed_dim}", f"hidden_dim = {p.hidden_dim}", f"init_scale = {p.init_scale!r}",
        f"steps = {s.steps}", f"temperature = {s.temperature!r}", f"order_rule = {OrderRule(s.order_rule).value}",
        f"alpha = {cfg.alpha!r}",
    ]
    for idx, st in enumerate(STAGE_ORDER):
        lines.append(f"budget_{st.value} = {cfg.plan.budgets[idx]}")
    lines.append(f"anneal_mode = {AnnealMode(cfg.plan.mode).value}")
    for st in STAGE_ORDER:
        g_max, g_min = cfg.plan.gammas[st]
        lines += [f"gamma_max_{st.value} = {g_max!r}", f"gamma_min_{st.value} = {g_min!r}"]
    lines += [
        f"lambda_s = {cfg.credit.lambda_s!r}", f"lambda_r = {cfg.credit.lambda_r!r}",
        f"epsilon = {cfg.clip.epsilon!r}", f"beta = {cfg.clip.beta!r}", f"delta = {cfg.delta!r}",
        f"group_size = {cfg.group_size}", f"paradigm = {Paradigm(cfg.paradigm).value}",
        f"baseline_steps = {cfg.baseline_steps}",
        f"remask_p_min = {cfg.remask_p_min!r}", f"remask_p_max = {cfg.remask_p_max!r}",
        f"learning_rate = {cfg.learning_rate!r}", f"cycles = {cfg.cycles}", f"seed = {cfg.seed}",
        f"task_kind = {TaskKind(cfg.task_kind).value}", f"task_seed = {cfg.task_seed}",
        f"checkpoint_every = {cfg.checkpoint_every}",
    ]
    return "\n".join(lines) + "\n"

