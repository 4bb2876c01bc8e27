"""Toy masked-token denoising policy.

A one-hidden-layer network that maps a partially masked token sequence and a
discrete prompt id to a categorical distribution at every position in a
single forward pass.  Per position ``n`` the input features are

    [token-or-mask embedding(n), position embedding(n),
     prompt embedding, mean of visible token embeddings]

followed by ``tanh(W1 z + b1)`` and an output projection ``W2 h + b2``.
Masked positions are encoded as ``MASK`` (-1) in integer context arrays.

Gradients are hand-derived; ``backward`` consumes cotangents with respect to
the output logits, which lets the objective code compose arbitrary scalar
losses over several contexts in one batched pass.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

MASK = -1
PROB_FLOOR = 1e-12
LOG_FLOOR = float(np.log(PROB_FLOOR))

CKPT_MAGIC = "htgrpo-ckpt v1"


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int = 8
    seq_len: int = 16
    num_prompts: int = 4
    embed_dim: int = 8
    hidden_dim: int = 16
    init_scale: float = 0.1

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.seq_len < 2:
            raise ConfigError(f"seq_len must be >= 2, got {self.seq_len}")
        if self.num_prompts < 1:
            raise ConfigError(f"num_prompts must be >= 1, got {self.num_prompts}")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("embed_dim and hidden_dim must be >= 1")
        if not (self.init_scale >= 0 and np.isfinite(self.init_scale)):
            raise ConfigError(f"init_scale must be finite and >= 0, got {self.init_scale}")


def param_shapes(config: PolicyConfig) -> dict[str, tuple[int, ...]]:
    V, N, P = config.vocab_size, config.seq_len, config.num_prompts
    D, H = config.embed_dim, config.hidden_dim
    return {
        "tok_embed": (V, D),
        "mask_embed": (D,),
        "pos_embed": (N, D),
        "prompt_embed": (P, D),
        "W1": (H, 4 * D),
        "b1": (H,),
        "W2": (V, H),
        "b2": (V,),
    }


def param_count(config: PolicyConfig) -> int:
    """Closed form: V*D + D + N*D + P*D + 4*D*H + H + V*H + V."""
    V, N, P = config.vocab_size, config.seq_len, config.num_prompts
    D, H = config.embed_dim, config.hidden_dim
    return V * D + D + N * D + P * D + 4 * D * H + H + V * H + V


@dataclass
class PolicyParams:
    params: np.ndarray
    config: PolicyConfig
    version: int = 0

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.params.copy(), self.config, self.version)

    def views(self) -> dict[str, np.ndarray]:
        return _unpack(self.params, self.config)


def _unpack(flat: np.ndarray, config: PolicyConfig) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for name, shape in param_shapes(config).items():
        size = int(np.prod(shape))
        out[name] = flat[offset:offset + size].reshape(shape)
        offset += size
    return out


def init_policy(config: PolicyConfig, seed: int) -> PolicyParams:
    config.validate()
    rng = np.random.default_rng(seed)
    s = config.init_scale
    flat = rng.uniform(-s, s, size=param_count(config)) if s > 0 else np.zeros(param_count(config))
    return PolicyParams(flat.astype(np.float64), config, 0)


def fully_masked(n: int) -> np.ndarray:
    return np.full(n, MASK, dtype=np.int64)


def _as_batch(params: PolicyParams, contexts, prompts) -> tuple[np.ndarray, np.ndarray]:
    cfg = params.config
    ctx = np.asarray(contexts, dtype=np.int64)
    if ctx.ndim == 1:
        ctx = ctx[None, :]
    if ctx.shape[1] != cfg.seq_len:
        raise ValueError(f"context length {ctx.shape[1]} != seq_len {cfg.seq_len}")
    if np.any((ctx != MASK) & ((ctx < 0) | (ctx >= cfg.vocab_size))):
        raise ValueError("context holds a token outside [0, V)")
    pr = np.broadcast_to(np.asarray(prompts, dtype=np.int64), (ctx.shape[0],))
    if np.any((pr < 0) | (pr >= cfg.num_prompts)):
        raise ValueError(f"prompt id out of range [0, {cfg.num_prompts})")
    return ctx, pr


@dataclass
class ForwardCache:
    contexts: np.ndarray
    prompts: np.ndarray
    visible: np.ndarray
    n_visible: np.ndarray
    z: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    extra: dict = field(default_factory=dict)


def forward_batch(params: PolicyParams, contexts, prompts) -> ForwardCache:
    """Logits for a batch of contexts, shape (B, N, V), plus backward cache."""
    ctx, pr = _as_batch(params, contexts, prompts)
    p = params.views()
    visible = ctx != MASK
    safe = np.where(visible, ctx, 0)
    tok = p["tok_embed"][safe]                                   # (B,N,D)
    e_in = np.where(visible[..., None], tok, p["mask_embed"])
    n_vis = visible.sum(axis=1)                                  # (B,)
    ctx_sum = (tok * visible[..., None]).sum(axis=1)             # (B,D)
    ctx_mean = ctx_sum / np.maximum(n_vis, 1)[:, None]
    B, N = ctx.shape
    D = params.config.embed_dim
    z = np.concatenate(
        [
            e_in,
            np.broadcast_to(p["pos_embed"], (B, N, D)),
            np.broadcast_to(p["prompt_embed"][pr][:, None, :], (B, N, D)),
            np.broadcast_to(ctx_mean[:, None, :], (B, N, D)),
        ],
        axis=-1,
    )
    h = np.tanh(z @ p["W1"].T + p["b1"])
    logits = h @ p["W2"].T + p["b2"]
    return ForwardCache(ctx, pr, visible, n_vis, z, h, logits)


def backward(params: PolicyParams, cache: ForwardCache, dlogits: np.ndarray) -> np.ndarray:
    """Flat gradient of a scalar loss given dLoss/dlogits of shape (B, N, V)."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache.logits.shape:
        raise ValueError(f"cotangent shape {dlogits.shape} != logits shape {cache.logits.shape}")
    if not np.all(np.isfinite(dlogits)):
        raise FloatingPointError("non-finite cotangents")
    cfg = params.config
    D = cfg.embed_dim
    p = params.views()
    grad = np.zeros_like(params.params)
    g = _unpack(grad, cfg)

    g["W2"][...] = np.einsum("bnv,bnh->vh", dlogits, cache.h)
    g["b2"][...] = dlogits.sum(axis=(0, 1))
    da = (dlogits @ p["W2"]) * (1.0 - cache.h ** 2)
    g["W1"][...] = np.einsum("bnh,bnk->hk", da, cache.z)
    g["b1"][...] = da.sum(axis=(0, 1))
    dz = da @ p["W1"]
    d_in, d_pos, d_pr, d_ctx = (dz[..., j * D:(j + 1) * D] for j in range(4))

    g["pos_embed"][...] = d_pos.sum(axis=0)
    np.add.at(g["prompt_embed"], cache.prompts, d_pr.sum(axis=1))

    vis = cache.visible
    g["mask_embed"][...] = d_in[~vis].sum(axis=0)
    np.add.at(g["tok_embed"], cache.contexts[vis], d_in[vis])

    # mean pool: every visible token gets d_ctx / n_visible of its row
    d_mean = d_ctx.sum(axis=1) / np.maximum(cache.n_visible, 1)[:, None]   # (B,D)
    b_idx, _ = np.nonzero(vis)
    np.add.at(g["tok_embed"], cache.contexts[vis], d_mean[b_idx])
    return grad


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    x = logits / temperature
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    x = logits - logits.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def floored_log(probs: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(probs, PROB_FLOOR))


def forward(params: PolicyParams, context, prompt: int) -> np.ndarray:
    """N x V grid of per-position categorical distributions."""
    return softmax(forward_batch(params, context, prompt).logits[0])


def log_prob(params: PolicyParams, context, prompt: int, position: int, value: int) -> float:
    cfg = params.config
    if not 0 <= position < cfg.seq_len:
        raise ValueError(f"position {position} out of range [0, {cfg.seq_len})")
    if not 0 <= value < cfg.vocab_size:
        raise ValueError(f"value {value} out of range [0, {cfg.vocab_size})")
    row = forward(params, context, prompt)[position]
    return float(floored_log(row)[value])


def entropy(row) -> float:
    p = np.asarray(row, dtype=np.float64)
    nz = p > 0
    return float(max(0.0, -np.sum(p[nz] * np.log(p[nz]))))


def row_entropies(probs: np.ndarray) -> np.ndarray:
    """Entropy along the last axis, with 0 ln 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(probs > 0, probs * np.log(probs), 0.0)
    return np.maximum(-t.sum(axis=-1), 0.0)


def kl_rows(p: np.ndarray, q: np.ndarray, positions) -> float:
    """Mean over ``positions`` of KL(p_row || q_row)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    pos = np.asarray(list(positions) if not isinstance(positions, np.ndarray) else positions, dtype=np.int64)
    if pos.size == 0:
        raise ValueError("kl_rows needs a nonempty position set")
    pp, qq = p[pos], q[pos]
    per_row = np.sum(pp * (floored_log(pp) - floored_log(qq)), axis=-1)
    return float(max(0.0, per_row.mean()))


def grad(params: PolicyParams, contexts, prompts, dlogits: np.ndarray) -> np.ndarray:
    """Re-run the forward pass for ``contexts`` and pull ``dlogits`` back to parameters."""
    return backward(params, forward_batch(params, contexts, prompts), dlogits)


def save_checkpoint(params: PolicyParams, path) -> None:
    c = params.config
    header = (
        f"{CKPT_MAGIC}\n"
        f"V={c.vocab_size} N={c.seq_len} P={c.num_prompts} D={c.embed_dim} H={c.hidden_dim}\n"
        f"count={params.params.size}\n"
        f"version={params.version}\n"
    )
    body = struct.pack(f"<{params.params.size}d", *params.params.tolist())
    Path(path).write_bytes(header.encode("ascii") + body)


def load_checkpoint(path) -> PolicyParams:
    raw = Path(path).read_bytes()
    lines = []
    pos = 0
    for _ in range(4):
        end = raw.index(b"\n", pos)
        lines.append(raw[pos:end].decode("ascii"))
        pos = end + 1
    if lines[0] != CKPT_MAGIC:
        raise ValueError(f"not a checkpoint: {path}")
    dims = dict(kv.split("=") for kv in lines[1].split())
    config = PolicyConfig(
        vocab_size=int(dims["V"]), seq_len=int(dims["N"]), num_prompts=int(dims["P"]),
        embed_dim=int(dims["D"]), hidden_dim=int(dims["H"]),
    )
    count = int(lines[2].split("=", 1)[1])
    version = int(lines[3].split("=", 1)[1])
    if count != param_count(config):
        raise ValueError(f"count {count} does not match architecture ({param_count(config)})")
    body = raw[pos:]
    if len(body) != 8 * count:
        raise ValueError(f"truncated checkpoint: expected {8 * count} bytes, got {len(body)}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return PolicyParams(flat, config, version)
