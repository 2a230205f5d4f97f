"""Decoder stack: layer interleaving, forward pass, decoding, weight I/O.

Each block is a sandwich of RMS norms around grouped-query attention and a
gated MLP:

    x = x + norm_post_attn(attn(norm_pre_attn(x)))
    x = x + norm_post_mlp(mlp(norm_pre_mlp(x)))

Attention is QK-normed and rotary-embedded with parameters chosen by the
layer's kind. Logits read out through the tied embedding by default.
Weights are immutable after load and can be shared across threads; each
generation stream owns its private KvCache.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .attention import AttentionConfig, LayerKind, build_mask, gqa_attend, qk_norm
from .errors import CapacityError, ConfigError, ShapeError
from .kvcache import KvCache
from .tensor import RopeParams, rms_norm, rope_apply, softmax_rows

GELU_C = float(np.sqrt(2.0 / np.pi))
GELU_A = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-approximated GELU, the gate nonlinearity of the MLP."""
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x * x * x)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(GELU_C * (x + GELU_A * x * x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)


def layer_kinds(n_layers: int, local_per_global: int = 5) -> list[LayerKind]:
    """Repeating block of `local_per_global` LOCALs then one GLOBAL.

    Position i is GLOBAL iff i % (ratio + 1) == ratio, so the stack starts
    local and a ratio of 0 degenerates to all-global.
    """
    if n_layers < 1:
        raise ConfigError(f"n_layers must be >= 1, got {n_layers}")
    if local_per_global < 0:
        raise ConfigError(f"ratio must be >= 0, got {local_per_global}")
    period = local_per_global + 1
    return [
        LayerKind.GLOBAL if i % period == local_per_global else LayerKind.LOCAL
        for i in range(n_layers)
    ]


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    hidden_dim: int
    vocab_size: int
    max_context: int
    num_query_heads: int
    num_kv_heads: int
    head_dim: int
    local_per_global: int = 5
    window: int = 1024
    rope_local_base: float = 10_000.0
    rope_global_base: float = 1_000_000.0
    rope_scale_local: float = 1.0
    rope_scale_global: float = 1.0
    tie_embeddings: bool = True
    rms_eps: float = 1e-6

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if not 1 <= self.window <= self.max_context:
            raise ConfigError(
                f"window {self.window} must lie in [1, max_context={self.max_context}]"
            )
        if self.num_query_heads % self.num_kv_heads != 0:
            raise ConfigError("num_kv_heads must divide num_query_heads")
        if self.head_dim % 2 != 0:
            raise ConfigError("head_dim must be even")

    def attn_for(self, kind: LayerKind) -> AttentionConfig:
        if kind is LayerKind.LOCAL:
            rope = RopeParams(self.rope_local_base, self.rope_scale_local, self.head_dim)
            return AttentionConfig(
                self.num_query_heads, self.num_kv_heads, self.head_dim, kind, rope, self.window
            )
        rope = RopeParams(self.rope_global_base, self.rope_scale_global, self.head_dim)
        return AttentionConfig(self.num_query_heads, self.num_kv_heads, self.head_dim, kind, rope)

    def kinds(self) -> list[LayerKind]:
        return layer_kinds(self.n_layers, self.local_per_global)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        fields = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in fields})


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def _layer_param_shapes(cfg: ModelConfig) -> dict:
    d, hq, hkv, hd = cfg.d_model, cfg.num_query_heads, cfg.num_kv_heads, cfg.head_dim
    return {
        "wq": (d, hq * hd),
        "wk": (d, hkv * hd),
        "wv": (d, hkv * hd),
        "wo": (hq * hd, d),
        "q_gain": (hq, hd),
        "k_gain": (hkv, hd),
        "pre_attn_norm": (d,),
        "post_attn_norm": (d,),
        "pre_mlp_norm": (d,),
        "post_mlp_norm": (d,),
        "w_gate": (d, cfg.hidden_dim),
        "w_up": (d, cfg.hidden_dim),
        "w_down": (cfg.hidden_dim, d),
    }


def param_shapes(cfg: ModelConfig) -> dict:
    shapes = {"embed": (cfg.vocab_size, cfg.d_model)}
    per_layer = _layer_param_shapes(cfg)
    for i in range(cfg.n_layers):
        for name, shape in per_layer.items():
            shapes[f"layer{i}.{name}"] = shape
    shapes["final_norm"] = (cfg.d_model,)
    if not cfg.tie_embeddings:
        shapes["lm_head"] = (cfg.d_model, cfg.vocab_size)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, scale: float = 0.02) -> dict:
    """Gaussian init for projections and the embedding; unit gains for norms."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        base = name.split(".")[-1]
        if base.endswith("_norm") or base.endswith("_gain"):
            params[name] = np.ones(shape)
        else:
            params[name] = rng.normal(0.0, scale, size=shape)
    return params


def count_params(cfg: ModelConfig) -> dict:
    """Closed-form parameter counts, split like a spec sheet.

    embedding covers the token table; everything else (projections, gains,
    norms, untied head if any) is non_embedding.
    """
    embedding = cfg.vocab_size * cfg.d_model
    per_layer = sum(int(np.prod(s)) for s in _layer_param_shapes(cfg).values())
    non_embedding = cfg.n_layers * per_layer + cfg.d_model
    if not cfg.tie_embeddings:
        non_embedding += cfg.d_model * cfg.vocab_size
    return {"embedding": embedding, "non_embedding": non_embedding}


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def _check_tokens(cfg: ModelConfig, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise ShapeError(f"tokens must be 1-D, got shape {tokens.shape}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise ValueError(f"token ids must lie in [0, {cfg.vocab_size})")
    return tokens


def _split_heads(x: np.ndarray, n_heads: int, head_dim: int) -> np.ndarray:
    # (T, n_heads*head_dim) -> (n_heads, T, head_dim)
    return x.reshape(x.shape[0], n_heads, head_dim).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    # (n_heads, T, head_dim) -> (T, n_heads*head_dim)
    return x.transpose(1, 0, 2).reshape(x.shape[1], -1)


def forward_full(
    params: dict,
    cfg: ModelConfig,
    tokens: Sequence[int],
    positions: Optional[np.ndarray] = None,
    keep_tape: bool = False,
):
    """Whole-sequence forward pass with explicit masks.

    Returns (logits, tape); tape holds the per-layer intermediates the
    backward pass needs and is None unless keep_tape is set.
    """
    tokens = _check_tokens(cfg, tokens)
    T = tokens.shape[0]
    if T > cfg.max_context:
        raise CapacityError(f"sequence length {T} exceeds max_context {cfg.max_context}")
    if positions is None:
        positions = np.arange(T)
    eps = cfg.rms_eps
    h = params["embed"][tokens]
    tape = {"tokens": tokens, "positions": positions, "layers": []} if keep_tape else None

    for i, kind in enumerate(cfg.kinds()):
        p = lambda name: params[f"layer{i}.{name}"]
        att = cfg.attn_for(kind)
        x0 = h
        ln1 = rms_norm(x0, p("pre_attn_norm"), eps)
        q = _split_heads(ln1 @ p("wq"), att.num_query_heads, att.head_dim)
        k = _split_heads(ln1 @ p("wk"), att.num_kv_heads, att.head_dim)
        v = _split_heads(ln1 @ p("wv"), att.num_kv_heads, att.head_dim)
        qn, kn = qk_norm(q, k, p("q_gain"), p("k_gain"), eps)
        qr = rope_apply(qn, positions, att.rope)
        kr = rope_apply(kn, positions, att.rope)
        mask = build_mask(kind, positions, positions, att.window)

        k_exp = np.repeat(kr, att.group_size, axis=0)
        v_exp = np.repeat(v, att.group_size, axis=0)
        scores = qr @ k_exp.transpose(0, 2, 1) / np.sqrt(att.head_dim)
        probs = softmax_rows(scores + mask[None, :, :])
        attn = probs @ v_exp

        merged = _merge_heads(attn)
        attn_out = merged @ p("wo")
        x1 = x0 + rms_norm(attn_out, p("post_attn_norm"), eps)

        ln2 = rms_norm(x1, p("pre_mlp_norm"), eps)
        gate = ln2 @ p("w_gate")
        up = ln2 @ p("w_up")
        act = gelu(gate) * up
        mlp_out = act @ p("w_down")
        h = x1 + rms_norm(mlp_out, p("post_mlp_norm"), eps)

        if keep_tape:
            tape["layers"].append(
                dict(
                    kind=kind, x0=x0, ln1=ln1, q=q, k=k, v=v, qr=qr, kr=kr,
                    probs=probs, merged=merged, attn_out=attn_out, x1=x1,
                    ln2=ln2, gate=gate, up=up, act=act, mlp_out=mlp_out,
                )
            )

    hf = rms_norm(h, params["final_norm"], eps)
    head = params["embed"].T if cfg.tie_embeddings else params["lm_head"]
    logits = hf @ head
    if keep_tape:
        tape["h_last"] = h
        tape["hf"] = hf
    return logits, tape


def make_cache(cfg: ModelConfig) -> KvCache:
    return KvCache(cfg.kinds(), cfg.window, cfg.max_context, cfg.num_kv_heads, cfg.head_dim)


def decode_step(params: dict, cfg: ModelConfig, cache: KvCache, token: int) -> np.ndarray:
    """Append one token to the cache and return its logits row (vocab,)."""
    pos = cache.next_pos
    if pos >= cfg.max_context:
        raise CapacityError(f"context is full at {cfg.max_context} tokens")
    eps = cfg.rms_eps
    h = params["embed"][np.asarray([token], dtype=np.int64)]
    pos_arr = np.asarray([pos])

    for i, kind in enumerate(cfg.kinds()):
        p = lambda name: params[f"layer{i}.{name}"]
        att = cfg.attn_for(kind)
        x0 = h
        ln1 = rms_norm(x0, p("pre_attn_norm"), eps)
        q = _split_heads(ln1 @ p("wq"), att.num_query_heads, att.head_dim)
        k = _split_heads(ln1 @ p("wk"), att.num_kv_heads, att.head_dim)
        v = _split_heads(ln1 @ p("wv"), att.num_kv_heads, att.head_dim)
        qn, kn = qk_norm(q, k, p("q_gain"), p("k_gain"), eps)
        qr = rope_apply(qn, pos_arr, att.rope)
        kr = rope_apply(kn, pos_arr, att.rope)
        cache.append(i, kr[:, 0, :], v[:, 0, :], pos)

        keys, values, key_positions = cache.view(i)  # (S, Hkv, hd) chronological
        mask = build_mask(kind, pos_arr, key_positions, att.window)
        attn = gqa_attend(
            qr, keys.transpose(1, 0, 2), values.transpose(1, 0, 2), att, mask
        )
        attn_out = _merge_heads(attn) @ p("wo")
        x1 = x0 + rms_norm(attn_out, p("post_attn_norm"), eps)

        ln2 = rms_norm(x1, p("pre_mlp_norm"), eps)
        act = gelu(ln2 @ p("w_gate")) * (ln2 @ p("w_up"))
        h = x1 + rms_norm(act @ p("w_down"), p("post_mlp_norm"), eps)

    hf = rms_norm(h, params["final_norm"], eps)
    head = params["embed"].T if cfg.tie_embeddings else params["lm_head"]
    return (hf @ head)[0]


def forward(
    params: dict,
    cfg: ModelConfig,
    tokens: Sequence[int],
    cache: Optional[KvCache] = None,
) -> np.ndarray:
    """Logits (len(tokens), vocab) for a token chunk.

    Without a cache this is a whole-sequence pass. With a cache the tokens
    are consumed one position at a time so every query sees exactly the
    window the cache retains.
    """
    tokens = _check_tokens(cfg, tokens)
    if cache is None:
        logits, _ = forward_full(params, cfg, tokens)
        return logits
    if (
        cache.layer_kinds != cfg.kinds()
        or cache.window != cfg.window
        or cache.max_context != cfg.max_context
        or cache.num_kv_heads != cfg.num_kv_heads
        or cache.head_dim != cfg.head_dim
    ):
        raise ConfigError("cache was built for a different model configuration")
    if cache.next_pos + tokens.shape[0] > cfg.max_context:
        raise CapacityError(
            f"cache at {cache.next_pos} cannot take {tokens.shape[0]} more tokens "
            f"(max_context {cfg.max_context})"
        )
    rows = [decode_step(params, cfg, cache, int(t)) for t in tokens]
    return np.stack(rows) if rows else np.zeros((0, cfg.vocab_size))


def generate(
    params: dict,
    cfg: ModelConfig,
    prompt: Sequence[int],
    max_new: int,
    sampler: str = "greedy",
    temperature: float = 1.0,
    seed: int = 0,
    stop_ids: Sequence[int] = (),
) -> list[int]:
    """Autoregressive decode; stops at max_new tokens or any stop id.

    The stop token, when produced, is kept in the returned sequence.
    Deterministic for a given seed; "greedy" ignores the seed entirely.
    """
    prompt = list(prompt)
    if not prompt:
        raise ValueError("prompt must be non-empty")
    if sampler not in ("greedy", "temperature"):
        raise ValueError(f"unknown sampler {sampler!r}")
    cache = make_cache(cfg)
    logits = forward(params, cfg, prompt, cache)
    out = list(prompt)
    rng = np.random.default_rng(seed)
    stop = set(int(s) for s in stop_ids)
    for _ in range(max_new):
        row = logits[-1]
        if sampler == "greedy":
            nxt = int(np.argmax(row))
        else:
            probs = softmax_rows(row[None, :] / temperature)[0]
            nxt = int(rng.choice(cfg.vocab_size, p=probs))
        out.append(nxt)
        if nxt in stop:
            break
        logits = forward(params, cfg, [nxt], cache)
    return out


# ---------------------------------------------------------------------------
# Weight files: raw little-endian float64 + text manifest
# ---------------------------------------------------------------------------

def save_weights(params: dict, path: str) -> None:
    """Write tensors back to back as '<f8' bytes; manifest maps name/shape/offset."""
    manifest_lines = []
    offset = 0
    with open(path, "wb") as f:
        for name, arr in params.items():
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            f.write(data)
            shape = ",".join(str(s) for s in arr.shape)
            manifest_lines.append(f"{name} {shape} {offset}")
            offset += len(data)
    with open(path + ".manifest", "w") as f:
        f.write("\n".join(manifest_lines) + "\n")


def load_weights(path: str) -> dict:
    params = {}
    with open(path, "rb") as f:
        blob = f.read()
    with open(path + ".manifest") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            name, shape_s, offset_s = line.split()
            shape = tuple(int(s) for s in shape_s.split(","))
            count = int(np.prod(shape)) if shape else 1
            offset = int(offset_s)
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            params[name] = arr.reshape(shape).astype(np.float64)
    return params
