"""Reverse-mode gradients over the decoder stack and a byte-LM training loop.

The backward pass exists for the toy training and distillation paths only;
it walks the tape recorded by forward_full in reverse, layer by layer.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import ModelConfig, forward_full, gelu, gelu_grad, init_params
from .tensor import rope_unapply, softmax_rows


def _rms_norm_bwd(v, gain, eps, dy):
    """Returns (dv, dgain_elementwise); caller reduces dgain to the gain shape."""
    ms = np.mean(v * v, axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(ms + eps)
    gdy = gain * dy
    dv = gdy * r - v * r**3 * np.mean(gdy * v, axis=-1, keepdims=True)
    return dv, dy * v * r


def cross_entropy(logits: np.ndarray, targets: Sequence[int]):
    """Mean next-token CE and its gradient w.r.t. logits."""
    targets = np.asarray(targets, dtype=np.int64)
    T = logits.shape[0]
    probs = softmax_rows(logits)
    loss = float(-np.mean(np.log(probs[np.arange(T), targets] + 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(T), targets] -= 1.0
    return loss, dlogits / T


def backward_full(params: dict, cfg: ModelConfig, tape: dict, dlogits: np.ndarray) -> dict:
    """Gradients for every parameter given d(loss)/d(logits)."""
    eps = cfg.rms_eps
    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    tokens, positions = tape["tokens"], tape["positions"]
    hf, h_last = tape["hf"], tape["h_last"]

    if cfg.tie_embeddings:
        dhf = dlogits @ params["embed"]
        grads["embed"] += dlogits.T @ hf
    else:
        dhf = dlogits @ params["lm_head"].T
        grads["lm_head"] += hf.T @ dlogits

    dh, dg = _rms_norm_bwd(h_last, params["final_norm"], eps, dhf)
    grads["final_norm"] += dg.sum(axis=0)

    for i in reversed(range(cfg.n_layers)):
        t = tape["layers"][i]
        att = cfg.attn_for(t["kind"])
        p = lambda name: params[f"layer{i}.{name}"]
        g = lambda name: grads[f"layer{i}.{name}"]

        # h = x1 + rms_norm(mlp_out, post_mlp_norm)
        dmlp_out, dg_post = _rms_norm_bwd(t["mlp_out"], p("post_mlp_norm"), eps, dh)
        g("post_mlp_norm")[...] += dg_post.sum(axis=0)
        dact = dmlp_out @ p("w_down").T
        g("w_down")[...] += t["act"].T @ dmlp_out
        dgate = dact * t["up"] * gelu_grad(t["gate"])
        dup = dact * gelu(t["gate"])
        dln2 = dgate @ p("w_gate").T + dup @ p("w_up").T
        g("w_gate")[...] += t["ln2"].T @ dgate
        g("w_up")[...] += t["ln2"].T @ dup
        dx1_ln2, dg_pre = _rms_norm_bwd(t["x1"], p("pre_mlp_norm"), eps, dln2)
        g("pre_mlp_norm")[...] += dg_pre.sum(axis=0)
        dx1 = dh + dx1_ln2

        # x1 = x0 + rms_norm(attn_out, post_attn_norm)
        dattn_out, dg_post_a = _rms_norm_bwd(t["attn_out"], p("post_attn_norm"), eps, dx1)
        g("post_attn_norm")[...] += dg_post_a.sum(axis=0)
        dmerged = dattn_out @ p("wo").T
        g("wo")[...] += t["merged"].T @ dattn_out

        T = dmerged.shape[0]
        dattn = dmerged.reshape(T, att.num_query_heads, att.head_dim).transpose(1, 0, 2)

        # attn = probs @ v_exp ; scores = (qr @ kr_exp.T) / sqrt(hd) + mask
        probs = t["probs"]
        v_exp = np.repeat(t["v"], att.group_size, axis=0)
        kr_exp = np.repeat(t["kr"], att.group_size, axis=0)
        dprobs = dattn @ v_exp.transpose(0, 2, 1)
        dv_exp = probs.transpose(0, 2, 1) @ dattn
        dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
        scale = 1.0 / np.sqrt(att.head_dim)
        dqr = dscores @ kr_exp * scale
        dkr_exp = dscores.transpose(0, 2, 1) @ t["qr"] * scale
        group_shape = (att.num_kv_heads, att.group_size) + dkr_exp.shape[1:]
        dkr = dkr_exp.reshape(group_shape).sum(axis=1)
        dv = dv_exp.reshape(group_shape).sum(axis=1)

        # rope is an orthogonal map: backward = inverse rotation
        dqn = rope_unapply(dqr, positions, att.rope)
        dkn = rope_unapply(dkr, positions, att.rope)

        # qk-norm: per-head rms norm with per-head gains (H, hd)
        dq, dgq = _rms_norm_bwd(t["q"], p("q_gain")[:, None, :], eps, dqn)
        dk, dgk = _rms_norm_bwd(t["k"], p("k_gain")[:, None, :], eps, dkn)
        g("q_gain")[...] += dgq.sum(axis=1)
        g("k_gain")[...] += dgk.sum(axis=1)

        dq_flat = dq.transpose(1, 0, 2).reshape(T, -1)
        dk_flat = dk.transpose(1, 0, 2).reshape(T, -1)
        dv_flat = dv.transpose(1, 0, 2).reshape(T, -1)
        dln1 = dq_flat @ p("wq").T + dk_flat @ p("wk").T + dv_flat @ p("wv").T
        g("wq")[...] += t["ln1"].T @ dq_flat
        g("wk")[...] += t["ln1"].T @ dk_flat
        g("wv")[...] += t["ln1"].T @ dv_flat

        dx0_ln1, dg_pre_a = _rms_norm_bwd(t["x0"], p("pre_attn_norm"), eps, dln1)
        g("pre_attn_norm")[...] += dg_pre_a.sum(axis=0)
        dh = dx1 + dx0_ln1

    np.add.at(grads["embed"], tokens, dh)
    return grads


def loss_and_grads(
    params: dict,
    cfg: ModelConfig,
    tokens: Sequence[int],
    grad_fn: Optional[Callable] = None,
):
    """One forward/backward pass. grad_fn(logits) -> (loss, dlogits); the
    default is next-token cross-entropy over the sequence."""
    tokens = np.asarray(tokens, dtype=np.int64)
    logits, tape = forward_full(params, cfg, tokens[:-1], keep_tape=True)
    if grad_fn is None:
        loss, dlogits = cross_entropy(logits, tokens[1:])
    else:
        loss, dlogits = grad_fn(logits)
    return loss, backward_full(params, cfg, tape, dlogits)


class Adam:
    """Plain Adam; state is keyed by parameter name."""

    def __init__(self, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, grad in grads.items():
            m = self.m.setdefault(name, np.zeros_like(grad))
            v = self.v.setdefault(name, np.zeros_like(grad))
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    params: dict
    losses: list[float] = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)  # step -> params snapshot


def train_byte_lm(
    cfg: ModelConfig,
    data: Sequence[int],
    steps: int,
    lr: float = 3e-3,
    seed: int = 0,
    batch_len: Optional[int] = None,
    checkpoint_steps: Sequence[int] = (),
    grad_fn_for: Optional[Callable] = None,
    init: Optional[dict] = None,
) -> TrainResult:
    """Full-batch (or random-window) Adam training on one token sequence.

    checkpoint_steps snapshots parameters *before* the numbered step, so 0
    captures the initialization. grad_fn_for(window_tokens) may supply a
    custom per-window loss (used by distillation); default is hard-label CE.
    """
    data = np.asarray(data, dtype=np.int64)
    rng = np.random.default_rng(seed)
    # steps mutate arrays in place; never touch a caller's dict
    params = (
        {k: v.copy() for k, v in init.items()} if init is not None
        else init_params(cfg, seed=seed)
    )
    opt = Adam(lr=lr)
    result = TrainResult(params=params)
    wanted = set(checkpoint_steps)
    for step in range(steps):
        if step in wanted:
            result.checkpoints[step] = {k: v.copy() for k, v in params.items()}
        if batch_len is not None and len(data) > batch_len:
            start = int(rng.integers(0, len(data) - batch_len))
            window = data[start : start + batch_len + 1]
        else:
            window = data
        grad_fn = grad_fn_for(window) if grad_fn_for is not None else None
        loss, grads = loss_and_grads(params, cfg, window, grad_fn)
        opt.step(params, grads)
        result.losses.append(loss)
    if steps in wanted:
        result.checkpoints[steps] = {k: v.copy() for k, v in params.items()}
    return result


def mean_ce(params: dict, cfg: ModelConfig, data: Sequence[int]) -> float:
    """Held-out next-token cross-entropy of a trained model."""
    data = np.asarray(data, dtype=np.int64)
    logits, _ = forward_full(params, cfg, data[:-1])
    loss, _ = cross_entropy(logits, data[1:])
    return loss
