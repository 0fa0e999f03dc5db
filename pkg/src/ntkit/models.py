"""The shared recognizer architecture: a unidirectional LSTM listener, an
additive (optionally multi-head) attender, and an LSTM speller with an output
projection that includes the end-of-block epsilon row.

The full-sequence model attends over every encoder frame at each output step;
the streaming transducer restricts attention to a per-block window with
configurable look-back and look-ahead. Both share one parameter record, so a
full-sequence model trained with the dormant epsilon row transfers into the
streaming model by a plain copy.

Gradients are manual reverse-mode, written against the cached forward pass;
`numerics.grad_check` is the contract for every path through here.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, LabelError, NonFiniteError, ShapeError, TransferError
from .numerics import (
    DTYPE,
    LstmParams,
    LstmState,
    ParamDict,
    _cell_bwd,
    _cell_fwd,
    log_softmax,
    softmax,
    zero_state,
)
from .targets import BlockTargets, num_blocks

CKPT_MAGIC = "ntkit-ckpt v1"


# ---------------------------------------------------------------------------
# Configuration and parameter records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    vocab_size: int
    eps_id: int
    sos_id: int
    enc_layers: int = 2
    enc_width: int = 64
    dec_layers: int = 2
    dec_width: int = 64
    attn_dim: int = 0  # 0 means "use dec_width"
    heads: int = 1

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be at least 2")
        if not (0 <= self.eps_id < self.vocab_size):
            raise ConfigError(f"epsilon index {self.eps_id} outside vocabulary")
        if not (0 <= self.sos_id < self.vocab_size):
            raise ConfigError(f"sos index {self.sos_id} outside vocabulary")
        if self.heads < 1 or self.enc_width % self.heads != 0:
            raise ConfigError(
                f"encoder width {self.enc_width} not divisible by {self.heads} heads"
            )
        if min(self.input_dim, self.enc_layers, self.enc_width,
               self.dec_layers, self.dec_width) < 1:
            raise ConfigError("model dimensions must be positive")

    @property
    def attention_dim(self) -> int:
        return self.attn_dim if self.attn_dim > 0 else self.dec_width

    @property
    def head_width(self) -> int:
        return self.enc_width // self.heads


@dataclass(frozen=True)
class WindowSpec:
    """Attention window geometry: block size, look-back blocks, look-ahead frames."""

    block_size: int
    lookback: int
    lookahead: int
    frame_ms: int = 30

    def __post_init__(self):
        if self.block_size < 1:
            raise ConfigError(f"block size must be >= 1, got {self.block_size}")
        if self.lookback < 0 or self.lookahead < 0:
            raise ConfigError("lookback and lookahead must be non-negative")


def attention_window(b: int, spec: WindowSpec, num_frames: int) -> tuple[int, int]:
    """Inclusive 1-based frame range a block may attend to.

    Window = [(b - k) * W + 1 .. b * W + lookahead], clamped to the utterance.
    The window always covers at least the current block, so k = 0 and k = 1
    both mean "the current block only".
    """
    if not 1 <= b:
        raise ConfigError(f"block index {b} must be >= 1")
    w = spec.block_size
    start = max(1, (b - max(spec.lookback, 1)) * w + 1)
    end = min(num_frames, b * w + spec.lookahead)
    return start, end


def window_slice(b0: int, spec: WindowSpec, num_frames: int) -> tuple[int, int]:
    """0-based half-open variant of attention_window for array slicing."""
    start, end = attention_window(b0 + 1, spec, num_frames)
    return start - 1, end


def latency_ms(spec: WindowSpec) -> int:
    """User-visible delay: a full block plus the look-ahead, in milliseconds."""
    return (spec.block_size + spec.lookahead) * spec.frame_ms


def param_order(cfg: ModelConfig) -> list[str]:
    """Canonical parameter name order; also the checkpoint field order."""
    names = []
    for i in range(cfg.enc_layers):
        names += [f"enc{i}.w_x", f"enc{i}.w_h", f"enc{i}.b"]
    names += ["attn.w_q", "attn.w_k", "attn.v"]
    for i in range(cfg.dec_layers):
        names += [f"dec{i}.w_x", f"dec{i}.w_h", f"dec{i}.b"]
    names += ["out.w", "out.b"]
    return names


def param_shape(name: str, cfg: ModelConfig) -> tuple[int, ...]:
    a = cfg.attention_dim
    if name.startswith("enc"):
        layer = int(name[3 : name.index(".")])
        din = cfg.input_dim if layer == 0 else cfg.enc_width
        kind = name.split(".")[1]
        return {
            "w_x": (4 * cfg.enc_width, din),
            "w_h": (4 * cfg.enc_width, cfg.enc_width),
            "b": (4 * cfg.enc_width,),
        }[kind]
    if name.startswith("dec"):
        layer = int(name[3 : name.index(".")])
        din = cfg.vocab_size + cfg.enc_width if layer == 0 else cfg.dec_width
        kind = name.split(".")[1]
        return {
            "w_x": (4 * cfg.dec_width, din),
            "w_h": (4 * cfg.dec_width, cfg.dec_width),
            "b": (4 * cfg.dec_width,),
        }[kind]
    return {
        "attn.w_q": (cfg.heads, a, cfg.dec_width),
        "attn.w_k": (cfg.heads, a, cfg.head_width),
        "attn.v": (cfg.heads, a),
        "out.w": (cfg.vocab_size, cfg.dec_width),
        "out.b": (cfg.vocab_size,),
    }[name]


@dataclass
class ModelParams:
    """Parameter record shared by the full-sequence and streaming models."""

    config: ModelConfig
    tensors: ParamDict

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def validate_params(params: ModelParams) -> None:
    expected = param_order(params.config)
    if sorted(params.tensors) != sorted(expected):
        missing = set(expected) - set(params.tensors)
        extra = set(params.tensors) - set(expected)
        raise ShapeError(f"parameter record mismatch: missing {missing}, extra {extra}")
    for name in expected:
        shape = param_shape(name, params.config)
        if params.tensors[name].shape != shape:
            raise ShapeError(
                f"parameter {name}: shape {params.tensors[name].shape}, expected {shape}"
            )


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Seeded init: weights uniform in [-0.05, 0.05], forget-gate biases 1."""
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors: ParamDict = {}
    for name in param_order(cfg):
        shape = param_shape(name, cfg)
        if name.endswith(".b"):
            b = np.zeros(shape, dtype=DTYPE)
            if name.startswith(("enc", "dec")):
                width = shape[0] // 4
                b[width : 2 * width] = 1.0
            tensors[name] = b
        else:
            tensors[name] = rng.uniform(-0.05, 0.05, size=shape).astype(DTYPE)
    return ModelParams(cfg, tensors)


def layer_params(params: ModelParams, prefix: str) -> LstmParams:
    t = params.tensors
    return LstmParams(w_x=t[f"{prefix}.w_x"], w_h=t[f"{prefix}.w_h"], b=t[f"{prefix}.b"])


def transfer_from_las(las_params: ModelParams) -> ModelParams:
    """Identity copy of a full-sequence model's parameters for streaming use.

    The output projection already carries the epsilon row (dormant during
    full-sequence training), so transfer is a plain validated copy.
    """
    try:
        validate_params(las_params)
    except ShapeError as exc:
        raise TransferError(str(exc)) from exc
    return las_params.copy()


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


def _encode_cached(params: ModelParams, frames: np.ndarray):
    """Run the listener stack; returns (H, per-layer caches for backward)."""
    cfg = params.config
    if frames.ndim != 2 or frames.shape[1] != cfg.input_dim:
        raise ShapeError(
            f"encoder input: shape {frames.shape}, expected (T, {cfg.input_dim})"
        )
    t_total = frames.shape[0]
    x = frames
    caches = []
    width = cfg.enc_width
    for layer in range(cfg.enc_layers):
        lp = layer_params(params, f"enc{layer}")
        pre_x = x @ lp.w_x.T + lp.b  # (T, 4H): input contribution batched over time
        gates = np.empty((t_total, 4 * width), dtype=DTYPE)
        cells = np.empty((t_total, width), dtype=DTYPE)
        tanh_c = np.empty((t_total, width), dtype=DTYPE)
        hidden = np.empty((t_total, width), dtype=DTYPE)
        h = np.zeros(width, dtype=DTYPE)
        c = np.zeros(width, dtype=DTYPE)
        for t in range(t_total):
            h, c, (g, _cp, tc) = _cell_fwd(pre_x[t] + lp.w_h @ h, c)
            gates[t] = g
            cells[t] = c
            tanh_c[t] = tc
            hidden[t] = h
        caches.append({"x": x, "gates": gates, "cells": cells, "tanh_c": tanh_c,
                       "hidden": hidden})
        x = hidden
    return x, caches


def _encode_backward(params: ModelParams, caches, d_top: np.ndarray, grads: ParamDict):
    """Backpropagate dH through the listener stack, accumulating into grads."""
    cfg = params.config
    width = cfg.enc_width
    d_out = d_top
    for layer in range(cfg.enc_layers - 1, -1, -1):
        lp = layer_params(params, f"enc{layer}")
        cache = caches[layer]
        t_total = cache["x"].shape[0]
        d_pre = np.empty((t_total, 4 * width), dtype=DTYPE)
        dh_next = np.zeros(width, dtype=DTYPE)
        dc_next = np.zeros(width, dtype=DTYPE)
        zeros = np.zeros(width, dtype=DTYPE)
        for t in range(t_total - 1, -1, -1):
            c_prev = cache["cells"][t - 1] if t > 0 else zeros
            cell_cache = (cache["gates"][t], c_prev, cache["tanh_c"][t])
            dpre, dc_next = _cell_bwd(cell_cache, d_out[t] + dh_next, dc_next)
            d_pre[t] = dpre
            dh_next = lp.w_h.T @ dpre
        h_prev = np.vstack([zeros, cache["hidden"][:-1]])
        grads[f"enc{layer}.w_x"] += d_pre.T @ cache["x"]
        grads[f"enc{layer}.w_h"] += d_pre.T @ h_prev
        grads[f"enc{layer}.b"] += d_pre.sum(axis=0)
        d_out = d_pre @ lp.w_x
    return d_out


def encode_utterance(params: ModelParams, frames) -> np.ndarray:
    """Encoder states, one row per frame; row t depends only on frames <= t."""
    frames = np.asarray(frames, dtype=DTYPE)
    h, _ = _encode_cached(params, frames)
    if not np.all(np.isfinite(h)):
        raise NonFiniteError("encoder states contain NaN or Inf")
    return h


# ---------------------------------------------------------------------------
# Attention over precomputed key projections
# ---------------------------------------------------------------------------


def precompute_keys(params: ModelParams, enc: np.ndarray) -> np.ndarray:
    """Per-head key projections of the encoder states, (heads, T, A)."""
    cfg = params.config
    w_k = params.tensors["attn.w_k"]
    out = np.empty((cfg.heads, enc.shape[0], cfg.attention_dim), dtype=DTYPE)
    for h in range(cfg.heads):
        sl = slice(h * cfg.head_width, (h + 1) * cfg.head_width)
        out[h] = enc[:, sl] @ w_k[h].T
    return out


def _attn_fwd(params: ModelParams, enc: np.ndarray, kproj: np.ndarray,
              query: np.ndarray, s: int, e: int):
    """Attention step over window rows [s, e). Returns (context, alpha, cache)."""
    cfg = params.config
    w_q, v = params.tensors["attn.w_q"], params.tensors["attn.v"]
    n = e - s
    alpha = np.empty((cfg.heads, n), dtype=DTYPE)
    th = np.empty((cfg.heads, n, cfg.attention_dim), dtype=DTYPE)
    ctx = np.empty(cfg.enc_width, dtype=DTYPE)
    for h in range(cfg.heads):
        sl = slice(h * cfg.head_width, (h + 1) * cfg.head_width)
        t_h = np.tanh((w_q[h] @ query)[None, :] + kproj[h, s:e])
        a_h = softmax(t_h @ v[h])
        th[h] = t_h
        alpha[h] = a_h
        ctx[sl] = a_h @ enc[s:e, sl]
    return ctx, alpha, (query, s, e, th, alpha)


def _attn_bwd(params: ModelParams, enc: np.ndarray, cache, d_ctx: np.ndarray,
              grads: ParamDict, d_kproj: np.ndarray, d_enc: np.ndarray) -> np.ndarray:
    """Backward of one attention step; returns the query gradient."""
    cfg = params.config
    w_q, v = params.tensors["attn.w_q"], params.tensors["attn.v"]
    query, s, e, th, alpha = cache
    d_query = np.zeros(cfg.dec_width, dtype=DTYPE)
    for h in range(cfg.heads):
        sl = slice(h * cfg.head_width, (h + 1) * cfg.head_width)
        d_ctx_h = d_ctx[sl]
        a_h = alpha[h]
        d_alpha = enc[s:e, sl] @ d_ctx_h
        d_enc[s:e, sl] += np.outer(a_h, d_ctx_h)
        d_scores = a_h * (d_alpha - float(a_h @ d_alpha))
        grads["attn.v"][h] += th[h].T @ d_scores
        d_tanh_arg = np.outer(d_scores, v[h]) * (1.0 - th[h] * th[h])
        d_kproj[h, s:e] += d_tanh_arg
        d_a = d_tanh_arg.sum(axis=0)
        grads["attn.w_q"][h] += np.outer(d_a, query)
        d_query += w_q[h].T @ d_a
    return d_query


def _finish_key_grads(params: ModelParams, enc: np.ndarray, d_kproj: np.ndarray,
                      grads: ParamDict, d_enc: np.ndarray) -> None:
    cfg = params.config
    w_k = params.tensors["attn.w_k"]
    for h in range(cfg.heads):
        sl = slice(h * cfg.head_width, (h + 1) * cfg.head_width)
        grads["attn.w_k"][h] += d_kproj[h].T @ enc[:, sl]
        d_enc[:, sl] += d_kproj[h] @ w_k[h]


# ---------------------------------------------------------------------------
# Teacher-forced forward / backward
# ---------------------------------------------------------------------------


@dataclass
class ForwardResult:
    loss: float
    token_logps: np.ndarray  # log-prob of each target token, length n
    attention: np.ndarray | None = None  # (n, T) mean-over-heads weights
    grads: ParamDict | None = None


def _dec0_fwd(lp: LstmParams, cfg: ModelConfig, token: int, ctx: np.ndarray,
              state: LstmState):
    """Speller layer 0 consumes [onehot(prev token), context] without forming
    the one-hot explicitly: the token picks a column of w_x."""
    pre = lp.w_x[:, token] + lp.w_x[:, cfg.vocab_size:] @ ctx + lp.w_h @ state.hidden + lp.b
    hidden, c, cell_cache = _cell_fwd(pre, state.cell)
    return hidden, LstmState(cell=c, hidden=hidden), cell_cache


def _teacher_forced(
    params: ModelParams,
    frames: np.ndarray,
    targets: Sequence[int],
    windows: Sequence[tuple[int, int]],
    want_grads: bool = False,
    want_attention: bool = False,
) -> ForwardResult:
    cfg = params.config
    frames = np.asarray(frames, dtype=DTYPE)
    n = len(targets)
    if n == 0:
        raise ConfigError("teacher-forced pass needs at least one target token")
    for y in targets:
        if not 0 <= y < cfg.vocab_size:
            raise LabelError(f"target {y} outside the {cfg.vocab_size}-way inventory")

    enc, enc_caches = _encode_cached(params, frames)
    t_total = enc.shape[0]
    kproj = precompute_keys(params, enc)
    out_w, out_b = params.tensors["out.w"], params.tensors["out.b"]
    dec_lps = [layer_params(params, f"dec{l}") for l in range(cfg.dec_layers)]

    states = [zero_state(cfg.dec_width) for _ in range(cfg.dec_layers)]
    query = np.zeros(cfg.dec_width, dtype=DTYPE)
    prev_token = cfg.sos_id
    token_logps = np.empty(n, dtype=DTYPE)
    attention = np.zeros((n, t_total), dtype=DTYPE) if want_attention else None
    step_caches = []

    for i, y in enumerate(targets):
        s, e = windows[i]
        ctx, alpha, attn_cache = _attn_fwd(params, enc, kproj, query, s, e)
        layer_caches = []
        h_prevs = []
        layer_inputs = [None]  # layer 0 consumes (prev_token, ctx) instead
        x = None
        for l, lp in enumerate(dec_lps):
            h_prevs.append(states[l].hidden)
            if l == 0:
                hidden, states[l], cell_cache = _dec0_fwd(lp, cfg, prev_token, ctx, states[l])
            else:
                layer_inputs.append(x)
                pre = lp.w_x @ x + lp.w_h @ states[l].hidden + lp.b
                hidden, c, cell_cache = _cell_fwd(pre, states[l].cell)
                states[l] = LstmState(cell=c, hidden=hidden)
            layer_caches.append(cell_cache)
            x = hidden
        logits = out_w @ x + out_b
        logp = log_softmax(logits)
        token_logps[i] = logp[y]
        if want_attention:
            attention[i, s:e] = alpha.mean(axis=0)
        if want_grads:
            step_caches.append(
                (prev_token, ctx, attn_cache, layer_caches, h_prevs, layer_inputs,
                 x, np.exp(logp))
            )
        query = x
        prev_token = y

    loss = float(-np.mean(token_logps))
    if not np.isfinite(loss):
        raise NonFiniteError("teacher-forced loss is not finite")
    result = ForwardResult(loss=loss, token_logps=token_logps, attention=attention)
    if not want_grads:
        return result

    # ---- reverse pass -----------------------------------------------------
    grads: ParamDict = {k: np.zeros_like(p) for k, p in params.tensors.items()}
    d_enc = np.zeros_like(enc)
    d_kproj = np.zeros_like(kproj)
    dh_next = [np.zeros(cfg.dec_width, dtype=DTYPE) for _ in range(cfg.dec_layers)]
    dc_next = [np.zeros(cfg.dec_width, dtype=DTYPE) for _ in range(cfg.dec_layers)]
    d_query_pending = np.zeros(cfg.dec_width, dtype=DTYPE)
    top = cfg.dec_layers - 1

    for i in range(n - 1, -1, -1):
        (prev_token, ctx, attn_cache, layer_caches, h_prevs, layer_inputs,
         h_top, probs) = step_caches[i]
        d_logits = probs / n
        d_logits[targets[i]] -= 1.0 / n
        grads["out.w"] += np.outer(d_logits, h_top)
        grads["out.b"] += d_logits
        d_hidden = out_w.T @ d_logits + d_query_pending
        d_x = None
        for l in range(top, -1, -1):
            lp = dec_lps[l]
            dh = (d_hidden if l == top else d_x) + dh_next[l]
            dpre, dc_prev = _cell_bwd(layer_caches[l], dh, dc_next[l])
            grads[f"dec{l}.b"] += dpre
            grads[f"dec{l}.w_h"] += np.outer(dpre, h_prevs[l])
            dh_next[l] = lp.w_h.T @ dpre
            dc_next[l] = dc_prev
            if l == 0:
                grads["dec0.w_x"][:, prev_token] += dpre
                grads["dec0.w_x"][:, cfg.vocab_size:] += np.outer(dpre, ctx)
                d_ctx = lp.w_x[:, cfg.vocab_size:].T @ dpre
            else:
                grads[f"dec{l}.w_x"] += np.outer(dpre, layer_inputs[l])
                d_x = lp.w_x.T @ dpre
        d_query_pending = _attn_bwd(params, enc, attn_cache, d_ctx, grads, d_kproj, d_enc)

    _finish_key_grads(params, enc, d_kproj, grads, d_enc)
    _encode_backward(params, enc_caches, d_enc, grads)
    result.grads = grads
    return result


def nt_forward(
    params: ModelParams,
    frames,
    bt: BlockTargets,
    spec: WindowSpec,
    want_grads: bool = False,
    want_attention: bool = False,
) -> ForwardResult:
    """Teacher-forced streaming pass over the blocked targets.

    Attention for every token of block b is restricted to that block's
    window; decoder state carries across blocks, so each prediction is
    conditioned on all previously emitted labels.
    """
    frames = np.asarray(frames, dtype=DTYPE)
    t_total = frames.shape[0]
    if bt.block_size != spec.block_size:
        raise ConfigError(
            f"targets built for block size {bt.block_size}, window uses {spec.block_size}"
        )
    expected_blocks = num_blocks(t_total, spec.block_size)
    if bt.num_blocks != expected_blocks:
        raise ConfigError(
            f"targets carry {bt.num_blocks} blocks but {t_total} frames give {expected_blocks}"
        )
    targets: list[int] = []
    windows: list[tuple[int, int]] = []
    for b0, block in enumerate(bt.per_block):
        win = window_slice(b0, spec, t_total)
        for y in block:
            targets.append(y)
            windows.append(win)
    return _teacher_forced(params, frames, targets, windows, want_grads, want_attention)


def las_forward(
    params: ModelParams,
    frames,
    y: Sequence[int],
    want_grads: bool = False,
    want_attention: bool = False,
) -> ForwardResult:
    """Teacher-forced full-sequence pass; attention sees every frame each step."""
    frames = np.asarray(frames, dtype=DTYPE)
    cfg = params.config
    if any(t == cfg.eps_id for t in y):
        raise LabelError("epsilon must not appear in full-sequence targets")
    windows = [(0, frames.shape[0])] * len(y)
    return _teacher_forced(params, frames, list(y), windows, want_grads, want_attention)


# ---------------------------------------------------------------------------
# Stepwise decoding interface (used by the beam search)
# ---------------------------------------------------------------------------


@dataclass
class StepState:
    """Decoder-side state of one hypothesis between output steps."""

    layers: tuple[LstmState, ...]
    query: np.ndarray
    prev_token: int


def init_step_state(params: ModelParams) -> StepState:
    cfg = params.config
    return StepState(
        layers=tuple(zero_state(cfg.dec_width) for _ in range(cfg.dec_layers)),
        query=np.zeros(cfg.dec_width, dtype=DTYPE),
        prev_token=cfg.sos_id,
    )


def decoder_step(
    params: ModelParams,
    enc: np.ndarray,
    kproj: np.ndarray,
    state: StepState,
    window: tuple[int, int],
):
    """Advance the speller one step inside `window` (0-based half-open).

    Returns (logprobs over the inventory, mean-over-heads attention weights
    over the window, carried state missing only the chosen token). Callers
    pick a token and complete the state with `advance_state`.
    """
    cfg = params.config
    s, e = window
    ctx, alpha, _ = _attn_fwd(params, enc, kproj, state.query, s, e)
    layers = []
    x = None
    for l in range(cfg.dec_layers):
        lp = layer_params(params, f"dec{l}")
        if l == 0:
            hidden, new_state, _ = _dec0_fwd(lp, cfg, state.prev_token, ctx, state.layers[0])
        else:
            pre = lp.w_x @ x + lp.w_h @ state.layers[l].hidden + lp.b
            hidden, c, _ = _cell_fwd(pre, state.layers[l].cell)
            new_state = LstmState(cell=c, hidden=hidden)
        layers.append(new_state)
        x = hidden
    logits = params.tensors["out.w"] @ x + params.tensors["out.b"]
    carried = StepState(layers=tuple(layers), query=x, prev_token=-1)
    return log_softmax(logits), alpha.mean(axis=0), carried


def advance_state(carried: StepState, token: int) -> StepState:
    return replace(carried, prev_token=token)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, mode: str, inventory_hash: str,
                    extra: dict | None = None) -> None:
    """Versioned header plus raw little-endian float64 tensors in field order."""
    validate_params(params)
    cfg = params.config
    fields = [[name, list(param_shape(name, cfg))] for name in param_order(cfg)]
    meta = {
        "mode": mode,
        "inventory_hash": inventory_hash,
        "config": {
            "input_dim": cfg.input_dim, "vocab_size": cfg.vocab_size,
            "eps_id": cfg.eps_id, "sos_id": cfg.sos_id,
            "enc_layers": cfg.enc_layers, "enc_width": cfg.enc_width,
            "dec_layers": cfg.dec_layers, "dec_width": cfg.dec_width,
            "attn_dim": cfg.attn_dim, "heads": cfg.heads,
        },
        "extra": extra or {},
        "fields": fields,
    }
    with open(path, "wb") as fh:
        fh.write((CKPT_MAGIC + "\n").encode("utf-8"))
        fh.write((json.dumps(meta, sort_keys=True) + "\n").encode("utf-8"))
        for name in param_order(cfg):
            fh.write(np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes())


def load_checkpoint(path, expected_inventory_hash: str | None = None):
    """Returns (params, mode, meta); validates shapes and the inventory hash."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("utf-8").rstrip("\n")
        if magic != CKPT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint (header {magic!r})")
        meta = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    cfg = ModelConfig(**meta["config"])
    expected_fields = [[name, list(param_shape(name, cfg))] for name in param_order(cfg)]
    if meta["fields"] != expected_fields:
        raise ConfigError(f"{path}: field table does not match the stored config")
    if expected_inventory_hash is not None and meta["inventory_hash"] != expected_inventory_hash:
        raise ConfigError(
            f"{path}: checkpoint was trained with inventory {meta['inventory_hash']}, "
            f"expected {expected_inventory_hash}"
        )
    tensors: ParamDict = {}
    offset = 0
    for name, shape in meta["fields"]:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        offset += size * 8
        tensors[name] = arr.reshape(shape).astype(DTYPE)
    if offset != len(blob):
        raise ConfigError(f"{path}: trailing bytes after parameters")
    params = ModelParams(cfg, tensors)
    validate_params(params)
    return params, meta["mode"], meta


def params_digest(params: ModelParams) -> str:
    """Content hash of the tensors, for determinism checks and provenance."""
    digest = hashlib.sha256()
    for name in param_order(params.config):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes())
    return digest.hexdigest()[:16]
