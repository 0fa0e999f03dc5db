"""Dense float64 numerics: LSTM cell, additive and multi-head attention,
stable softmax cross-entropy, Adam, and a finite-difference gradient checker.

Everything is plain numpy with manual reverse-mode gradients written next to
each forward op. All math runs in 64-bit floats so gradient checks and the
model-equivalence tests can use tight tolerances. Ops never mutate their
inputs; repeated calls on the same inputs are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import (
    ConfigError,
    EmptyWindowError,
    LabelError,
    NonFiniteError,
    ShapeError,
)

DTYPE = np.float64

ParamDict = dict[str, np.ndarray]


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, validating shape and finiteness."""
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2 dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name}: contains NaN or Inf")
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim != 1:
        raise ShapeError(f"{name}: expected 1 dimension, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name}: contains NaN or Inf")
    return arr


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Max-subtracted log-softmax of a vector, accumulated in the log domain."""
    m = np.max(z)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z)
    e = np.exp(z - m)
    return e / np.sum(e)


# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------
# Gate layout inside the stacked 4H rows: input, forget, candidate, output.


@dataclass
class LstmParams:
    """Weights of one LSTM layer: w_x (4H, D), w_h (4H, H), b (4H,)."""

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    @property
    def width(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]


@dataclass
class LstmState:
    """Recurrent state of one LSTM layer; cell and hidden share a width."""

    cell: np.ndarray
    hidden: np.ndarray


def zero_state(width: int) -> LstmState:
    return LstmState(cell=np.zeros(width, dtype=DTYPE), hidden=np.zeros(width, dtype=DTYPE))


def _check_lstm_shapes(params: LstmParams, x: np.ndarray, state: LstmState) -> int:
    h = params.width
    if params.w_x.shape[0] != 4 * h or params.b.shape != (4 * h,):
        raise ShapeError(
            f"lstm_step: weights inconsistent, w_x {params.w_x.shape}, "
            f"w_h {params.w_h.shape}, b {params.b.shape}"
        )
    if x.shape != (params.input_dim,):
        raise ShapeError(
            f"lstm_step: input has shape {x.shape}, w_x expects ({params.input_dim},)"
        )
    if state.cell.shape != (h,) or state.hidden.shape != (h,):
        raise ShapeError(
            f"lstm_step: state has shapes cell {state.cell.shape} / hidden "
            f"{state.hidden.shape}, layer width is {h}"
        )
    return h


def _cell_fwd(pre: np.ndarray, c_prev: np.ndarray):
    """Gate math on a 4H pre-activation. Returns (hidden, c, cache)."""
    h = c_prev.shape[0]
    gi = sigmoid(pre[:h])
    gf = sigmoid(pre[h : 2 * h])
    gg = np.tanh(pre[2 * h : 3 * h])
    go = sigmoid(pre[3 * h :])
    c = gf * c_prev + gi * gg
    tanh_c = np.tanh(c)
    hidden = go * tanh_c
    gates = np.concatenate([gi, gf, gg, go])
    return hidden, c, (gates, c_prev, tanh_c)


def _cell_bwd(cache, dh: np.ndarray, dc_in: np.ndarray):
    """Backward of _cell_fwd. Returns (dpre, dc_prev)."""
    gates, c_prev, tanh_c = cache
    h = c_prev.shape[0]
    gi, gf, gg, go = gates[:h], gates[h : 2 * h], gates[2 * h : 3 * h], gates[3 * h :]
    dgo = dh * tanh_c
    dc = dc_in + dh * go * (1.0 - tanh_c * tanh_c)
    dgf = dc * c_prev
    dgi = dc * gg
    dgg = dc * gi
    dc_prev = dc * gf
    dpre = np.concatenate(
        [
            dgi * gi * (1.0 - gi),
            dgf * gf * (1.0 - gf),
            dgg * (1.0 - gg * gg),
            dgo * go * (1.0 - go),
        ]
    )
    return dpre, dc_prev


def _lstm_fwd(params: LstmParams, x: np.ndarray, state: LstmState):
    """Forward step returning (hidden, next_state, cache) for the backward pass."""
    pre = params.w_x @ x + params.w_h @ state.hidden + params.b
    hidden, c, cell_cache = _cell_fwd(pre, state.cell)
    cache = (x, state.hidden, cell_cache)
    return hidden, LstmState(cell=c, hidden=hidden), cache


def _lstm_bwd(params: LstmParams, cache, dh: np.ndarray, dc_in: np.ndarray):
    """Backward step. Returns (dw_x, dw_h, db, dx, dh_prev, dc_prev).

    dh is the total gradient into this step's hidden output, dc_in the
    gradient flowing back into this step's cell from the following step.
    """
    x, h_prev, cell_cache = cache
    dpre, dc_prev = _cell_bwd(cell_cache, dh, dc_in)
    dw_x = np.outer(dpre, x)
    dw_h = np.outer(dpre, h_prev)
    dx = params.w_x.T @ dpre
    dh_prev = params.w_h.T @ dpre
    return dw_x, dw_h, dpre, dx, dh_prev, dc_prev


def lstm_step(params: LstmParams, x, state: LstmState) -> tuple[np.ndarray, LstmState]:
    """One LSTM cell step (input/forget/output gates plus cell candidate)."""
    x = as_vector(x, "lstm_step input")
    _check_lstm_shapes(params, x, state)
    hidden, next_state, _ = _lstm_fwd(params, x, state)
    return hidden, next_state


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


@dataclass
class AttentionContext:
    """Attention result: a probability vector over rows and the mixed context.

    For multi-head attention `weights` has one row per head and `context` is
    the concatenation of the per-head value mixes.
    """

    weights: np.ndarray
    context: np.ndarray


@dataclass
class AdditiveAttentionParams:
    """Projections for e_i = v . tanh(w_q q + w_k k_i): w_q (A, Dq), w_k (A, E), v (A,)."""

    w_q: np.ndarray
    w_k: np.ndarray
    v: np.ndarray


@dataclass
class MultiheadAttentionParams:
    """Per-head additive projections stacked on a leading head axis.

    w_q (heads, A, Dq), w_k (heads, A, E/heads), v (heads, A). Keys and values
    are split column-wise into `heads` equal slices; each head runs additive
    attention over its slice and the contexts are concatenated back.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    v: np.ndarray

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]

    def head(self, i: int) -> AdditiveAttentionParams:
        return AdditiveAttentionParams(w_q=self.w_q[i], w_k=self.w_k[i], v=self.v[i])


def _additive_fwd(params: AdditiveAttentionParams, query, keys, values):
    """Returns (weights, context, cache); cache = (query, keys, values, th, weights)."""
    a = params.w_q @ query
    th = np.tanh(a[None, :] + keys @ params.w_k.T)
    scores = th @ params.v
    weights = softmax(scores)
    context = weights @ values
    return weights, context, (query, keys, values, th, weights)


def additive_attention(
    params: AdditiveAttentionParams, query, keys, values
) -> AttentionContext:
    """Additive (tanh) attention of a query vector over key/value rows."""
    query = as_vector(query, "attention query")
    keys = as_matrix(keys, "attention keys")
    values = as_matrix(values, "attention values")
    if keys.shape[0] == 0:
        raise EmptyWindowError("additive_attention: zero attended rows")
    if keys.shape[0] != values.shape[0]:
        raise ShapeError(
            f"additive_attention: keys have {keys.shape[0]} rows, values {values.shape[0]}"
        )
    weights, context, _ = _additive_fwd(params, query, keys, values)
    return AttentionContext(weights=weights, context=context)


def multihead_attention(
    params: MultiheadAttentionParams, query, keys, values, heads: int
) -> AttentionContext:
    """Per-head additive attention over key/value column slices, concatenated."""
    query = as_vector(query, "attention query")
    keys = as_matrix(keys, "attention keys")
    values = as_matrix(values, "attention values")
    if heads != params.heads:
        raise ConfigError(f"multihead_attention: params carry {params.heads} heads, asked for {heads}")
    if keys.shape[0] == 0:
        raise EmptyWindowError("multihead_attention: zero attended rows")
    width = keys.shape[1]
    if width % heads != 0:
        raise ConfigError(
            f"multihead_attention: encoder width {width} not divisible by {heads} heads"
        )
    slice_w = width // heads
    all_weights = np.empty((heads, keys.shape[0]), dtype=DTYPE)
    contexts = []
    for i in range(heads):
        sl = slice(i * slice_w, (i + 1) * slice_w)
        w, ctx, _ = _additive_fwd(params.head(i), query, keys[:, sl], values[:, sl])
        all_weights[i] = w
        contexts.append(ctx)
    return AttentionContext(weights=all_weights, context=np.concatenate(contexts))


# ---------------------------------------------------------------------------
# Softmax cross-entropy
# ---------------------------------------------------------------------------


def softmax_xent(logits, target: int) -> tuple[float, np.ndarray]:
    """Stable cross-entropy of a logit vector against a label index.

    Returns (loss, dloss/dlogits) with loss = -log softmax(logits)[target]
    and gradient softmax(logits) - onehot(target).
    """
    logits = as_vector(logits, "softmax_xent logits")
    n = logits.shape[0]
    if not (0 <= target < n):
        raise LabelError(f"softmax_xent: target {target} outside 0..{n - 1}")
    logp = log_softmax(logits)
    loss = -logp[target]
    grad = np.exp(logp)
    grad[target] -= 1.0
    return float(loss), grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators; m/v shapes mirror the parameters."""

    step: int
    m: ParamDict
    v: ParamDict
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: Mapping[str, np.ndarray], lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = {k: np.zeros_like(p) for k, p in params.items()}
    return AdamState(step=0, m=zeros, v={k: z.copy() for k, z in zeros.items()},
                     lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> tuple[ParamDict, AdamState]:
    """One bias-corrected Adam step; pure, returns fresh params and state."""
    if set(params) != set(state.m) or set(params) != set(grads):
        raise ShapeError("adam_update: parameter, gradient and state keys differ")
    t = state.step + 1
    new_params: ParamDict = {}
    new_m: ParamDict = {}
    new_v: ParamDict = {}
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name in sorted(params):
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ShapeError(f"adam_update: {name} grad shape {g.shape} != param {p.shape}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v, lr=state.lr,
                                 beta1=state.beta1, beta2=state.beta2, eps=state.eps)


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[ParamDict, float]:
    """Rescale grads so their global L2 norm is at most max_norm."""
    sq = sum(float(np.sum(g * g)) for g in grads.values())
    norm = float(np.sqrt(sq))
    if norm <= max_norm or norm == 0.0:
        return {k: g.copy() for k, g in grads.items()}, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckEntry:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    @property
    def worst(self) -> GradCheckEntry:
        return max(self.entries, key=lambda e: e.rel_err)

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.rel_err > self.tolerance]

    def summary(self) -> str:
        w = self.worst
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad check {status}: {len(self.entries)} sampled entries, "
            f"max rel err {self.max_rel_err:.3e} at {w.param}[{w.index}] "
            f"(analytic {w.analytic:.6e}, central-diff {w.numeric:.6e}), "
            f"tolerance {self.tolerance:.1e}"
        )


LossAndGradFn = Callable[[Mapping[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]]


def grad_check(
    fn: LossAndGradFn,
    params: Mapping[str, np.ndarray],
    step: float = 1e-4,
    tolerance: float = 1e-4,
    samples: int = 64,
    seed: int = 0,
    denom_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `fn` maps params to (loss, grads). `samples` parameter entries are drawn
    uniformly over all tensors with a seeded generator; each is perturbed by
    +/-step and the central difference is compared to the analytic entry with
    rel_err = |a - n| / max(|a|, |n|, denom_floor). The floor keeps numerically
    dead entries (both gradients ~0) from dividing by zero.
    """
    base_loss, grads = fn(params)
    if not np.isfinite(base_loss):
        raise NonFiniteError(f"grad_check: loss is {base_loss} at the supplied parameters")
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.Generator(np.random.PCG64(seed))
    count = min(samples, total)
    flat_choices = np.sort(rng.choice(total, size=count, replace=False))
    bounds = np.cumsum(sizes)

    entries: list[GradCheckEntry] = []
    for flat in flat_choices:
        which = int(np.searchsorted(bounds, flat, side="right"))
        name = names[which]
        idx = int(flat - (bounds[which] - sizes[which]))
        losses = []
        for delta in (step, -step):
            bumped = params[name].copy()
            bumped.flat[idx] += delta
            trial = dict(params)
            trial[name] = bumped
            loss, _ = fn(trial)
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"grad_check: non-finite loss when perturbing {name}[{idx}] by {delta:+g}"
                )
            losses.append(loss)
        numeric = (losses[0] - losses[1]) / (2.0 * step)
        analytic = float(grads[name].flat[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), denom_floor)
        entries.append(GradCheckEntry(name, idx, analytic, numeric, rel))

    report = GradCheckReport(
        max_rel_err=max(e.rel_err for e in entries), tolerance=tolerance, entries=entries
    )
    return report
