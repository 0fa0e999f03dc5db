"""Streaming block-synchronous beam search with epsilon end-of-block
semantics, the per-block cap M, optional shallow fusion with a coverage
bonus, and an exhaustive-search oracle for small instances.

Scores are raw summed log-probs: epsilons contribute model score but never
query the LM, and there is no length normalization, so a saturating beam is
exactly equivalent to exhaustive search. Hypotheses are value-copied on
expansion; nothing is mutated in place.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, CorpusError, EnumerationLimitError
from .lm import FusionWeights, NGramLM, fused_score
from .models import (
    ModelParams,
    StepState,
    WindowSpec,
    advance_state,
    decoder_step,
    encode_utterance,
    init_step_state,
    precompute_keys,
    window_slice,
)
from .numerics import DTYPE
from .targets import num_blocks
from .tokenizer import SubwordInventory, decode as detokenize


def update_coverage(attn_history: np.ndarray, step_weights: np.ndarray,
                    window_start: int) -> np.ndarray:
    """Add one step's attention mass at its absolute frame offsets; pure."""
    out = attn_history.copy()
    out[window_start : window_start + step_weights.shape[0]] += step_weights
    return out


def coverage_count(attn_history: np.ndarray, beta: float) -> int:
    """Number of frames whose accumulated attention mass exceeds beta."""
    return int(np.sum(attn_history > beta))


@dataclass
class Hypothesis:
    """One beam entry; copied (never mutated) on every expansion."""

    tokens: tuple[int, ...]
    block_count: int  # non-epsilon emissions inside the current block
    state: StepState
    attn_mass: np.ndarray
    score_model: float = 0.0
    score_lm: float = 0.0
    coverage: int = 0
    attn_rows: tuple = ()
    forced_eps: int = 0

    def fused(self, w: FusionWeights | None) -> float:
        if w is None:
            return self.score_model
        return fused_score(self.score_model, self.score_lm, self.coverage, w)


def _sort_key(hyp: Hypothesis, w: FusionWeights | None):
    # higher score first, then fewer tokens, then lexicographic token order
    return (-hyp.fused(w), len(hyp.tokens), hyp.tokens)


@dataclass
class BeamResult:
    transcript: str
    tokens: tuple[int, ...]
    score: float
    score_model: float
    score_lm: float
    coverage: int
    attention: np.ndarray  # (output steps, T) mean-over-heads weights
    forced_epsilon_events: int
    finalists: list[tuple[tuple[int, ...], float]]
    block_snapshots: tuple = ()  # per block: sorted ((tokens, score), ...) of survivors


def assert_legal_sequence(tokens: tuple[int, ...], blocks: int, cap: int, eps_id: int) -> None:
    """Check epsilon placement: one epsilon per block, at most cap labels between."""
    count = 0
    seen_blocks = 0
    for t in tokens:
        if t == eps_id:
            seen_blocks += 1
            count = 0
        else:
            count += 1
            if count > cap:
                raise ConfigError(f"illegal sequence: {count} labels in one block exceed cap {cap}")
    if seen_blocks != blocks or (tokens and tokens[-1] != eps_id):
        raise ConfigError(
            f"illegal sequence: {seen_blocks} epsilons for {blocks} blocks"
        )


def _candidates(inventory: SubwordInventory) -> list[int]:
    """Expandable labels: everything except the control tokens."""
    banned = {inventory.eps_id, inventory.sos_id, inventory.eos_id}
    return [i for i in range(len(inventory)) if i not in banned]


def _lm_history(tokens: tuple[int, ...], inventory: SubwordInventory) -> list[str]:
    return [inventory.unit_of(t) for t in tokens if t != inventory.eps_id]


def beam_search(
    params: ModelParams,
    frames,
    spec: WindowSpec,
    beam: int,
    cap: int,
    inventory: SubwordInventory,
    fusion: tuple[NGramLM, FusionWeights] | None = None,
) -> BeamResult:
    """Block-synchronous search: within a block every live hypothesis expands
    over non-epsilon labels until it emits epsilon or hits the cap (epsilon is
    then forced); survivors synchronize at each block boundary."""
    if beam < 1:
        raise ConfigError(f"beam width must be >= 1, got {beam}")
    if cap < 1:
        raise ConfigError(f"per-block cap must be >= 1, got {cap}")
    frames = np.asarray(frames, dtype=DTYPE)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise CorpusError("cannot decode an empty utterance")
    enc = encode_utterance(params, frames)
    kproj = precompute_keys(params, enc)
    t_total = enc.shape[0]
    blocks = num_blocks(t_total, spec.block_size)
    eps = inventory.eps_id
    cands = _candidates(inventory)
    lm_model, weights = fusion if fusion is not None else (None, None)

    hyps = [
        Hypothesis(
            tokens=(),
            block_count=0,
            state=init_step_state(params),
            attn_mass=np.zeros(t_total, dtype=DTYPE),
        )
    ]
    snapshots = []
    for b0 in range(blocks):
        window = window_slice(b0, spec, t_total)
        active = [replace(h, block_count=0) for h in hyps]
        closed: list[Hypothesis] = []
        while active:
            expanded: list[Hypothesis] = []
            for hyp in active:
                logp, attn, carried = decoder_step(params, enc, kproj, hyp.state, window)
                mass = update_coverage(hyp.attn_mass, attn, window[0])
                cov = coverage_count(mass, weights.beta) if weights is not None else 0
                rows = hyp.attn_rows + ((window[0], attn),)
                forced = hyp.block_count >= cap
                closed.append(
                    Hypothesis(
                        tokens=hyp.tokens + (eps,),
                        block_count=hyp.block_count,
                        state=advance_state(carried, eps),
                        attn_mass=mass,
                        score_model=hyp.score_model + float(logp[eps]),
                        score_lm=hyp.score_lm,
                        coverage=cov,
                        attn_rows=rows,
                        forced_eps=hyp.forced_eps + int(forced),
                    )
                )
                if forced:
                    continue
                history = _lm_history(hyp.tokens, inventory) if lm_model else None
                for tok in cands:
                    lm_lp = hyp.score_lm
                    if lm_model is not None:
                        lm_lp += lm_model.logprob(history, inventory.unit_of(tok))
                    expanded.append(
                        Hypothesis(
                            tokens=hyp.tokens + (tok,),
                            block_count=hyp.block_count + 1,
                            state=advance_state(carried, tok),
                            attn_mass=mass,
                            score_model=hyp.score_model + float(logp[tok]),
                            score_lm=lm_lp,
                            coverage=cov,
                            attn_rows=rows,
                            forced_eps=hyp.forced_eps,
                        )
                    )
            expanded.sort(key=lambda h: _sort_key(h, weights))
            active = expanded[:beam]
        closed.sort(key=lambda h: _sort_key(h, weights))
        hyps = closed[:beam]
        snapshots.append(tuple((h.tokens, h.fused(weights)) for h in hyps))

    best = hyps[0]
    attention = np.zeros((len(best.attn_rows), t_total), dtype=DTYPE)
    for i, (start, attn) in enumerate(best.attn_rows):
        attention[i, start : start + attn.shape[0]] = attn
    return BeamResult(
        transcript=detokenize(best.tokens, inventory),
        tokens=best.tokens,
        score=best.fused(weights),
        score_model=best.score_model,
        score_lm=best.score_lm,
        coverage=best.coverage,
        attention=attention,
        forced_epsilon_events=best.forced_eps,
        finalists=[(h.tokens, h.fused(weights)) for h in hyps],
        block_snapshots=tuple(snapshots),
    )


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------


def _enumeration_size(n_cands: int, blocks: int, cap: int) -> int:
    per_block = sum(n_cands**m for m in range(cap + 1))
    return per_block**blocks


def exhaustive_decode(
    params: ModelParams,
    frames,
    spec: WindowSpec,
    cap: int,
    inventory: SubwordInventory,
    fusion: tuple[NGramLM, FusionWeights] | None = None,
    max_len: int | None = None,
    limit: int = 10**6,
):
    """Score every legal epsilon-placed label sequence; returns the arg-max.

    Legal means 0..cap non-epsilon labels then one epsilon, per block. The
    same deterministic tie-breaking as the beam applies. Only usable when the
    enumeration fits under `limit` sequences.
    """
    frames = np.asarray(frames, dtype=DTYPE)
    enc = encode_utterance(params, frames)
    kproj = precompute_keys(params, enc)
    t_total = enc.shape[0]
    blocks = num_blocks(t_total, spec.block_size)
    cands = _candidates(inventory)
    if _enumeration_size(len(cands), blocks, cap) > limit:
        raise EnumerationLimitError(
            f"{_enumeration_size(len(cands), blocks, cap)} sequences exceed limit {limit}"
        )
    eps = inventory.eps_id
    lm_model, weights = fusion if fusion is not None else (None, None)

    block_choices = []
    for m in range(cap + 1):
        block_choices.extend(itertools.product(cands, repeat=m))

    best = None  # (sort key, tokens, components)
    def walk(b0: int, tokens: tuple[int, ...], state: StepState,
             mass: np.ndarray, model_lp: float, lm_lp: float, emitted: int):
        nonlocal best
        if b0 == blocks:
            cov = coverage_count(mass, weights.beta) if weights is not None else 0
            total = fused_score(model_lp, lm_lp, cov, weights) if weights else model_lp
            key = (-total, len(tokens), tokens)
            if best is None or key < best[0]:
                best = (key, tokens, (total, model_lp, lm_lp, cov))
            return
        window = window_slice(b0, spec, t_total)
        for labels in block_choices:
            if max_len is not None and emitted + len(labels) > max_len:
                continue
            st = state
            toks = tokens
            m2 = mass
            mlp, llp = model_lp, lm_lp
            ok = True
            for tok in labels + (eps,):
                logp, attn, carried = decoder_step(params, enc, kproj, st, window)
                mlp += float(logp[tok])
                if lm_model is not None and tok != eps:
                    llp += lm_model.logprob(_lm_history(toks, inventory),
                                            inventory.unit_of(tok))
                m2 = update_coverage(m2, attn, window[0])
                st = advance_state(carried, tok)
                toks = toks + (tok,)
                if not np.isfinite(mlp):
                    ok = False
                    break
            if ok:
                walk(b0 + 1, toks, st, m2, mlp, llp, emitted + len(labels))

    walk(0, (), init_step_state(params), np.zeros(t_total, dtype=DTYPE), 0.0, 0.0, 0)
    assert best is not None
    tokens = best[1]
    total, model_lp, lm_lp, cov = best[2]
    return BeamResult(
        transcript=detokenize(tokens, inventory),
        tokens=tokens,
        score=total,
        score_model=model_lp,
        score_lm=lm_lp,
        coverage=cov,
        attention=np.zeros((len(tokens), t_total), dtype=DTYPE),
        forced_epsilon_events=0,
        finalists=[(tokens, total)],
    )


# ---------------------------------------------------------------------------
# Full-sequence decoding (for evaluating the non-streaming model)
# ---------------------------------------------------------------------------


@dataclass
class _LasHyp:
    tokens: tuple[int, ...]
    state: StepState
    score: float


def las_decode(
    params: ModelParams,
    frames,
    inventory: SubwordInventory,
    beam: int = 8,
    max_len: int | None = None,
) -> BeamResult:
    """Plain full-attention beam search, terminated by the end-of-sequence token."""
    if beam < 1:
        raise ConfigError(f"beam width must be >= 1, got {beam}")
    frames = np.asarray(frames, dtype=DTYPE)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise CorpusError("cannot decode an empty utterance")
    enc = encode_utterance(params, frames)
    kproj = precompute_keys(params, enc)
    t_total = enc.shape[0]
    window = (0, t_total)
    eos = inventory.eos_id
    cands = _candidates(inventory)
    cap = max_len if max_len is not None else t_total + 10

    active = [_LasHyp(tokens=(), state=init_step_state(params), score=0.0)]
    finished: list[_LasHyp] = []
    while active:
        expanded = []
        for hyp in active:
            logp, _attn, carried = decoder_step(params, enc, kproj, hyp.state, window)
            finished.append(
                _LasHyp(hyp.tokens, advance_state(carried, eos), hyp.score + float(logp[eos]))
            )
            if len(hyp.tokens) >= cap:
                continue
            for tok in cands:
                expanded.append(
                    _LasHyp(hyp.tokens + (tok,), advance_state(carried, tok),
                            hyp.score + float(logp[tok]))
                )
        expanded.sort(key=lambda h: (-h.score, len(h.tokens), h.tokens))
        active = expanded[:beam]
        finished.sort(key=lambda h: (-h.score, len(h.tokens), h.tokens))
        finished = finished[: max(beam, 1)]
        # stop once no live hypothesis can beat the best finished one
        if finished and active and active[0].score <= finished[0].score:
            break
    best = finished[0] if finished else active[0]
    return BeamResult(
        transcript=detokenize(best.tokens, inventory),
        tokens=best.tokens,
        score=best.score,
        score_model=best.score,
        score_lm=0.0,
        coverage=0,
        attention=np.zeros((len(best.tokens), t_total), dtype=DTYPE),
        forced_epsilon_events=0,
        finalists=[(h.tokens, h.score) for h in finished],
    )
