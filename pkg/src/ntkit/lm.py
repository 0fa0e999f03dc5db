"""Backoff n-gram language model over sub-word units with Witten-Bell
smoothing (interpolated, expressed in backoff form so every context
distribution sums to one exactly), plus the shallow-fusion score combiner."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError, CorpusError

LM_MAGIC = "ntkit-lm v1"
BOS = "<s>"
PLACEHOLDER_LOGP = -99.0  # ARPA-style marker for context-only lines
OOV_LOGP = -30.0


@dataclass(frozen=True)
class FusionWeights:
    """Shallow-fusion knobs: LM weight, coverage weight, coverage threshold."""

    lam: float = 0.0
    eta: float = 0.0
    beta: float = 0.5

    def __post_init__(self):
        if self.lam < 0 or self.eta < 0:
            raise ConfigError("fusion weights must be non-negative")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"coverage threshold beta must be in (0,1), got {self.beta}")


def fused_score(model_lp: float, lm_lp: float, coverage: float, w: FusionWeights) -> float:
    """Log-linear combination: model + lambda * LM + eta * coverage."""
    return model_lp + w.lam * lm_lp + w.eta * coverage


class NGramLM:
    """Context -> token log-prob tables with per-context backoff weights.

    Sequences are padded with (order-1) <s> tokens; <s> is never predicted.
    For a stored context, probabilities over the vocabulary sum to 1 within
    float error; unseen tokens fall through to shorter contexts weighted by
    the context's backoff mass.
    """

    def __init__(self, order: int, probs: dict, bows: dict, vocab: tuple[str, ...]):
        self.order = order
        self.probs = probs
        self.bows = bows
        self.vocab = vocab

    def logprob(self, history: Sequence[str], token: str) -> float:
        """log p(token | history) with longest-context backoff chaining."""
        if self.order > 1:
            padded = [BOS] * (self.order - 1) + list(history)
            ctx = tuple(padded[len(padded) - self.order + 1:])
        else:
            ctx = ()
        return self._score(ctx, token)

    def _score(self, ctx: tuple, token: str) -> float:
        node = self.probs.get(ctx)
        if node is not None and token in node:
            return node[token]
        if not ctx:
            return OOV_LOGP
        return self.bows.get(ctx, 0.0) + self._score(ctx[1:], token)


def train_ngram(sequences: Sequence[Sequence[str]], order: int) -> NGramLM:
    """Maximum-likelihood counts with Witten-Bell smoothing and backoff."""
    if order < 1:
        raise ConfigError(f"n-gram order must be >= 1, got {order}")
    sequences = [list(s) for s in sequences if len(s) > 0]
    if not sequences:
        raise CorpusError("cannot train an n-gram model on an empty corpus")
    counts: dict[tuple, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for seq in sequences:
        padded = [BOS] * (order - 1) + list(seq)
        for i in range(order - 1, len(padded)):
            token = padded[i]
            for ctx_len in range(order):
                ctx = tuple(padded[i - ctx_len : i])
                counts[ctx][token] += 1

    vocab = tuple(sorted(counts[()]))
    probs: dict[tuple, dict[str, float]] = {}
    bows: dict[tuple, float] = {}

    # Unigrams interpolate with the uniform distribution over the vocabulary;
    # the reserved mass is T/(C+T) with T = distinct types = |V|, so the
    # per-token share T/|V| is exactly 1 count.
    uni = counts[()]
    c_total = sum(uni.values())
    n_types = len(vocab)
    probs[()] = {w: math.log((uni[w] + 1.0) / (c_total + n_types)) for w in vocab}

    for ctx_len in range(1, order):
        for ctx in sorted(c for c in counts if len(c) == ctx_len):
            followers = counts[ctx]
            n = sum(followers.values())
            t1 = len(followers)
            lower = probs[ctx[1:]]
            denom = n + t1
            probs[ctx] = {
                w: math.log((followers[w] + t1 * math.exp(lower[w])) / denom)
                for w in sorted(followers)
            }
            bows[ctx] = math.log(t1 / denom)
    return NGramLM(order, probs, bows, vocab)


# ---------------------------------------------------------------------------
# ARPA-like text format (log base e, tab-separated)
# ---------------------------------------------------------------------------

_ESCAPES = [("%", "%25"), (" ", "%20"), ("\t", "%09"), ("\n", "%0A")]


def _escape(token: str) -> str:
    for raw, enc in _ESCAPES:
        token = token.replace(raw, enc)
    return token


def _unescape(token: str) -> str:
    for raw, enc in reversed(_ESCAPES):
        token = token.replace(enc, raw)
    return token


def save_lm(lm: NGramLM, path) -> None:
    """Per-order blocks of `logprob<TAB>ngram<TAB>backoff` lines.

    Ngram tokens are space-joined after percent-escaping, so units that
    contain spaces survive. Contexts that never occur as events (that is,
    all-<s> padding contexts) get ARPA-style -99 placeholder lines carrying
    only their backoff weight.
    """
    by_order: dict[int, list[str]] = {o: [] for o in range(1, lm.order + 1)}
    emitted = set()
    for ctx in sorted(lm.probs, key=lambda c: (len(c), c)):
        for token in sorted(lm.probs[ctx]):
            gram = ctx + (token,)
            bow = lm.bows.get(gram)
            line = f"{lm.probs[ctx][token]:.12g}\t{' '.join(_escape(t) for t in gram)}"
            if bow is not None:
                line += f"\t{bow:.12g}"
            by_order[len(gram)].append(line)
            emitted.add(gram)
    for ctx in sorted(lm.bows, key=lambda c: (len(c), c)):
        if ctx not in emitted:
            line = (
                f"{PLACEHOLDER_LOGP:.12g}\t{' '.join(_escape(t) for t in ctx)}"
                f"\t{lm.bows[ctx]:.12g}"
            )
            by_order[len(ctx)].append(line)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(LM_MAGIC + "\n")
        fh.write(f"order {lm.order}\n")
        for o in range(1, lm.order + 1):
            fh.write(f"ngram {o}={len(by_order[o])}\n")
        for o in range(1, lm.order + 1):
            fh.write(f"\n\\{o}-grams:\n")
            for line in by_order[o]:
                fh.write(line + "\n")
        fh.write("\n\\end\\\n")


def load_lm(path) -> NGramLM:
    probs: dict[tuple, dict[str, float]] = {}
    bows: dict[tuple, float] = {}
    order = None
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != LM_MAGIC:
            raise CorpusError(f"{path}: not an {LM_MAGIC} file")
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line or line.startswith("ngram ") or line.startswith("\\"):
                continue
            if line.startswith("order "):
                order = int(line.split()[1])
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise CorpusError(f"{path}: line {lineno}: expected 2 or 3 fields")
            logp = float(parts[0])
            gram = tuple(_unescape(t) for t in parts[1].split(" "))
            if logp != PLACEHOLDER_LOGP:
                probs.setdefault(gram[:-1], {})[gram[-1]] = logp
            if len(parts) == 3:
                bows[gram] = float(parts[2])
    if order is None:
        raise CorpusError(f"{path}: missing order header")
    vocab = tuple(sorted(probs.get((), {})))
    return NGramLM(order, probs, bows, vocab)
