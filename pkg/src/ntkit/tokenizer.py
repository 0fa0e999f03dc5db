"""Sub-word inventories: grapheme mode with an explicit space separator and
wordpiece mode with position-dependent "_" word-start markers, trained by
greedy pair merging that maximizes corpus unigram likelihood."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from math import log

from .errors import ConfigError, CorpusError

EPS, SOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<eps>", "<sos>", "<eos>", "<unk>")
MARKER = "_"
GRAPHEME_SEP = " "  # word separator unit in grapheme mode

MODE_GRAPHEME = "grapheme"
MODE_WORDPIECE = "wordpiece"


@dataclass(frozen=True)
class SubwordInventory:
    """Ordered unit list; indices 0..3 are the <eps>/<sos>/<eos>/<unk> specials."""

    mode: str
    units: tuple[str, ...]

    def __post_init__(self):
        if self.units[: len(SPECIALS)] != SPECIALS:
            raise ConfigError("inventory must start with the special units")
        if len(set(self.units)) != len(self.units):
            raise ConfigError("inventory units must be unique")
        object.__setattr__(self, "_index", {u: i for i, u in enumerate(self.units)})
        object.__setattr__(self, "_max_len", max(len(u) for u in self.units))

    def __len__(self) -> int:
        return len(self.units)

    @property
    def eps_id(self) -> int:
        return EPS

    @property
    def sos_id(self) -> int:
        return SOS

    @property
    def eos_id(self) -> int:
        return EOS

    @property
    def unk_id(self) -> int:
        return UNK

    def id_of(self, unit: str) -> int | None:
        return self._index.get(unit)

    def unit_of(self, idx: int) -> str:
        return self.units[idx]

    @property
    def content_units(self) -> tuple[str, ...]:
        return self.units[len(SPECIALS):]


def _marked_word(word: str) -> str:
    return MARKER + word


def build_grapheme_inventory(transcripts: list[str]) -> SubwordInventory:
    """Characters observed in the corpus plus the explicit space separator."""
    chars = sorted({c for line in transcripts for w in line.split() for c in w})
    if not chars:
        raise CorpusError("no characters in corpus transcripts")
    return SubwordInventory(MODE_GRAPHEME, SPECIALS + (GRAPHEME_SEP,) + tuple(chars))


# ---------------------------------------------------------------------------
# Wordpiece training: greedy merges maximizing unigram likelihood
# ---------------------------------------------------------------------------


def _segmentations(word_counts: Counter) -> dict[str, list[str]]:
    return {w: [MARKER + w[0]] + list(w[1:]) for w in word_counts}


def _unit_counts(segs: dict[str, list[str]], word_counts: Counter) -> Counter:
    counts: Counter = Counter()
    for word, seg in segs.items():
        n = word_counts[word]
        for unit in seg:
            counts[unit] += n
    return counts


def _pair_counts(segs: dict[str, list[str]], word_counts: Counter) -> Counter:
    """Left-to-right non-overlapping adjacent pair occurrences, corpus-weighted."""
    pairs: Counter = Counter()
    for word, seg in segs.items():
        n = word_counts[word]
        i = 0
        while i < len(seg) - 1:
            pairs[(seg[i], seg[i + 1])] += n
            if seg[i] == seg[i + 1]:
                i += 2  # an overlapping repeat cannot merge twice
            else:
                i += 1
    return pairs


def _merge_word(seg: list[str], pair: tuple[str, str]) -> list[str]:
    out = []
    i = 0
    while i < len(seg):
        if i < len(seg) - 1 and (seg[i], seg[i + 1]) == pair:
            out.append(seg[i] + seg[i + 1])
            i += 2
        else:
            out.append(seg[i])
            i += 1
    return out


def _ll_term(c: float) -> float:
    return c * log(c) if c > 0 else 0.0


def _unigram_ll(counts: Counter) -> float:
    total = sum(counts.values())
    return sum(_ll_term(c) for c in counts.values()) - _ll_term(total)


def _merge_gain(counts: Counter, pair: tuple[str, str], n_pair: int) -> float:
    """Exact change in corpus unigram log-likelihood if the pair is merged.

    L = sum_u c(u) log c(u) - C log C; only the u, v, uv terms and the total
    move, so the delta is cheap to evaluate for every candidate pair.
    """
    u, v = pair
    merged = u + v
    c_total = sum(counts.values())
    before = _ll_term(counts[u]) + (_ll_term(counts[v]) if v != u else 0.0) + _ll_term(
        counts[merged]
    )
    cu = counts[u] - n_pair * (2 if u == v else 1)
    cv = cu if v == u else counts[v] - n_pair
    cm = counts[merged] + n_pair
    after = _ll_term(cu) + (_ll_term(cv) if v != u else 0.0) + _ll_term(cm)
    c_after = c_total - n_pair
    return (after - before) - (_ll_term(c_after) - _ll_term(c_total))


def _train_merges(transcripts: list[str], target_size: int):
    word_counts: Counter = Counter(w for line in transcripts for w in line.split())
    if not word_counts:
        raise CorpusError("no words in corpus transcripts")
    segs = _segmentations(word_counts)
    base_units = sorted({u for seg in segs.values() for u in seg})
    if target_size < len(base_units):
        raise ConfigError(
            f"target size {target_size} below base alphabet size {len(base_units)}"
        )
    inventory: list[str] = list(base_units)
    history: list[tuple[str, float, float]] = []  # (new unit, gain, corpus loglik)
    while len(inventory) < target_size:
        counts = _unit_counts(segs, word_counts)
        pairs = _pair_counts(segs, word_counts)
        if not pairs:
            break
        gains = {p: _merge_gain(counts, p, n) for p, n in sorted(pairs.items())}
        best_gain = max(gains.values())
        if best_gain <= 1e-12:
            break
        best_pair = min(p for p, g in gains.items() if g >= best_gain - 1e-12)
        segs = {w: _merge_word(seg, best_pair) for w, seg in segs.items()}
        inventory.append(best_pair[0] + best_pair[1])
        history.append(
            (inventory[-1], gains[best_pair], _unigram_ll(_unit_counts(segs, word_counts)))
        )
    return inventory, history


def train_wordpieces(transcripts: list[str], target_size: int) -> SubwordInventory:
    """Greedy likelihood-driven pair merging from marked characters.

    `target_size` counts content units (the specials ride along). Merging
    stops at the target or when no merge increases corpus likelihood;
    candidate ties break lexicographically so training is deterministic.
    """
    inventory, _ = _train_merges(transcripts, target_size)
    return SubwordInventory(MODE_WORDPIECE, SPECIALS + tuple(inventory))


def wordpiece_merge_history(transcripts: list[str], target_size: int):
    """Merge trajectory as (new_unit, likelihood_gain, corpus_loglik) triples."""
    return _train_merges(transcripts, target_size)[1]


# ---------------------------------------------------------------------------
# Encoding / decoding
# ---------------------------------------------------------------------------


def _greedy_segment(marked: str, inv: SubwordInventory) -> list[int]:
    ids = []
    pos = 0
    max_len = inv._max_len  # noqa: SLF001 - internal cache on the inventory
    while pos < len(marked):
        match = None
        for length in range(min(max_len, len(marked) - pos), 0, -1):
            idx = inv.id_of(marked[pos : pos + length])
            if idx is not None and idx >= len(SPECIALS):
                match = (idx, length)
                break
        if match is None:
            ids.append(UNK)
            pos += 1
        else:
            ids.append(match[0])
            pos += match[1]
    return ids


def encode_words(words: list[str], inv: SubwordInventory) -> list[list[int]]:
    """Per-word token ids. In grapheme mode the space separator is attached to
    the preceding word, so the final word carries no trailing separator."""
    out: list[list[int]] = []
    if inv.mode == MODE_GRAPHEME:
        sep = inv.id_of(GRAPHEME_SEP)
        for i, word in enumerate(words):
            ids = [inv.id_of(c) if inv.id_of(c) is not None else UNK for c in word]
            if i < len(words) - 1:
                ids.append(sep)
            out.append(ids)
    else:
        for word in words:
            out.append(_greedy_segment(_marked_word(word), inv))
    return out


def encode(text: str, inv: SubwordInventory) -> list[int]:
    """Deterministic greedy longest-match segmentation of whitespace-split text."""
    if not text.strip():
        raise CorpusError("cannot encode empty text")
    return [i for ids in encode_words(text.split(), inv) for i in ids]


def decode(ids, inv: SubwordInventory) -> str:
    """Inverse of encode: drops control tokens, turns markers into spaces."""
    parts: list[str] = []
    for i in ids:
        if i in (EPS, SOS, EOS):
            continue
        unit = inv.unit_of(i) if i != UNK else "<unk>"
        if inv.mode == MODE_WORDPIECE and unit.startswith(MARKER):
            parts.append(" " + unit[len(MARKER):])
        else:
            parts.append(unit)
    return "".join(parts).strip()


# ---------------------------------------------------------------------------
# Inventory files
# ---------------------------------------------------------------------------


def save_inventory(inv: SubwordInventory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"mode={inv.mode} version=1\n")
        for unit in inv.units:
            fh.write(unit + "\n")


def load_inventory(path) -> SubwordInventory:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith("mode=") or not header.endswith(" version=1"):
            raise CorpusError(f"{path}: bad inventory header {header!r}")
        mode = header[len("mode="):].split()[0]
        if mode not in (MODE_GRAPHEME, MODE_WORDPIECE):
            raise CorpusError(f"{path}: unknown inventory mode {mode!r}")
        units = tuple(line.rstrip("\n") for line in fh)
    return SubwordInventory(mode, units)


def inventory_hash(inv: SubwordInventory) -> str:
    payload = (inv.mode + "\x00" + "\x00".join(inv.units)).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]
