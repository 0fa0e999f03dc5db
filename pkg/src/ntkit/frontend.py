"""Feature pipeline: 10ms frame stacking to a 30ms rate, a synthetic
utterance generator with exact word alignments, and the JSON-lines corpus
format. The generator stands in for a real acoustic corpus: each character
of a word renders as a fixed embedding pattern plus seeded Gaussian noise,
so alignments are known exactly and everything is reproducible per seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusError, LexiconError
from .numerics import DTYPE

STACK_LEFT = 2  # frames of left context concatenated onto each kept frame
DOWNSAMPLE = 3  # 10ms -> 30ms


@dataclass
class RawFrames:
    """Frames at the 10ms analysis rate, (T_raw, D_raw)."""

    frames: np.ndarray
    frame_shift_ms: int = 10


@dataclass
class FeatureSequence:
    """Model-rate features, (T, D), one row per 30ms frame."""

    frames: np.ndarray
    utterance_id: str = ""
    frame_shift_ms: int = 30

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class WordAlignment:
    """Per-word (word, start_frame, end_frame) spans over 30ms frames, inclusive."""

    entries: tuple[tuple[str, int, int], ...]

    def validate(self, num_frames: int, utterance_id: str = "?") -> None:
        prev_end = -1
        for word, start, end in self.entries:
            if not word:
                raise CorpusError(f"utterance {utterance_id!r}: empty word in alignment")
            if end < start:
                raise CorpusError(
                    f"utterance {utterance_id!r}: word {word!r} has end {end} < start {start}"
                )
            if start <= prev_end:
                raise CorpusError(
                    f"utterance {utterance_id!r}: alignment overlaps or is unsorted at {word!r}"
                )
            prev_end = end
        if self.entries and self.entries[-1][2] >= num_frames:
            raise CorpusError(
                f"utterance {utterance_id!r}: alignment ends at frame "
                f"{self.entries[-1][2]} but only {num_frames} frames exist"
            )

    @property
    def words(self) -> list[str]:
        return [w for w, _, _ in self.entries]


def stack_and_downsample(raw: RawFrames, utterance_id: str = "") -> FeatureSequence:
    """Stack each kept frame with 2 frames of left context and keep every 3rd.

    Output frame t concatenates raw frames {3t+1-2, 3t+1-1, 3t+1} in 1-based
    raw indexing, clamped to the sequence: T_raw=10 yields 4 output frames
    with the last one edge-padded by repeating the final raw frame.
    """
    frames = np.asarray(raw.frames, dtype=DTYPE)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise CorpusError(f"utterance {utterance_id!r}: empty or non-2D raw frames")
    t_raw = frames.shape[0]
    t_out = -(-t_raw // DOWNSAMPLE)  # ceil
    idx = np.arange(t_out)[:, None] * DOWNSAMPLE + np.arange(STACK_LEFT + 1)[None, :]
    idx = np.minimum(idx, t_raw - 1)
    stacked = frames[idx].reshape(t_out, -1)
    return FeatureSequence(frames=stacked, utterance_id=utterance_id)


# ---------------------------------------------------------------------------
# Synthetic utterances
# ---------------------------------------------------------------------------

DEFAULT_WORDS = (
    "an", "at", "be", "cat", "dog", "sun", "red", "blue", "jump", "fish",
    "green", "house", "water", "cloud", "stone", "light", "dream", "river",
    "winter", "summer", "orange", "purple", "thunder", "morning",
)


def _char_pattern(char: str, dim: int) -> np.ndarray:
    """Fixed per-character embedding, derived from a hash so it never drifts."""
    digest = hashlib.sha256(f"ntkit-char:{char}:{dim}".encode()).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, size=dim).astype(DTYPE)


@dataclass
class SynthLexicon:
    """Word list plus rendering geometry for the synthetic generator."""

    words: tuple[str, ...] = DEFAULT_WORDS
    raw_dim: int = 8
    frames_per_char: int = 2  # at the 30ms output rate
    _patterns: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def pattern(self, char: str) -> np.ndarray:
        if char not in self._patterns:
            self._patterns[char] = _char_pattern(char, self.raw_dim)
        return self._patterns[char]


def synth_utterance(
    words: list[str] | tuple[str, ...],
    lexicon: SynthLexicon,
    noise_level: float,
    seed: int,
    utterance_id: str | None = None,
) -> tuple[FeatureSequence, WordAlignment]:
    """Render words as per-character patterns; returns features plus alignment.

    Characters render at the 10ms rate (3 * frames_per_char raw frames each)
    and are stacked to 30ms, so each character occupies exactly
    frames_per_char output frames and alignments are exact.
    """
    for word in words:
        if word not in lexicon.words:
            raise LexiconError(f"word {word!r} not in the synthetic lexicon")
    if not words:
        raise LexiconError("cannot synthesize an empty utterance")
    rng = np.random.Generator(np.random.PCG64(seed))
    raw_rows: list[np.ndarray] = []
    entries: list[tuple[str, int, int]] = []
    out_cursor = 0
    per_char_raw = DOWNSAMPLE * lexicon.frames_per_char
    for word in words:
        start = out_cursor
        for char in word:
            raw_rows.append(np.tile(lexicon.pattern(char), (per_char_raw, 1)))
            out_cursor += lexicon.frames_per_char
        entries.append((word, start, out_cursor - 1))
    raw = np.concatenate(raw_rows, axis=0)
    if noise_level > 0:
        raw = raw + noise_level * rng.standard_normal(raw.shape)
    uid = utterance_id if utterance_id is not None else f"synth-{seed}"
    feats = stack_and_downsample(RawFrames(frames=raw), utterance_id=uid)
    alignment = WordAlignment(entries=tuple(entries))
    alignment.validate(feats.num_frames, uid)
    return feats, alignment


@dataclass
class CorpusItem:
    features: FeatureSequence
    alignment: WordAlignment
    transcript: str


def synth_corpus(
    lexicon: SynthLexicon,
    num_utterances: int,
    seed: int,
    noise_level: float = 0.3,
    min_words: int = 2,
    max_words: int = 5,
    id_prefix: str = "utt",
) -> list[CorpusItem]:
    """Sample a reproducible corpus of synthetic utterances."""
    rng = np.random.Generator(np.random.PCG64(seed))
    items = []
    for i in range(num_utterances):
        n = int(rng.integers(min_words, max_words + 1))
        words = [lexicon.words[int(j)] for j in rng.integers(0, len(lexicon.words), size=n)]
        utt_seed = int(rng.integers(0, 2**63 - 1))
        uid = f"{id_prefix}-{i:05d}"
        feats, alignment = synth_utterance(words, lexicon, noise_level, utt_seed, uid)
        items.append(CorpusItem(feats, alignment, " ".join(words)))
    return items


# ---------------------------------------------------------------------------
# Corpus file format: one JSON object per line
# ---------------------------------------------------------------------------


def save_corpus(path, items: list[CorpusItem]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in items:
            record = {
                "id": item.features.utterance_id,
                "transcript": item.transcript,
                "frames": item.features.frames.tolist(),
                "alignment": [[w, s, e] for w, s, e in item.alignment.entries],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_corpus(path) -> list[CorpusItem]:
    """Order-preserving load; validates alignment invariants per utterance."""
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                uid = record["id"]
                frames = np.asarray(record["frames"], dtype=DTYPE)
                transcript = record["transcript"]
                entries = tuple((w, int(s), int(e)) for w, s, e in record["alignment"])
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed record ({exc})") from exc
            if frames.ndim != 2:
                raise CorpusError(f"{path}: line {lineno}: frames must be a 2-D array")
            feats = FeatureSequence(frames=frames, utterance_id=uid)
            alignment = WordAlignment(entries=entries)
            alignment.validate(feats.num_frames, uid)
            items.append(CorpusItem(feats, alignment, transcript))
    return items


def corpus_hash(path) -> str:
    """Content hash for provenance lines in reports."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]
