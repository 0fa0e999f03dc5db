"""Per-block training targets: all sub-word units of a word land in the block
where the word ends, every block closes with one epsilon, and the per-block
cap M bounds non-epsilon emissions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import CapExceededError, ConfigError
from .frontend import WordAlignment
from .tokenizer import MODE_GRAPHEME


@dataclass(frozen=True)
class BlockTargets:
    """Blocked label sequence; flattened length is N + B (one epsilon per block)."""

    block_size: int
    num_blocks: int
    per_block: tuple[tuple[int, ...], ...]
    eps_id: int

    @property
    def flattened(self) -> tuple[int, ...]:
        return tuple(t for block in self.per_block for t in block)

    @property
    def non_epsilon(self) -> tuple[int, ...]:
        return tuple(t for t in self.flattened if t != self.eps_id)


def num_blocks(num_frames: int, block_size: int) -> int:
    """ceil(T / W) blocks; the final block may cover fewer frames."""
    if block_size < 1:
        raise ConfigError(f"block size must be >= 1, got {block_size}")
    if num_frames < 1:
        raise ConfigError(f"frame count must be >= 1, got {num_frames}")
    return -(-num_frames // block_size)


def build_block_targets(
    alignment: WordAlignment,
    tokens_per_word: Sequence[Sequence[int]],
    num_frames: int,
    block_size: int,
    cap: int,
    eps_id: int,
    utterance_id: str = "?",
) -> BlockTargets:
    """Place each word's tokens in the block holding its end frame.

    A word ending exactly on a block boundary frame belongs to
    floor(end_frame / block_size); blocks where no word ends carry only the
    epsilon. Raises CapExceededError naming the utterance and block when a
    block would need more than `cap` non-epsilon labels.
    """
    alignment.validate(num_frames, utterance_id)
    if len(tokens_per_word) != len(alignment.entries):
        raise ConfigError(
            f"utterance {utterance_id!r}: {len(alignment.entries)} aligned words but "
            f"{len(tokens_per_word)} token groups"
        )
    blocks = num_blocks(num_frames, block_size)
    per_block: list[list[int]] = [[] for _ in range(blocks)]
    for (word, _start, end), tokens in zip(alignment.entries, tokens_per_word):
        if not tokens:
            raise ConfigError(f"utterance {utterance_id!r}: word {word!r} has no tokens")
        if eps_id in tokens:
            raise ConfigError(f"utterance {utterance_id!r}: epsilon inside {word!r} tokens")
        per_block[end // block_size].extend(tokens)
    for b, labels in enumerate(per_block):
        if len(labels) > cap:
            raise CapExceededError(utterance_id, b, len(labels), cap)
        labels.append(eps_id)
    return BlockTargets(
        block_size=block_size,
        num_blocks=blocks,
        per_block=tuple(tuple(b) for b in per_block),
        eps_id=eps_id,
    )


@dataclass(frozen=True)
class WordDelimiterPolicy:
    """How word boundaries surface in the label stream for a tokenizer mode."""

    uses_separator: bool
    attaches_to: str = "preceding"  # separator rides with the earlier word's block


def word_delimiters(tokenizer_mode: str) -> WordDelimiterPolicy:
    """Grapheme mode needs an explicit separator token; wordpieces carry their
    own "_" word-start markers and need none."""
    return WordDelimiterPolicy(uses_separator=(tokenizer_mode == MODE_GRAPHEME))


def auto_cap(per_utterance_counts: Sequence[int], margin: int = 2) -> int:
    """Default M: margin above the largest per-block token count seen in training."""
    return margin + (max(per_utterance_counts) if per_utterance_counts else 0)


def max_block_load(
    alignment: WordAlignment,
    tokens_per_word: Sequence[Sequence[int]],
    num_frames: int,
    block_size: int,
) -> int:
    """Largest non-epsilon count any block of this utterance would need."""
    blocks = num_blocks(num_frames, block_size)
    loads = [0] * blocks
    for (_w, _s, end), tokens in zip(alignment.entries, tokens_per_word):
        loads[end // block_size] += len(tokens)
    return max(loads)


def dump_targets(bt: BlockTargets, unit_of, utterance_id: str = "?") -> str:
    """Human-readable per-block target dump for --dump-targets."""
    lines = [f"# {utterance_id}  W={bt.block_size} B={bt.num_blocks}"]
    for b, labels in enumerate(bt.per_block):
        rendered = " ".join(unit_of(t) for t in labels)
        lines.append(f"block {b:3d}: {rendered}")
    return "\n".join(lines)
