"""Exception types shared across the toolkit."""


class NtkitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(NtkitError, ValueError):
    """Operand shapes are inconsistent; the message names the operand."""


class ConfigError(NtkitError, ValueError):
    """A configuration value is invalid or incompatible."""


class LabelError(NtkitError, ValueError):
    """A label index is outside the output inventory."""


class EmptyWindowError(NtkitError, ValueError):
    """Attention was asked to attend over zero rows."""


class LexiconError(NtkitError, ValueError):
    """A word is missing from the synthetic lexicon."""


class CorpusError(NtkitError, ValueError):
    """A corpus file failed to parse or violated an invariant."""


class CapExceededError(NtkitError, ValueError):
    """A block needs more non-epsilon labels than the cap M allows."""

    def __init__(self, utterance_id: str, block: int, count: int, cap: int):
        self.utterance_id = utterance_id
        self.block = block
        self.count = count
        self.cap = cap
        super().__init__(
            f"utterance {utterance_id!r}: block {block} needs {count} labels, cap M={cap}"
        )


class TransferError(NtkitError, ValueError):
    """Parameter transfer between models failed a compatibility check."""


class EnumerationLimitError(NtkitError, RuntimeError):
    """Exhaustive decoding would enumerate too many sequences."""


class NonFiniteError(NtkitError, ArithmeticError):
    """A value that must be finite was NaN or infinite."""
