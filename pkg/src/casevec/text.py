"""Shared tokenization.

Statute branches, case holdings, and encoder inputs all pass through the
same tokenizer so that lexical scoring and the neural vocabulary operate
over one token space.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

MODES = ("whitespace", "char-unigram")

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


@dataclass(frozen=True)
class TokenizerConfig:
    """How raw text is split into tokens.

    mode "whitespace" splits on runs of whitespace and suits Latin-script
    corpora; "char-unigram" emits one token per non-space character and is
    robust for scripts without word separators.
    """

    mode: str = "whitespace"
    lowercase: bool = True
    strip_punctuation: bool = True

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"tokenizer mode must be one of {MODES}, got {self.mode!r}")


def tokenize(text: str, cfg: TokenizerConfig = TokenizerConfig()) -> list[str]:
    """Split ``text`` into tokens. Deterministic; empty input gives []."""
    if not text:
        return []
    if cfg.lowercase:
        text = text.lower()
    if cfg.strip_punctuation:
        text = text.translate(_PUNCT_TABLE)
    if cfg.mode == "whitespace":
        return text.split()
    return [ch for ch in text if not ch.isspace()]
