"""Deterministic caption tokenizer used to address spatial tokens."""

import re

from combiverse.errors import ValidationError

_TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")


def tokenize_caption(caption: str) -> list[str]:
    """Split a caption into word and punctuation tokens.

    Token positions are stable across runs, so a spatial-token index
    refers to the same word for every consumer. Score providers with their
    own tokenizer map indices themselves.

    Args:
        caption: Non-empty caption text.

    Returns:
        list[str]: Tokens in order of appearance.

    Raises:
        ValidationError: If the caption is empty or only whitespace.
    """
    if not caption or not caption.strip():
        raise ValidationError("caption must be non-empty")
    return _TOKEN_PATTERN.findall(caption)


__all__ = ["tokenize_caption"]
