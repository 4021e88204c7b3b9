"""Fixed decoder vocabulary: the symbol table shared by labels and model.

Index layout is frozen; checkpoints, datasets and the wire protocol all rely
on it. Operators use their ASCII forms ('*' for the times glyph, '/' for the
divide glyph) so label strings stay plain ASCII.
"""

from __future__ import annotations

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
EON = "<eon>"

TOKENS: tuple[str, ...] = (
    PAD, BOS, EOS, EON,
    "=", "+", "-", "*", "/", "(", ")", ".",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
)

INDEX: dict[str, int] = {tok: i for i, tok in enumerate(TOKENS)}

PAD_ID = INDEX[PAD]
BOS_ID = INDEX[BOS]
EOS_ID = INDEX[EOS]
EON_ID = INDEX[EON]

SPECIALS = frozenset((PAD, BOS, EOS))
OPERATORS = ("+", "-", "*", "/")
DIGITS = tuple(str(d) for d in range(10))
GLYPHS = ("=",) + OPERATORS + ("(", ")", ".") + DIGITS

VOCAB_SIZE = len(TOKENS)


def encode(tokens: list[str]) -> list[int]:
    try:
        return [INDEX[t] for t in tokens]
    except KeyError as exc:
        raise ValueError(f"unknown token {exc.args[0]!r}") from None


def decode(ids) -> list[str]:
    return [TOKENS[int(i)] for i in ids]


def strip_specials(tokens: list[str]) -> list[str]:
    """Drop pad/bos/eos; eon and glyphs stay."""
    return [t for t in tokens if t not in SPECIALS]
