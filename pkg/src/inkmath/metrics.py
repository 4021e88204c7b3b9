"""Edit-distance metrics over token sequences."""

from __future__ import annotations

from typing import Sequence

from . import vocab


def levenshtein(a: Sequence[str], b: Sequence[str]) -> int:
    """Unit-cost edit distance; pad/bos/eos are stripped first."""
    a = vocab.strip_specials(list(a))
    b = vocab.strip_specials(list(b))
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1,
                           cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[len(b)]


def la(a: Sequence[str], b: Sequence[str]) -> float:
    """Normalized Levenshtein accuracy: 1 - LD / max(|a|, |b|).

    Symmetric; two empty sequences score 1.
    """
    sa = vocab.strip_specials(list(a))
    sb = vocab.strip_specials(list(b))
    longest = max(len(sa), len(sb))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(sa, sb) / longest


def cer(ref: Sequence[str], hyp: Sequence[str]) -> float:
    """Character error rate: LD / |ref|. May exceed 1."""
    sref = vocab.strip_specials(list(ref))
    if not sref:
        raise ValueError("cer needs a nonempty reference")
    return levenshtein(sref, list(hyp)) / len(sref)
