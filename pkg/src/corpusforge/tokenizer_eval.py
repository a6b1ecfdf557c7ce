"""Intrinsic tokenizer evaluation: fertility and morphological alignment.

Fertility is the ratio of emitted subword tokens to whitespace tokens on
the same corpus. The alignment score runs a global order-preserving
dynamic-programming alignment (gap cost 0) between a word's tokens and its
morphemes: a pair matches only when the strings are equal and sit at the
same character offsets within the word, so a frequent fragment appearing
somewhere it does not belong earns nothing. Per-word scores are
matches / max(token count, morpheme count), bounded in [0, 1], and 1.0
exactly when tokens and morphemes agree element-wise.

Scores produced here are comparable only within this toolkit: the match
criterion and max-length normalization above are this implementation's
choices, fixed so the metric is reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .bpe import Tokenizer
from .errors import DataError
from .segmentation import Segmenter, segmenter_from_config

TokenizeFn = Callable[[str], list]


@dataclass(frozen=True)
class AlignmentResult:
    score: float
    matches: tuple[tuple[int, int], ...]  # (token index, morpheme index), increasing


@dataclass
class EvalReport:
    fertility: float
    morph_alignment: float
    token_count: int
    word_count: int
    evaluated_word_count: int
    skipped_word_count: int
    alignment_histogram: list[int] = field(default_factory=lambda: [0] * 10)
    worst_words: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "fertility": self.fertility,
            "morph_alignment": self.morph_alignment,
            "token_count": self.token_count,
            "word_count": self.word_count,
            "evaluated_word_count": self.evaluated_word_count,
            "skipped_word_count": self.skipped_word_count,
            "alignment_histogram": self.alignment_histogram,
        }


def _token_counter(tokenizer: Tokenizer | TokenizeFn) -> TokenizeFn:
    if isinstance(tokenizer, Tokenizer):
        return tokenizer.encode
    return tokenizer


def fertility(tokenizer: Tokenizer | TokenizeFn, corpus: Iterable[str]) -> float:
    """Total emitted tokens / total whitespace tokens over the corpus."""
    encode = _token_counter(tokenizer)
    tokens = 0
    words = 0
    for text in corpus:
        tokens += len(encode(text))
        words += len(text.split())
    if words == 0:
        raise DataError("fertility is undefined on a corpus with no words")
    return tokens / words


def align_word(tokens: list[str], morphemes: list[str]) -> AlignmentResult:
    """Best order-preserving alignment between two tilings of one word.

    Inputs must be non-empty and use the same character multiset (they may
    tile the word differently, or list the same pieces in a different
    order, in which case positional matching yields zero). The returned
    trace lists matched index pairs, strictly increasing on both sides,
    and the score equals the brute-force maximum over all monotone
    matchings.
    """
    if not tokens or not morphemes:
        raise DataError("cannot align empty sequences")
    if any(not t for t in tokens) or any(not m for m in morphemes):
        raise DataError("cannot align sequences with empty elements")
    if sorted("".join(tokens)) != sorted("".join(morphemes)):
        raise DataError(
            f"token and morpheme concatenations differ: "
            f"{''.join(tokens)!r} vs {''.join(morphemes)!r}"
        )

    def _starts(parts: list[str]) -> list[int]:
        starts = [0]
        for part in parts[:-1]:
            starts.append(starts[-1] + len(part))
        return starts

    token_starts = _starts(tokens)
    morpheme_starts = _starts(morphemes)

    n, m = len(tokens), len(morphemes)
    match = [
        [
            tokens[i] == morphemes[j] and token_starts[i] == morpheme_starts[j]
            for j in range(m)
        ]
        for i in range(n)
    ]

    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        for j in range(1, m + 1):
            row[j] = max(prev[j], row[j - 1], prev[j - 1] + match[i - 1][j - 1])

    matches: list[tuple[int, int]] = []
    i, j = n, m
    while i > 0 and j > 0:
        if match[i - 1][j - 1] and dp[i][j] == dp[i - 1][j - 1] + 1:
            matches.append((i - 1, j - 1))
            i -= 1
            j -= 1
        elif dp[i][j] == dp[i - 1][j]:
            i -= 1
        else:
            j -= 1
    matches.reverse()

    return AlignmentResult(score=dp[n][m] / max(n, m), matches=tuple(matches))


def morph_alignment_score(
    tokenizer: Tokenizer,
    corpus: Iterable[str],
    segmenter: Segmenter | None = None,
    frequency_weighted: bool = True,
    worst_n: int = 20,
) -> EvalReport:
    """Mean per-word alignment between the tokenizer's output and the
    segmenter's morphemes, plus fertility, over the corpus.

    Words the segmenter rejects, or that encode through the unknown token
    (no positional tiling exists for them), are skipped and tallied in
    ``skipped_word_count``. Counts are frequency-weighted unless
    ``frequency_weighted`` is off, in which case each distinct word counts
    once.
    """
    if segmenter is None:
        segmenter = segmenter_from_config(tokenizer.segmenter_config)

    word_freq: dict[str, int] = {}
    for text in corpus:
        for word in text.split():
            word_freq[word] = word_freq.get(word, 0) + 1
    if not word_freq:
        raise DataError("cannot evaluate on a corpus with no words")

    unk_token = tokenizer.specials["unk"]
    token_count = 0
    word_count = 0
    evaluated = 0
    skipped = 0
    weighted_sum = 0.0
    histogram = [0] * 10
    per_word_scores: list[tuple[float, str]] = []

    for word in sorted(word_freq):
        freq = word_freq[word]
        weight = freq if frequency_weighted else 1
        tokens = tokenizer.tokens_for(word)
        token_count += freq * len(tokens)
        word_count += freq

        stripped = [t.replace(tokenizer.marker, "") for t in tokens]
        stripped = [t for t in stripped if t]
        if unk_token in tokens or "".join(stripped) != word:
            skipped += weight
            continue
        try:
            segmentation = segmenter.segment(word)
        except DataError:
            skipped += weight
            continue
        result = align_word(stripped, list(segmentation.morphemes))
        evaluated += weight
        weighted_sum += weight * result.score
        histogram[min(int(result.score * 10), 9)] += weight
        per_word_scores.append((result.score, word))

    per_word_scores.sort()
    return EvalReport(
        fertility=token_count / word_count,
        morph_alignment=weighted_sum / evaluated if evaluated else 0.0,
        token_count=token_count,
        word_count=word_count,
        evaluated_word_count=evaluated,
        skipped_word_count=skipped,
        alignment_histogram=histogram,
        worst_words=[(word, score) for score, word in per_word_scores[:worst_n]],
    )


def export_report_json(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, ensure_ascii=False, indent=2, sort_keys=True)


def export_worst_words_csv(report: EvalReport, path) -> None:
    """The worst-aligned words, for eyeballing what the tokenizer mangles."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word", "alignment_score"])
        for word, score in report.worst_words:
            writer.writerow([word, f"{score:.6f}"])
