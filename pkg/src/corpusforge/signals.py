"""Arabic-adapted syntactic quality signals, calibration histograms, policies.

Twenty signals are computed per record. All tokenization here is
Arabic-aware: words break on whitespace plus Unicode punctuation and
symbols (covering Arabic marks like ، ؛ ؟ « »), Arabic-Indic digits count
as digits, and combining marks (diacritics) do not count toward word
length. Exact definitions live in each helper's docstring; every signal
is a pure, deterministic function of the text.
"""

from __future__ import annotations

import csv
import json
import random
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

from .errors import ConfigError, DataError
from .records import Record
from .stopwords import STOPWORDS

# Sentence enders: Latin . ! ? plus Arabic question mark and full stop.
_SENTENCE_SPLIT_RE = re.compile(r"[.!?؟۔]+")
# Symbols counted by symbol_to_word_ratio: hash, ellipsis (as "..." or the
# one-char form), and Arabic ornament/sign characters.
_SYMBOL_RE = re.compile(r"\.\.\.|[#…٭۞۝؎؏]")
_ELLIPSIS_SUFFIXES = ("...", "…")
_BULLET_CHARS = frozenset("-*•‣◦⁃⁌⁍∙●▪·–")

_ARABIC_BLOCKS = (
    (0x0600, 0x06FF),
    (0x0750, 0x077F),
    (0x08A0, 0x08FF),
    (0xFB50, 0xFDFF),
    (0xFE70, 0xFEFF),
)

SIGNAL_NAMES = (
    "num_sentences",
    "num_words",
    "mean_word_length",
    "frac_unique_words",
    "symbol_to_word_ratio",
    "punctuation_to_word_ratio",
    "frac_lines_ending_ellipsis",
    "frac_lines_starting_bullet",
    "frac_chars_in_duplicate_lines",
    "frac_chars_in_top_2gram",
    "frac_chars_in_top_3gram",
    "frac_chars_in_top_4gram",
    "frac_chars_in_dup_5grams",
    "frac_chars_in_dup_10grams",
    "frac_numeric_chars",
    "frac_words_with_alpha",
    "stopword_count",
    "doc_char_length",
    "longest_line_fraction",
    "arabic_fraction",
)

# Declared score ranges. None as upper bound means unbounded; such signals
# are min-max scaled before histogramming.
SIGNAL_RANGES: dict[str, tuple[float, float | None]] = {
    "num_sentences": (0.0, None),
    "num_words": (0.0, None),
    "mean_word_length": (0.0, None),
    "frac_unique_words": (0.0, 1.0),
    "symbol_to_word_ratio": (0.0, None),
    "punctuation_to_word_ratio": (0.0, None),
    "frac_lines_ending_ellipsis": (0.0, 1.0),
    "frac_lines_starting_bullet": (0.0, 1.0),
    "frac_chars_in_duplicate_lines": (0.0, 1.0),
    "frac_chars_in_top_2gram": (0.0, 1.0),
    "frac_chars_in_top_3gram": (0.0, 1.0),
    "frac_chars_in_top_4gram": (0.0, 1.0),
    "frac_chars_in_dup_5grams": (0.0, 1.0),
    "frac_chars_in_dup_10grams": (0.0, 1.0),
    "frac_numeric_chars": (0.0, 1.0),
    "frac_words_with_alpha": (0.0, 1.0),
    "stopword_count": (0.0, None),
    "doc_char_length": (0.0, None),
    "longest_line_fraction": (0.0, 1.0),
    "arabic_fraction": (0.0, 1.0),
}

PARAGRAPH_PRESETS = {
    # (min_paragraphs, min_chars): the strict C4 web filter and the relaxed
    # variant shipped for Arabic corpora, where one long paragraph suffices.
    "c4": (3, 200),
    "arabic": (1, 200),
}

_PARAGRAPH_SPLIT_RE = re.compile(r"\n\s*\n")


@lru_cache(maxsize=None)
def _is_word_char(ch: str) -> bool:
    if ch.isspace():
        return False
    return unicodedata.category(ch)[0] not in ("P", "S")


@lru_cache(maxsize=None)
def _is_letter(ch: str) -> bool:
    return unicodedata.category(ch).startswith("L")


@lru_cache(maxsize=None)
def _is_mark(ch: str) -> bool:
    return unicodedata.category(ch).startswith("M")


@lru_cache(maxsize=None)
def _is_digit(ch: str) -> bool:
    return unicodedata.category(ch) == "Nd"


def _is_arabic_char(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _ARABIC_BLOCKS)


def tokenize_words(text: str) -> list[str]:
    """Split text into words on whitespace, punctuation, and symbols.

    Combining marks stay attached to their word; this is the shared word
    splitter used by the quality signals and the n-gram LM.
    """
    words = []
    current: list[str] = []
    for ch in text:
        if _is_word_char(ch):
            current.append(ch)
        elif current:
            words.append("".join(current))
            current = []
    if current:
        words.append("".join(current))
    return words


def _word_length(word: str) -> int:
    # Diacritics and other combining marks do not count as letters.
    return sum(1 for ch in word if not _is_mark(ch))


def arabic_fraction(text: str) -> float:
    """Fraction of letter characters that belong to the Arabic blocks."""
    letters = 0
    arabic = 0
    for ch in text:
        if _is_letter(ch):
            letters += 1
            if _is_arabic_char(ch):
                arabic += 1
    return arabic / letters if letters else 0.0


def min_long_paragraphs(text: str, min_chars: int = 200, min_paragraphs: int = 1) -> bool:
    """True iff at least ``min_paragraphs`` blank-line-delimited paragraphs
    have at least ``min_chars`` characters each."""
    paragraphs = [p.strip() for p in _PARAGRAPH_SPLIT_RE.split(text)]
    long_enough = sum(1 for p in paragraphs if len(p) >= min_chars)
    return long_enough >= min_paragraphs


def _ngram_counts(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def _frac_chars_in_top_ngram(words: Sequence[str], n: int, total_mass: int) -> float:
    if len(words) < n or total_mass == 0:
        return 0.0
    counts = _ngram_counts(words, n)
    gram, top = max(counts.items(), key=lambda kv: (kv[1], kv[0]))
    if top < 2:
        return 0.0
    return top * sum(len(w) for w in gram) / total_mass


def _frac_chars_in_dup_ngrams(words: Sequence[str], n: int, total_mass: int) -> float:
    # Word positions covered by any n-gram occurring more than once.
    if len(words) < n or total_mass == 0:
        return 0.0
    counts = _ngram_counts(words, n)
    covered = [False] * len(words)
    for i in range(len(words) - n + 1):
        if counts[tuple(words[i : i + n])] > 1:
            for j in range(i, i + n):
                covered[j] = True
    return sum(len(w) for w, c in zip(words, covered) if c) / total_mass


def compute_signals(record: Record | str) -> dict[str, float]:
    """Compute all twenty quality signals for a record's text.

    Empty text yields degenerate-but-defined values: counts and ratios 0,
    ``frac_unique_words`` 1.0.
    """
    text = record.text if isinstance(record, Record) else record

    words = tokenize_words(text)
    num_words = len(words)
    raw_lines = text.split("\n")
    lines = [ln for ln in (l.strip() for l in raw_lines) if ln]
    word_mass = sum(len(w) for w in words)

    sentences = sum(
        1 for seg in _SENTENCE_SPLIT_RE.split(text) if seg.strip()
    )

    punct_chars = sum(
        1 for ch in text if unicodedata.category(ch).startswith("P")
    )
    symbol_count = len(_SYMBOL_RE.findall(text))

    line_counts = Counter(lines)
    line_mass = sum(len(ln) for ln in lines)
    dup_line_mass = sum(len(ln) for ln in lines if line_counts[ln] > 1)

    non_ws = sum(1 for ch in text if not ch.isspace())
    digit_chars = sum(1 for ch in text if _is_digit(ch))

    signals = {
        "num_sentences": float(sentences),
        "num_words": float(num_words),
        "mean_word_length": (
            sum(_word_length(w) for w in words) / num_words if num_words else 0.0
        ),
        "frac_unique_words": (len(set(words)) / num_words if num_words else 1.0),
        "symbol_to_word_ratio": (symbol_count / num_words if num_words else 0.0),
        "punctuation_to_word_ratio": (punct_chars / num_words if num_words else 0.0),
        "frac_lines_ending_ellipsis": (
            sum(1 for ln in lines if ln.endswith(_ELLIPSIS_SUFFIXES)) / len(lines)
            if lines
            else 0.0
        ),
        "frac_lines_starting_bullet": (
            sum(1 for ln in lines if ln[0] in _BULLET_CHARS) / len(lines)
            if lines
            else 0.0
        ),
        "frac_chars_in_duplicate_lines": (
            dup_line_mass / line_mass if line_mass else 0.0
        ),
        "frac_chars_in_top_2gram": _frac_chars_in_top_ngram(words, 2, word_mass),
        "frac_chars_in_top_3gram": _frac_chars_in_top_ngram(words, 3, word_mass),
        "frac_chars_in_top_4gram": _frac_chars_in_top_ngram(words, 4, word_mass),
        "frac_chars_in_dup_5grams": _frac_chars_in_dup_ngrams(words, 5, word_mass),
        "frac_chars_in_dup_10grams": _frac_chars_in_dup_ngrams(words, 10, word_mass),
        "frac_numeric_chars": (digit_chars / non_ws if non_ws else 0.0),
        "frac_words_with_alpha": (
            sum(1 for w in words if any(_is_letter(ch) for ch in w)) / num_words
            if num_words
            else 0.0
        ),
        "stopword_count": float(sum(1 for w in words if w.lower() in STOPWORDS)),
        "doc_char_length": float(len(text)),
        "longest_line_fraction": (
            max(len(ln) for ln in raw_lines) / len(text) if text else 0.0
        ),
        "arabic_fraction": arabic_fraction(text),
    }
    return signals


# --------------------------------------------------------------------------
# Filter policies


@dataclass(frozen=True)
class PolicyRule:
    """Keep records whose signal lies in [min, max] (either bound optional).

    ``signal`` may reference the external-score map with an
    ``external_scores.`` prefix; such names are not validated against the
    built-in signal list. Records lacking a referenced external score pass
    the rule (parallel to URL dedup keeping records without a URL).
    """

    signal: str
    min: float | None = None
    max: float | None = None

    def __post_init__(self):
        if self.min is None and self.max is None:
            raise ConfigError(f"rule for {self.signal!r} needs a min or a max")
        if self.min is not None and self.max is not None and self.min > self.max:
            raise ConfigError(f"rule for {self.signal!r} has min > max")
        if not self.signal.startswith("external_scores.") and self.signal not in SIGNAL_NAMES:
            raise ConfigError(f"rule references unknown signal {self.signal!r}")


@dataclass
class FilterPolicy:
    """Ordered rule list; a record is dropped on its first violated rule."""

    rules: list[PolicyRule]
    name: str = "custom"

    @classmethod
    def from_dict(cls, obj: dict) -> "FilterPolicy":
        if obj.get("version", 1) != 1:
            raise ConfigError(f"unsupported policy version {obj.get('version')!r}")
        rules = [
            PolicyRule(r["signal"], r.get("min"), r.get("max"))
            for r in obj.get("rules", [])
        ]
        return cls(rules=rules, name=obj.get("name", "custom"))

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "name": self.name,
            "rules": [
                {
                    "signal": r.signal,
                    **({"min": r.min} if r.min is not None else {}),
                    **({"max": r.max} if r.max is not None else {}),
                }
                for r in self.rules
            ],
        }

    @classmethod
    def load(cls, path) -> "FilterPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)


def default_arabic_policy() -> FilterPolicy:
    """Shipped defaults: repetition cutoff at 0.2 unique-word fraction
    (catches ad content) and a majority-Arabic requirement."""
    return FilterPolicy(
        rules=[
            PolicyRule("frac_unique_words", min=0.2),
            PolicyRule("arabic_fraction", min=0.5),
        ],
        name="arabic-default",
    )


@dataclass(frozen=True)
class PolicyDecision:
    keep: bool
    reason: str | None = None
    value: float | None = None


def apply_policy(record: Record, policy: FilterPolicy) -> PolicyDecision:
    """Evaluate rules in order; the first violation names the drop reason.

    Signals missing from the record are computed on demand (the record is
    not mutated).
    """
    computed: dict[str, float] | None = None
    for rule in policy.rules:
        if rule.signal.startswith("external_scores."):
            key = rule.signal.split(".", 1)[1]
            if key not in record.external_scores:
                continue
            value = record.external_scores[key]
        elif rule.signal in record.quality_signals:
            value = record.quality_signals[rule.signal]
        else:
            if computed is None:
                computed = compute_signals(record)
            value = computed[rule.signal]
        if rule.min is not None and value < rule.min:
            return PolicyDecision(keep=False, reason=rule.signal, value=value)
        if rule.max is not None and value > rule.max:
            return PolicyDecision(keep=False, reason=rule.signal, value=value)
    return PolicyDecision(keep=True)


# --------------------------------------------------------------------------
# Histogram calibration


@dataclass
class HistogramCalibration:
    """Ten-bin score histogram with per-bin reservoir samples of record ids.

    Signals whose declared range is not [0, 1] are min-max scaled first;
    the scaling is recorded so bin edges can be mapped back.
    """

    signal: str
    counts: list[int]
    samples: list[list[tuple[str, float]]]
    sample_capacity: int
    total: int
    scale: tuple[float, float] | None = None
    bin_edges: list[float] = field(
        default_factory=lambda: [i / 10 for i in range(11)]
    )

    def bin_of(self, scaled_score: float) -> int:
        return min(int(scaled_score * 10), 9)


class _Reservoir:
    """Algorithm R: uniform sample of fixed capacity over a stream."""

    def __init__(self, capacity: int, rng: random.Random):
        self.capacity = capacity
        self.rng = rng
        self.items: list[tuple[str, float]] = []
        self.seen = 0

    def offer(self, item: tuple[str, float]) -> None:
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            j = self.rng.randrange(self.seen)
            if j < self.capacity:
                self.items[j] = item


def _scaled(score: float, lo: float, hi: float) -> float:
    if hi == lo:
        return 0.0
    return (score - lo) / (hi - lo)


def build_histogram(
    records: Iterable[Record | tuple[str, float]],
    signal: str,
    sample_capacity: int = 100,
    seed: int = 0,
) -> HistogramCalibration:
    """One pass over the stream; scores outside [0, 1] ranges are min-max
    scaled (which requires buffering scores for unbounded signals)."""
    if signal not in SIGNAL_RANGES:
        raise ConfigError(f"unknown signal {signal!r}")

    def _pairs():
        for item in records:
            if isinstance(item, Record):
                if signal not in item.quality_signals:
                    raise DataError(
                        f"record {item.id!r} lacks signal {signal!r}; run the signals stage first"
                    )
                yield item.id, item.quality_signals[signal]
            else:
                yield item

    rng = random.Random(seed)
    lo_decl, hi_decl = SIGNAL_RANGES[signal]
    reservoirs = [_Reservoir(sample_capacity, rng) for _ in range(10)]
    counts = [0] * 10
    total = 0
    scale: tuple[float, float] | None = None

    if hi_decl is not None:
        for rid, score in _pairs():
            if not lo_decl <= score <= hi_decl:
                raise DataError(f"score {score} for {signal!r} outside declared range")
            b = min(int(score * 10), 9)
            counts[b] += 1
            reservoirs[b].offer((rid, score))
            total += 1
    else:
        buffered = list(_pairs())
        if buffered:
            lo = min(s for _, s in buffered)
            hi = max(s for _, s in buffered)
            scale = (lo, hi)
            for rid, score in buffered:
                b = min(int(_scaled(score, lo, hi) * 10), 9)
                counts[b] += 1
                reservoirs[b].offer((rid, score))
                total += 1

    return HistogramCalibration(
        signal=signal,
        counts=counts,
        samples=[r.items for r in reservoirs],
        sample_capacity=sample_capacity,
        total=total,
        scale=scale,
    )


def merge_histograms(
    a: HistogramCalibration, b: HistogramCalibration, seed: int = 0
) -> HistogramCalibration:
    """Combine shard histograms: counts add, reservoirs merge by weighted
    draws without replacement (uniformity preserved when inputs are uniform).
    Only valid when both shards were binned on the same scale."""
    if a.signal != b.signal:
        raise ConfigError("cannot merge histograms of different signals")
    if a.scale != b.scale:
        raise ConfigError("cannot merge histograms built with different scalings")
    rng = random.Random(seed)
    counts = [ca + cb for ca, cb in zip(a.counts, b.counts)]
    samples = []
    cap = max(a.sample_capacity, b.sample_capacity)
    for bin_idx in range(10):
        pool_a = list(a.samples[bin_idx])
        pool_b = list(b.samples[bin_idx])
        weight_a, weight_b = a.counts[bin_idx], b.counts[bin_idx]
        merged: list[tuple[str, float]] = []
        while len(merged) < cap and (pool_a or pool_b):
            total_w = (weight_a if pool_a else 0) + (weight_b if pool_b else 0)
            take_a = pool_a and rng.randrange(total_w) < (weight_a if pool_a else 0)
            pool = pool_a if take_a else pool_b
            merged.append(pool.pop(rng.randrange(len(pool))))
        samples.append(merged)
    return HistogramCalibration(
        signal=a.signal,
        counts=counts,
        samples=samples,
        sample_capacity=cap,
        total=a.total + b.total,
        scale=a.scale,
    )


def export_histogram_csv(hist: HistogramCalibration, path) -> None:
    """CSV rows (bin_low, bin_high, count) for manual inspection."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count"])
        for i, count in enumerate(hist.counts):
            writer.writerow([hist.bin_edges[i], hist.bin_edges[i + 1], count])


def export_bin_samples_jsonl(hist: HistogramCalibration, path) -> None:
    """JSONL of sampled record ids + scores, one line per (bin, record)."""
    with open(path, "w", encoding="utf-8") as fh:
        for bin_idx, sample in enumerate(hist.samples):
            for rid, score in sample:
                fh.write(
                    json.dumps(
                        {"bin": bin_idx, "id": rid, "score": score},
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                )
                fh.write("\n")
