"""Word n-gram language model with interpolated modified Kneser-Ney
smoothing, plus perplexity scoring and percentile-based corpus filtering.

The model stores interpolated probabilities for every counted gram and a
backoff weight per context, so scoring walks the usual backoff chain.
Lower orders are estimated from continuation counts (grams anchored at the
sentence-start symbol keep their raw counts, since nothing can precede
them), and unigrams interpolate with the uniform distribution so unknown
words always receive mass. Per-context probabilities over the vocabulary
(including the unknown token) sum to one by construction.

A stupid-backoff mode exists for speed. It is not normalized: scores are
relative frequencies chained with a fixed 0.4 penalty, and the
sum-to-one invariant is explicitly suspended there.
"""

from __future__ import annotations

import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigError, DataError
from .records import Record
from .signals import tokenize_words

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

KNESER_NEY = "kneser_ney"
STUPID_BACKOFF = "stupid_backoff"
_SMOOTHING_IDS = {KNESER_NEY: 1, STUPID_BACKOFF: 2}
_SMOOTHING_NAMES = {v: k for k, v in _SMOOTHING_IDS.items()}
_SB_ALPHA = 0.4

_LM_MAGIC = b"CFLM"
_LM_VERSION = 1
_LM_HEADER = struct.Struct("<4sHHBI")
_STR_LEN = struct.Struct("<H")
_COUNT = struct.Struct("<Q")
_F8 = struct.Struct("<d")
_ID = struct.Struct("<I")


_MIN_DISCOUNT = 0.05


def _discounts(count_of_counts: Counter) -> tuple[float, float, float]:
    """Per-order discounts (D1, D2, D3+) from count-of-count statistics.

    Uses the modified Kneser-Ney closed form when n1..n4 are all positive;
    degenerate shapes (tiny corpora) fall back to a single absolute
    discount. Values are clamped to (0, count level] so the estimator stays
    exactly normalized while every backoff weight stays strictly positive.
    """
    n1 = count_of_counts.get(1, 0)
    n2 = count_of_counts.get(2, 0)
    n3 = count_of_counts.get(3, 0)
    n4 = count_of_counts.get(4, 0)
    if n1 and n2 and n3 and n4:
        y = n1 / (n1 + 2 * n2)
        d1 = 1 - 2 * y * n2 / n1  # strictly inside (0, 1)
        d2 = min(max(2 - 3 * y * n3 / n2, _MIN_DISCOUNT), 2.0)
        d3 = min(max(3 - 4 * y * n4 / n3, _MIN_DISCOUNT), 3.0)
        return (d1, d2, d3)
    d = n1 / (n1 + 2 * n2) if n1 > 0 else 0.5
    return (d, d, d)


def _discount_for(count: int, disc: tuple[float, float, float]) -> float:
    if count >= 3:
        return disc[2]
    if count == 2:
        return disc[1]
    if count == 1:
        return disc[0]
    return 0.0


@dataclass
class NgramLm:
    order: int
    smoothing: str
    vocab: frozenset[str]  # prediction vocabulary: word types + UNK + EOS
    # gram -> log prob (KN) or raw count (stupid backoff)
    _prob: dict[tuple[str, ...], float] = field(default_factory=dict, repr=False)
    # context -> log backoff weight (KN) or context total count (stupid backoff)
    _backoff: dict[tuple[str, ...], float] = field(default_factory=dict, repr=False)
    _total_tokens: int = 0

    def __post_init__(self):
        self._vocab_all = self.vocab | {BOS}

    def _map(self, token: str) -> str:
        return token if token in self._vocab_all else UNK

    def log_prob(self, word: str, context: Sequence[str] = ()) -> float:
        """Natural-log P(word | context) via the backoff chain."""
        w = word if word in self.vocab else UNK
        ctx = tuple(self._map(t) for t in context)[max(0, len(context) - (self.order - 1)):]
        if self.smoothing == STUPID_BACKOFF:
            return self._sb_log_score(w, ctx)
        acc = 0.0
        while True:
            p = self._prob.get(ctx + (w,))
            if p is not None:
                return acc + p
            if not ctx:
                raise AssertionError(f"no unigram stored for {w!r}")
            acc += self._backoff.get(ctx, 0.0)
            ctx = ctx[1:]

    def _sb_log_score(self, w: str, ctx: tuple[str, ...]) -> float:
        acc = 0.0
        while ctx:
            count = self._prob.get(ctx + (w,))
            if count is not None:
                return acc + math.log(count / self._backoff[ctx])
            acc += math.log(_SB_ALPHA)
            ctx = ctx[1:]
        count = self._prob.get((w,))
        if count:
            return acc + math.log(count / self._total_tokens)
        return acc + math.log(1.0 / (10.0 * self._total_tokens))

    def perplexity(self, text_or_tokens: str | Sequence[str]) -> float:
        """exp of mean negative log-likelihood per token, end symbol included."""
        if isinstance(text_or_tokens, str):
            tokens = tokenize_words(text_or_tokens)
        else:
            tokens = list(text_or_tokens)
        if not tokens:
            raise DataError("cannot score an empty token sequence")
        logp = 0.0
        ctx: tuple[str, ...] = (BOS,)
        for raw in [*tokens, EOS]:
            logp += self.log_prob(raw, ctx)
            if self.order > 1:
                ctx = (ctx + (self._map(raw),))[-(self.order - 1):]
        return math.exp(-logp / (len(tokens) + 1))


def perplexity(lm: NgramLm, record: Record | str | Sequence[str]) -> float:
    text = record.text if isinstance(record, Record) else record
    return lm.perplexity(text)


def train_lm(
    corpus: Iterable[str],
    order: int = 5,
    vocab_limit: int = 500_000,
    prune_singletons: bool = False,
    smoothing: str = KNESER_NEY,
) -> NgramLm:
    """Train an n-gram model; deterministic for a fixed corpus.

    Each input text is one sentence, padded with a single start symbol and
    a terminating end symbol. The ``vocab_limit`` most frequent word types
    survive; the tail maps to the unknown token before counting.
    ``prune_singletons`` drops count-1 grams at the highest order.
    """
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    if smoothing not in _SMOOTHING_IDS:
        raise ConfigError(f"unknown smoothing {smoothing!r}")

    tokenized = [toks for toks in (tokenize_words(t) for t in corpus) if toks]
    if not tokenized:
        raise DataError("cannot train on an empty corpus")

    word_freq = Counter(t for toks in tokenized for t in toks)
    keep = sorted(word_freq, key=lambda w: (-word_freq[w], w))[:vocab_limit]
    kept_words = set(keep)
    vocab = frozenset(kept_words | {UNK, EOS})

    raw: list[dict[tuple[str, ...], int]] = [dict() for _ in range(order + 1)]
    total_tokens = 0
    for toks in tokenized:
        seq = [BOS] + [t if t in kept_words else UNK for t in toks] + [EOS]
        total_tokens += len(seq) - 1
        for k in range(1, order + 1):
            table = raw[k]
            for i in range(len(seq) - k + 1):
                gram = tuple(seq[i : i + k])
                table[gram] = table.get(gram, 0) + 1

    if prune_singletons and order > 1:
        raw[order] = {g: c for g, c in raw[order].items() if c > 1}

    lm = NgramLm(order=order, smoothing=smoothing, vocab=vocab, _total_tokens=total_tokens)
    if smoothing == STUPID_BACKOFF:
        for k in range(1, order + 1):
            lm._prob.update(raw[k])
        for k in range(1, order):
            totals: dict[tuple[str, ...], float] = defaultdict(float)
            for gram, c in raw[k + 1].items():
                totals[gram[:-1]] += c
            lm._backoff.update(totals)
        return lm

    # Adjusted counts: raw at the top order; continuation counts below,
    # except grams anchored at BOS which cannot be extended leftward.
    adjusted: list[dict[tuple[str, ...], int]] = [dict() for _ in range(order + 1)]
    adjusted[order] = raw[order]
    for k in range(order - 1, 0, -1):
        adj: dict[tuple[str, ...], int] = defaultdict(int)
        for gram in raw[k + 1]:
            adj[gram[1:]] += 1
        for gram, c in raw[k].items():
            if gram[0] == BOS:
                adj[gram] = c
        adjusted[k] = dict(adj)

    # BOS is never predicted, so its unigram count stays out of the
    # order-1 discount statistics; higher orders keep BOS-anchored grams
    # because their probabilities are stored.
    discounts: list[tuple[float, float, float] | None] = [None] * (order + 1)
    discounts[1] = _discounts(
        Counter(c for gram, c in adjusted[1].items() if gram != (BOS,))
    )
    for k in range(2, order + 1):
        discounts[k] = _discounts(Counter(adjusted[k].values()))

    # Unigrams: interpolate with the uniform distribution over the
    # prediction vocabulary so every member (including UNK) has mass.
    vocab_sorted = sorted(vocab)
    uni_counts = {w: adjusted[1].get((w,), 0) for w in vocab_sorted}
    total_uni = sum(uni_counts.values())
    disc1 = discounts[1]
    buckets = Counter(min(c, 3) for c in uni_counts.values() if c > 0)
    gamma1 = (
        disc1[0] * buckets.get(1, 0)
        + disc1[1] * buckets.get(2, 0)
        + disc1[2] * buckets.get(3, 0)
    ) / total_uni
    uniform = 1.0 / len(vocab_sorted)
    for w in vocab_sorted:
        c = uni_counts[w]
        p = max(c - _discount_for(c, disc1), 0.0) / total_uni + gamma1 * uniform
        lm._prob[(w,)] = math.log(p)

    for k in range(2, order + 1):
        if not adjusted[k]:
            continue
        disc = discounts[k]
        by_context: dict[tuple[str, ...], list[tuple[str, int]]] = defaultdict(list)
        for gram in sorted(adjusted[k]):
            by_context[gram[:-1]].append((gram[-1], adjusted[k][gram]))
        for ctx in sorted(by_context):
            entries = by_context[ctx]
            total = sum(c for _, c in entries)
            counts_by_level = Counter(min(c, 3) for _, c in entries)
            gamma = (
                disc[0] * counts_by_level.get(1, 0)
                + disc[1] * counts_by_level.get(2, 0)
                + disc[2] * counts_by_level.get(3, 0)
            ) / total
            lm._backoff[ctx] = math.log(gamma) if gamma > 0 else float("-inf")
            lower_ctx = ctx[1:]
            for w, c in entries:
                lower = math.exp(lm.log_prob(w, lower_ctx))
                p = max(c - _discount_for(c, disc), 0.0) / total + gamma * lower
                lm._prob[ctx + (w,)] = math.log(p)
    return lm


# --------------------------------------------------------------------------
# Perplexity filtering


@dataclass
class PerplexityFilterManifest:
    input: int = 0
    kept: int = 0
    dropped_high: int = 0
    dropped_low: int = 0
    unscored: int = 0
    # per dataset tag: cutoffs actually applied
    cutoffs: dict[str, dict] = field(default_factory=dict)
    drops: dict[str, str] = field(default_factory=dict)  # id -> reason

    def validate(self) -> None:
        if self.input != self.kept + self.dropped_high + self.dropped_low:
            raise AssertionError("manifest counts do not telescope")


def perplexity_filter(
    records: Iterable[Record],
    lm: NgramLm,
    high_pct: float = 5.0,
    low_pct: float = 0.0,
    per_dataset: bool = True,
    min_records: int = 20,
    high_cutoff: float | None = None,
    low_cutoff: float | None = None,
) -> tuple[list[Record], PerplexityFilterManifest]:
    """Drop the highest (and optionally lowest) perplexity tail per dataset.

    Two passes: scores and percentile cutoffs first, then the drop sweep.
    Exactly ``floor(n * pct / 100)`` records are dropped per side, ties
    broken by record id so the drop set is independent of input order.
    Groups smaller than ``min_records`` refuse percentile mode; pass
    absolute ``high_cutoff``/``low_cutoff`` values instead. Records with
    no tokens cannot be scored and are always kept.
    """
    for name, pct in (("high_pct", high_pct), ("low_pct", low_pct)):
        if not 0 <= pct < 50:
            raise ConfigError(f"{name} must be in [0, 50), got {pct}")

    materialized = list(records)
    manifest = PerplexityFilterManifest(input=len(materialized))

    scores: dict[str, float] = {}
    groups: dict[str, list[str]] = defaultdict(list)
    for record in materialized:
        tag = record.metadata.get("dataset", "") if per_dataset else ""
        tokens = tokenize_words(record.text)
        if not tokens:
            manifest.unscored += 1
            continue
        scores[record.id] = lm.perplexity(tokens)
        groups[tag].append(record.id)

    absolute = high_cutoff is not None or low_cutoff is not None
    drop_reason: dict[str, str] = {}
    for tag in sorted(groups):
        ids = groups[tag]
        if absolute:
            hi = high_cutoff if high_cutoff is not None else math.inf
            lo = low_cutoff if low_cutoff is not None else -math.inf
            for rid in ids:
                if scores[rid] > hi:
                    drop_reason[rid] = "perplexity_high"
                elif scores[rid] < lo:
                    drop_reason[rid] = "perplexity_low"
            manifest.cutoffs[tag] = {"high": hi, "low": lo, "count": len(ids), "mode": "absolute"}
            continue
        if len(ids) < min_records:
            raise DataError(
                f"dataset {tag!r} has {len(ids)} scored records (< {min_records}); "
                "percentile mode refused, pass absolute cutoffs"
            )
        k_high = int(len(ids) * high_pct / 100)
        k_low = int(len(ids) * low_pct / 100)
        by_high = sorted(ids, key=lambda r: (-scores[r], r))[:k_high]
        by_low = sorted(ids, key=lambda r: (scores[r], r))[:k_low]
        for rid in by_high:
            drop_reason[rid] = "perplexity_high"
        for rid in by_low:
            drop_reason.setdefault(rid, "perplexity_low")
        manifest.cutoffs[tag] = {
            "high": min((scores[r] for r in by_high), default=None),
            "low": max((scores[r] for r in by_low), default=None),
            "count": len(ids),
            "mode": "percentile",
        }

    kept = []
    for record in materialized:
        reason = drop_reason.get(record.id)
        if reason is None:
            kept.append(record)
        else:
            manifest.drops[record.id] = reason
            if reason == "perplexity_high":
                manifest.dropped_high += 1
            else:
                manifest.dropped_low += 1
    manifest.kept = len(kept)
    manifest.validate()
    return kept, manifest


# --------------------------------------------------------------------------
# Model files


def save_lm(lm: NgramLm, path) -> None:
    """Versioned little-endian binary: header, string table, then per-order
    gram/backoff blocks (gram floats are log probs for Kneser-Ney and raw
    counts for stupid backoff)."""
    strings = sorted({t for gram in lm._prob for t in gram} | {t for ctx in lm._backoff for t in ctx} | lm.vocab | {BOS})
    string_id = {s: i for i, s in enumerate(strings)}
    with open(path, "wb") as fh:
        fh.write(
            _LM_HEADER.pack(
                _LM_MAGIC, _LM_VERSION, lm.order, _SMOOTHING_IDS[lm.smoothing], len(strings)
            )
        )
        for s in strings:
            raw = s.encode("utf-8")
            fh.write(_STR_LEN.pack(len(raw)))
            fh.write(raw)
        fh.write(_COUNT.pack(lm._total_tokens))
        fh.write(_COUNT.pack(len(lm.vocab)))
        for w in sorted(lm.vocab):
            fh.write(_ID.pack(string_id[w]))
        for k in range(1, lm.order + 1):
            grams = sorted(g for g in lm._prob if len(g) == k)
            fh.write(_COUNT.pack(len(grams)))
            for gram in grams:
                for t in gram:
                    fh.write(_ID.pack(string_id[t]))
                fh.write(_F8.pack(lm._prob[gram]))
            contexts = sorted(c for c in lm._backoff if len(c) == k)
            fh.write(_COUNT.pack(len(contexts)))
            for ctx in contexts:
                for t in ctx:
                    fh.write(_ID.pack(string_id[t]))
                fh.write(_F8.pack(lm._backoff[ctx]))


def load_lm(path) -> NgramLm:
    with open(path, "rb") as fh:
        header = fh.read(_LM_HEADER.size)
        if len(header) != _LM_HEADER.size:
            raise DataError(f"truncated model file {path}")
        magic, version, order, smoothing_id, n_strings = _LM_HEADER.unpack(header)
        if magic != _LM_MAGIC:
            raise DataError(f"{path} is not an n-gram model file")
        if version != _LM_VERSION:
            raise DataError(f"unsupported model version {version}")
        if smoothing_id not in _SMOOTHING_NAMES:
            raise DataError(f"unknown smoothing id {smoothing_id}")
        strings = []
        for _ in range(n_strings):
            (length,) = _STR_LEN.unpack(fh.read(_STR_LEN.size))
            strings.append(fh.read(length).decode("utf-8"))
        (total_tokens,) = _COUNT.unpack(fh.read(_COUNT.size))
        (vocab_count,) = _COUNT.unpack(fh.read(_COUNT.size))
        vocab = frozenset(
            strings[_ID.unpack(fh.read(_ID.size))[0]] for _ in range(vocab_count)
        )
        lm = NgramLm(
            order=order,
            smoothing=_SMOOTHING_NAMES[smoothing_id],
            vocab=vocab,
            _total_tokens=total_tokens,
        )
        for k in range(1, order + 1):
            (gram_count,) = _COUNT.unpack(fh.read(_COUNT.size))
            for _ in range(gram_count):
                gram = tuple(
                    strings[_ID.unpack(fh.read(_ID.size))[0]] for _ in range(k)
                )
                (value,) = _F8.unpack(fh.read(_F8.size))
                lm._prob[gram] = value
            (ctx_count,) = _COUNT.unpack(fh.read(_COUNT.size))
            for _ in range(ctx_count):
                ctx = tuple(
                    strings[_ID.unpack(fh.read(_ID.size))[0]] for _ in range(k)
                )
                (value,) = _F8.unpack(fh.read(_F8.size))
                lm._backoff[ctx] = value
    return lm


def export_arpa(lm: NgramLm, path) -> None:
    """ARPA text export (log10 probabilities) for interoperability."""
    if lm.smoothing != KNESER_NEY:
        raise ConfigError("ARPA export requires the Kneser-Ney model")
    log10 = math.log(10)
    grams_by_order: dict[int, list[tuple[tuple[str, ...], float]]] = defaultdict(list)
    for gram, logp in lm._prob.items():
        grams_by_order[len(gram)].append((gram, logp))
    # ARPA consumers expect a BOS unigram; give it the conventional -99.
    grams_by_order[1].append(((BOS,), -99 * log10))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\\data\\\n")
        for k in range(1, lm.order + 1):
            fh.write(f"ngram {k}={len(grams_by_order.get(k, []))}\n")
        for k in range(1, lm.order + 1):
            fh.write(f"\n\\{k}-grams:\n")
            for gram, logp in sorted(grams_by_order.get(k, [])):
                line = f"{logp / log10:.7f}\t{' '.join(gram)}"
                backoff = lm._backoff.get(gram)
                if backoff is not None:
                    line += f"\t{backoff / log10:.7f}"
                fh.write(line + "\n")
        fh.write("\n\\end\\\n")
