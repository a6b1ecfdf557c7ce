"""BPE tokenizer training, with an optional morpheme-boundary constraint.

Vanilla training is character-initialized BPE over whitespace-delimited
words: repeatedly merge the most frequent adjacent symbol pair, never
across word boundaries. Boundary-aware ("morph") training additionally
segments every word with a morphological segmenter and only counts and
merges pair occurrences that lie inside a single morpheme, so no learned
token ever spans a morpheme boundary. With the single-morpheme segmenter
the two modes are identical by construction.

Conventions fixed here (training and inference must agree):
  * word-initial marker U+2581 prepended as its own starting symbol,
    belonging to the word's first morpheme;
  * equal pair frequencies tie-break to the lexicographically smallest
    (left, right) token pair by code point;
  * merges apply left-to-right, non-overlapping;
  * a pair whose concatenation already names an existing token is skipped,
    so every non-character, non-special token has exactly one producing
    merge rule;
  * boundary filtering is per occurrence: an occurrence that crosses a
    boundary is never counted or merged, but the same pair still counts
    elsewhere. ``strict_boundaries`` instead disqualifies a pair globally
    while any crossing occurrence exists.

Encoding re-segments input words in morph mode and applies merges in rank
order within morphemes only; characters absent from the vocabulary map to
the unknown token. Decoding restores word boundaries from the marker.
"""

from __future__ import annotations

import heapq
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .errors import ConfigError, DataError, SchemaError
from .records import ARABIC_DIACRITICS
from .segmentation import Segmenter, SingleMorphemeSegmenter, segmenter_from_config

logger = logging.getLogger(__name__)

WORD_MARKER = "▁"
DEFAULT_SPECIALS = {"unk": "<unk>", "bos": "<s>", "eos": "</s>", "pad": "<pad>"}
_SPECIAL_ROLE_ORDER = ("unk", "bos", "eos", "pad")
# Diacritics are stripped from training text by normalization but stay
# available in the vocabulary so diacritized text still encodes.
DEFAULT_EXTRA_ALPHABET = tuple(sorted(ARABIC_DIACRITICS))

_MODEL_BANNER = "corpusforge-tokenizer v1"


@dataclass(frozen=True)
class MergeRule:
    left: str
    right: str
    rank: int
    freq: int

    @property
    def token(self) -> str:
        return self.left + self.right


@dataclass
class TrainReport:
    requested_vocab: int
    achieved_vocab: int
    merge_count: int
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class BoundaryViolation:
    rank: int
    left: str
    right: str
    recorded_freq: int
    within_freq: int
    crossing_freq: int


@dataclass
class Tokenizer:
    mode: str  # "vanilla" | "morph"
    token_to_id: dict[str, int]
    merges: list[MergeRule]
    specials: dict[str, str]
    alphabet: frozenset[str]
    marker: str = WORD_MARKER
    reserved: tuple[str, ...] = ()
    segmenter_config: dict | None = None
    train_report: TrainReport | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self._merge_rank = {(m.left, m.right): m.rank for m in self.merges}
        self._id_to_token = [None] * len(self.token_to_id)
        for token, idx in self.token_to_id.items():
            self._id_to_token[idx] = token
        self._segmenter: Segmenter | None = None
        self._encode_cache: dict[str, tuple[int, ...]] = {}

    # -- basic accessors ----------------------------------------------------

    @property
    def vocab_size(self) -> int:
        return len(self.token_to_id)

    @property
    def id_to_token(self) -> list[str]:
        return list(self._id_to_token)

    @property
    def unk_id(self) -> int:
        return self.token_to_id[self.specials["unk"]]

    def attach_segmenter(self, segmenter: Segmenter) -> None:
        self._segmenter = segmenter
        self._encode_cache.clear()

    def _require_segmenter(self) -> Segmenter:
        if self._segmenter is None:
            self._segmenter = segmenter_from_config(self.segmenter_config)
        return self._segmenter

    # -- encode / decode ----------------------------------------------------

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            ids.extend(self._encode_word(word))
        return ids

    def _encode_word(self, word: str) -> tuple[int, ...]:
        cached = self._encode_cache.get(word)
        if cached is not None:
            return cached
        mids: list[int] | None = None
        if self.mode == "morph":
            seg = self._require_segmenter().segment(word)
            mids = [0] + seg.morpheme_index_per_char()
        symbols = [self.marker, *word]
        while True:
            best_rank = None
            best_pair = None
            for i in range(len(symbols) - 1):
                if mids is not None and mids[i] != mids[i + 1]:
                    continue
                rank = self._merge_rank.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pair = rank, (symbols[i], symbols[i + 1])
            if best_pair is None:
                break
            symbols, mids, _ = _merge_in_word(symbols, mids, *best_pair)
        unk = self.unk_id
        ids = tuple(self.token_to_id.get(s, unk) for s in symbols)
        self._encode_cache[word] = ids
        return ids

    def tokens_for(self, word: str) -> list[str]:
        return [self._id_to_token[i] for i in self._encode_word(word)]

    def decode(self, ids: Iterable[int]) -> str:
        tokens = []
        for i in ids:
            if not 0 <= i < len(self._id_to_token):
                raise DataError(f"token id {i} out of range [0, {len(self._id_to_token)})")
            tokens.append(self._id_to_token[i])
        return "".join(tokens).replace(self.marker, " ").removeprefix(" ")

    # -- invariants ---------------------------------------------------------

    def validate(self, require_aligned_size: bool = False) -> None:
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(self.token_to_id))):
            raise SchemaError("token ids are not dense in [0, vocab_size)")
        ranks = [m.rank for m in self.merges]
        if ranks != list(range(len(self.merges))):
            raise SchemaError("merge ranks are not contiguous")
        special_tokens = set(self.specials.values())
        produced = set()
        for m in self.merges:
            if m.left not in self.token_to_id or m.right not in self.token_to_id:
                raise SchemaError(f"merge {m.rank} references unknown tokens")
            if m.token not in self.token_to_id:
                raise SchemaError(f"merge {m.rank} produces unknown token")
            if m.token in produced:
                raise SchemaError(f"token {m.token!r} produced by more than one merge")
            if m.token in special_tokens:
                raise SchemaError(f"merge {m.rank} produces a special token")
            produced.add(m.token)
        expected = set(self.token_to_id) - special_tokens - self.alphabet - set(self.reserved)
        if produced != expected:
            raise SchemaError("vocabulary is not closed under the merge rules")
        if require_aligned_size and len(self.token_to_id) % 1024:
            raise ConfigError(
                f"vocabulary size {len(self.token_to_id)} is not a multiple of 1024"
            )

    # -- model file ---------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "mode": self.mode,
            "marker": self.marker,
            "specials": self.specials,
            "segmenter": self.segmenter_config,
            "counts": {
                "specials": len(self.specials),
                "alphabet": len(self.alphabet),
                "merges": len(self.merges),
                "reserved": len(self.reserved),
            },
            "vocab_size": self.vocab_size,
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_MODEL_BANNER + "\n")
            fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
            fh.write("[vocab]\n")
            for idx, token in enumerate(self._id_to_token):
                fh.write(f"{idx}\t{json.dumps(token, ensure_ascii=False)}\n")
            fh.write("[merges]\n")
            for m in self.merges:
                fh.write(
                    f"{m.rank}\t{json.dumps(m.left, ensure_ascii=False)}"
                    f"\t{json.dumps(m.right, ensure_ascii=False)}\t{m.freq}\n"
                )

    @classmethod
    def load(cls, path) -> "Tokenizer":
        with open(path, encoding="utf-8") as fh:
            banner = fh.readline().rstrip("\n")
            if banner != _MODEL_BANNER:
                raise SchemaError(f"{path} is not a tokenizer model file")
            header = json.loads(fh.readline())
            if fh.readline().rstrip("\n") != "[vocab]":
                raise SchemaError(f"{path}: missing [vocab] section")
            counts = header["counts"]
            total = counts["specials"] + counts["alphabet"] + counts["merges"] + counts["reserved"]
            tokens: list[str] = []
            for _ in range(total):
                idx_str, token_json = fh.readline().rstrip("\n").split("\t")
                if int(idx_str) != len(tokens):
                    raise SchemaError(f"{path}: vocab ids out of order")
                tokens.append(json.loads(token_json))
            if fh.readline().rstrip("\n") != "[merges]":
                raise SchemaError(f"{path}: missing [merges] section")
            merges = []
            for _ in range(counts["merges"]):
                rank_str, left_json, right_json, freq_str = fh.readline().rstrip("\n").split("\t")
                merges.append(
                    MergeRule(
                        left=json.loads(left_json),
                        right=json.loads(right_json),
                        rank=int(rank_str),
                        freq=int(freq_str),
                    )
                )
        n_specials = counts["specials"]
        n_alpha = counts["alphabet"]
        n_merges = counts["merges"]
        tokenizer = cls(
            mode=header["mode"],
            token_to_id={t: i for i, t in enumerate(tokens)},
            merges=merges,
            specials=header["specials"],
            alphabet=frozenset(tokens[n_specials : n_specials + n_alpha]),
            marker=header["marker"],
            reserved=tuple(tokens[n_specials + n_alpha + n_merges :]),
            segmenter_config=header.get("segmenter"),
        )
        tokenizer.validate()
        return tokenizer


def _merge_in_word(
    symbols: list[str], mids: list[int] | None, left: str, right: str
) -> tuple[list[str], list[int] | None, bool]:
    """Merge occurrences of (left, right) left-to-right, non-overlapping,
    within-morpheme only."""
    out_s: list[str] = []
    out_m: list[int] | None = [] if mids is not None else None
    i = 0
    n = len(symbols)
    changed = False
    while i < n:
        if (
            i < n - 1
            and symbols[i] == left
            and symbols[i + 1] == right
            and (mids is None or mids[i] == mids[i + 1])
        ):
            out_s.append(left + right)
            if out_m is not None:
                out_m.append(mids[i])
            i += 2
            changed = True
        else:
            out_s.append(symbols[i])
            if out_m is not None:
                out_m.append(mids[i])
            i += 1
    return out_s, out_m, changed


@dataclass
class _WordState:
    symbols: list[str]
    mids: list[int] | None
    freq: int


def _iter_pairs(word: _WordState):
    symbols, mids = word.symbols, word.mids
    for i in range(len(symbols) - 1):
        within = mids is None or mids[i] == mids[i + 1]
        yield (symbols[i], symbols[i + 1]), within


class _PairTracker:
    """Incremental pair statistics with a lazy max-heap over counts."""

    def __init__(self, words: list[_WordState]):
        self.words = words
        self.counts: Counter = Counter()
        self.crossing: Counter = Counter()
        self.pair_words: dict[tuple[str, str], set[int]] = defaultdict(set)
        self.heap: list[tuple[int, str, str]] = []
        touched: set[tuple[str, str]] = set()
        for wid, word in enumerate(words):
            self._add(wid, word, touched)
        self.push(touched)

    def _add(self, wid: int, word: _WordState, touched: set) -> None:
        for pair, within in _iter_pairs(word):
            if within:
                self.counts[pair] += word.freq
                self.pair_words[pair].add(wid)
            else:
                self.crossing[pair] += word.freq
            touched.add(pair)

    def _remove(self, wid: int, word: _WordState, touched: set) -> None:
        for pair, within in _iter_pairs(word):
            if within:
                self.counts[pair] -= word.freq
                if self.counts[pair] <= 0:
                    del self.counts[pair]
            else:
                self.crossing[pair] -= word.freq
                if self.crossing[pair] <= 0:
                    del self.crossing[pair]
            touched.add(pair)

    def push(self, pairs: Iterable[tuple[str, str]]) -> None:
        for pair in pairs:
            count = self.counts.get(pair)
            if count:
                heapq.heappush(self.heap, (-count, pair[0], pair[1]))

    def pop_best(self, vocab_tokens: set[str], strict: bool) -> tuple[str, str, int] | None:
        """Largest count wins; ties go to the lexicographically smallest
        (left, right). Pairs whose product token already exists are skipped,
        as are globally-crossing pairs in strict mode."""
        while self.heap:
            neg_count, left, right = heapq.heappop(self.heap)
            pair = (left, right)
            if self.counts.get(pair) != -neg_count:
                continue  # stale entry
            if left + right in vocab_tokens:
                continue
            if strict and self.crossing.get(pair):
                continue
            return left, right, -neg_count
        return None

    def apply_merge(self, left: str, right: str) -> None:
        pair = (left, right)
        touched: set[tuple[str, str]] = set()
        wids = sorted(self.pair_words.pop(pair, ()))
        for wid in wids:
            word = self.words[wid]
            self._remove(wid, word, touched)
            word.symbols, word.mids, _ = _merge_in_word(word.symbols, word.mids, left, right)
            self._add(wid, word, touched)
        self.push(touched)


def _word_states(corpus: Iterable[str], segmenter: Segmenter | None, marker: str) -> list[_WordState]:
    freqs: Counter = Counter()
    for text in corpus:
        freqs.update(text.split())
    states = []
    for word in sorted(freqs):
        mids = None
        if segmenter is not None:
            seg = segmenter.segment(word)
            mids = [0] + seg.morpheme_index_per_char()
        states.append(_WordState(symbols=[marker, *word], mids=mids, freq=freqs[word]))
    return states


def _ordered_specials(specials: dict[str, str]) -> list[str]:
    roles = [r for r in _SPECIAL_ROLE_ORDER if r in specials]
    roles += sorted(set(specials) - set(_SPECIAL_ROLE_ORDER))
    return [specials[r] for r in roles]


def _build_tokenizer(
    mode: str,
    alphabet: frozenset[str],
    merges: list[MergeRule],
    specials: dict[str, str],
    reserved: tuple[str, ...],
    marker: str,
    segmenter_config: dict | None,
) -> Tokenizer:
    ordered = _ordered_specials(specials) + sorted(alphabet) + [m.token for m in merges] + list(reserved)
    token_to_id = {token: idx for idx, token in enumerate(ordered)}
    if len(token_to_id) != len(ordered):
        raise DataError("token collision while assigning vocabulary ids")
    return Tokenizer(
        mode=mode,
        token_to_id=token_to_id,
        merges=merges,
        specials=dict(specials),
        alphabet=alphabet,
        marker=marker,
        reserved=reserved,
        segmenter_config=segmenter_config,
    )


def _train(
    corpus: Iterable[str],
    vocab_size: int,
    mode: str,
    segmenter: Segmenter | None,
    special_tokens: dict[str, str] | None,
    extra_alphabet: Iterable[str] | None,
    reserved_count: int,
    strict_boundaries: bool,
) -> Tokenizer:
    specials = dict(special_tokens) if special_tokens is not None else dict(DEFAULT_SPECIALS)
    for role in _SPECIAL_ROLE_ORDER:
        specials.setdefault(role, DEFAULT_SPECIALS[role])
    extra = DEFAULT_EXTRA_ALPHABET if extra_alphabet is None else tuple(extra_alphabet)

    states = _word_states(corpus, segmenter, WORD_MARKER)
    if not states:
        raise DataError("cannot train a tokenizer on an empty corpus")

    alphabet = {WORD_MARKER}
    for state in states:
        alphabet.update(state.symbols[1:])
    alphabet.update(extra)
    special_strings = set(specials.values())
    if alphabet & special_strings:
        raise ConfigError("special tokens collide with alphabet characters")

    reserved = tuple(f"<reserved_{i}>" for i in range(reserved_count))
    base = len(specials) + len(alphabet) + reserved_count
    if vocab_size < base:
        raise ConfigError(
            f"vocab_size {vocab_size} is below the minimum {base} "
            f"({len(specials)} specials + {len(alphabet)} characters + {reserved_count} reserved)"
        )

    tracker = _PairTracker(states)
    vocab_tokens = set(alphabet) | special_strings | set(reserved)
    merges: list[MergeRule] = []
    warnings: list[str] = []
    while len(merges) < vocab_size - base:
        best = tracker.pop_best(vocab_tokens, strict_boundaries)
        if best is None:
            warnings.append(
                f"no mergeable pair left after {len(merges)} merges; "
                f"vocabulary stops at {base + len(merges)} instead of {vocab_size}"
            )
            logger.warning(warnings[-1])
            break
        left, right, count = best
        merges.append(MergeRule(left=left, right=right, rank=len(merges), freq=count))
        vocab_tokens.add(left + right)
        tracker.apply_merge(left, right)

    tokenizer = _build_tokenizer(
        mode=mode,
        alphabet=frozenset(alphabet),
        merges=merges,
        specials=specials,
        reserved=reserved,
        marker=WORD_MARKER,
        segmenter_config=segmenter.to_config() if segmenter is not None else None,
    )
    if segmenter is not None:
        tokenizer.attach_segmenter(segmenter)
    tokenizer.train_report = TrainReport(
        requested_vocab=vocab_size,
        achieved_vocab=tokenizer.vocab_size,
        merge_count=len(merges),
        warnings=warnings,
    )
    tokenizer.validate()
    return tokenizer


def train_bpe(
    corpus: Iterable[str],
    vocab_size: int,
    special_tokens: dict[str, str] | None = None,
    extra_alphabet: Iterable[str] | None = None,
    reserved_count: int = 0,
) -> Tokenizer:
    """Standard character-initialized BPE over whitespace-delimited words."""
    return _train(
        corpus,
        vocab_size,
        mode="vanilla",
        segmenter=None,
        special_tokens=special_tokens,
        extra_alphabet=extra_alphabet,
        reserved_count=reserved_count,
        strict_boundaries=False,
    )


def train_morph_bpe(
    corpus: Iterable[str],
    segmenter: Segmenter,
    vocab_size: int,
    special_tokens: dict[str, str] | None = None,
    extra_alphabet: Iterable[str] | None = None,
    reserved_count: int = 0,
    strict_boundaries: bool = False,
) -> Tokenizer:
    """Boundary-aware BPE: merges never cross morpheme boundaries.

    If the target vocabulary is unreachable (no legal merges remain) the
    tokenizer completes smaller, with a warning recorded in its report.
    """
    return _train(
        corpus,
        vocab_size,
        mode="morph",
        segmenter=segmenter,
        special_tokens=special_tokens,
        extra_alphabet=extra_alphabet,
        reserved_count=reserved_count,
        strict_boundaries=strict_boundaries,
    )


def audit_boundary_safety(
    tokenizer: Tokenizer,
    corpus: Iterable[str],
    segmenter: Segmenter | None = None,
) -> list[BoundaryViolation]:
    """Re-derive every merge's legal support by replaying the merge list
    over the segmented training corpus.

    At each rank the pair's within-morpheme and crossing occurrences are
    recounted from scratch; a rule whose recorded training frequency does
    not equal its recounted within-morpheme frequency was (at least
    partially) learned from boundary-crossing occurrences and is reported
    as a violation. A correct boundary-aware training run audits clean
    against its own training corpus.
    """
    if segmenter is None:
        segmenter = (
            segmenter_from_config(tokenizer.segmenter_config)
            if tokenizer.mode == "morph"
            else SingleMorphemeSegmenter()
        )
    states = _word_states(corpus, segmenter, tokenizer.marker)
    violations = []
    for rule in tokenizer.merges:
        within = 0
        crossing = 0
        for state in states:
            for pair, ok in _iter_pairs(state):
                if pair == (rule.left, rule.right):
                    if ok:
                        within += state.freq
                    else:
                        crossing += state.freq
        if within != rule.freq:
            violations.append(
                BoundaryViolation(
                    rank=rule.rank,
                    left=rule.left,
                    right=rule.right,
                    recorded_freq=rule.freq,
                    within_freq=within,
                    crossing_freq=crossing,
                )
            )
        for state in states:
            state.symbols, state.mids, _ = _merge_in_word(
                state.symbols, state.mids, rule.left, rule.right
            )
    return violations


def combine_vocabs(
    tok_a: Tokenizer,
    tok_b: Tokenizer,
    target_size: int,
    reserved_count: int = 0,
    allow_any_size: bool = False,
) -> Tokenizer:
    """Union two tokenizers into one vocabulary of exactly ``target_size``.

    Merge lists concatenate with first-argument priority; identical
    (left, right) rules unify (keeping the larger recorded frequency, so
    self-union is the identity), and a later rule whose product token
    already exists is dropped to preserve single-producer closure. If the
    union exceeds the budget, the lowest-frequency rules are pruned
    together with their dependent rules. ``reserved_count`` ids (plus any
    budget left over after pruning) are materialized as ``<reserved_k>``
    placeholders at the top of the id space.
    """
    if target_size % 1024 and not allow_any_size:
        raise ConfigError(
            f"target_size {target_size} is not a multiple of 1024; "
            "pass allow_any_size to override the alignment policy"
        )
    if tok_a.specials != tok_b.specials:
        raise ConfigError("cannot combine tokenizers with different special tokens")
    if tok_a.marker != tok_b.marker:
        raise ConfigError("cannot combine tokenizers with different marker conventions")

    specials = dict(tok_a.specials)
    alphabet = tok_a.alphabet | tok_b.alphabet
    base = len(specials) + len(alphabet) + reserved_count
    budget = target_size - base
    if budget < 0:
        raise ConfigError(
            f"target_size {target_size} cannot hold {len(specials)} specials + "
            f"{len(alphabet)} characters + {reserved_count} reserved ids"
        )

    produced = set(alphabet) | set(specials.values())
    rules: list[list] = []  # [left, right, freq]
    pair_index: dict[tuple[str, str], int] = {}
    for source in (tok_a, tok_b):
        for rule in source.merges:
            pair = (rule.left, rule.right)
            existing = pair_index.get(pair)
            if existing is not None:
                rules[existing][2] = max(rules[existing][2], rule.freq)
                continue
            if rule.token in produced:
                continue  # same surface token from a different derivation
            pair_index[pair] = len(rules)
            rules.append([rule.left, rule.right, rule.freq])
            produced.add(rule.token)

    removed = [False] * len(rules)
    alive_count = len(rules)
    if alive_count > budget:
        producer = {left + right: idx for idx, (left, right, _) in enumerate(rules)}
        children: dict[int, list[int]] = defaultdict(list)
        for idx, (left, right, _) in enumerate(rules):
            for side in (left, right):
                parent = producer.get(side)
                if parent is not None:
                    children[parent].append(idx)
        # Remove cheapest rules first; later-priority rules break freq ties.
        heap = [(freq, -idx) for idx, (_, _, freq) in enumerate(rules)]
        heapq.heapify(heap)
        while alive_count > budget and heap:
            _, neg_idx = heapq.heappop(heap)
            idx = -neg_idx
            if removed[idx]:
                continue
            stack = [idx]
            while stack:
                current = stack.pop()
                if removed[current]:
                    continue
                removed[current] = True
                alive_count -= 1
                stack.extend(children[current])

    merges = [
        MergeRule(left=left, right=right, rank=rank, freq=freq)
        for rank, (left, right, freq) in enumerate(
            rule for idx, rule in enumerate(rules) if not removed[idx]
        )
    ]

    n_reserved = target_size - (len(specials) + len(alphabet) + len(merges))
    reserved = tuple(f"<reserved_{i}>" for i in range(n_reserved))

    mode = "morph" if "morph" in (tok_a.mode, tok_b.mode) else "vanilla"
    segmenter_config = (
        tok_a.segmenter_config if tok_a.mode == "morph" else tok_b.segmenter_config
    )
    combined = _build_tokenizer(
        mode=mode,
        alphabet=alphabet,
        merges=merges,
        specials=specials,
        reserved=reserved,
        marker=tok_a.marker,
        segmenter_config=segmenter_config,
    )
    combined.validate()
    return combined
