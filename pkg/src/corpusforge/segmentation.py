"""Morphological segmentation of single words.

Three segmenter kinds share one interface: ``single_morpheme`` returns the
whole word, ``rule_based`` peels a small inventory of Arabic clitic
prefixes and suffixes around a minimum-length stem, and ``lookup_table``
returns gold splits from a word table with a configurable fallback chain.
The rule-based inventory is a deliberately small stand-in for a real
morphological analyzer; the table format exists so users can supply gold
segmentations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ConfigError, DataError, SchemaError

# Clitic classes peel in this order, at most one item per class:
# conjunction, then preposition, then the definite article.
DEFAULT_PREFIX_GROUPS: tuple[tuple[str, ...], ...] = (
    ("و", "ف"),            # و ف
    ("ب", "ك", "ل"),  # ب ك ل
    ("ال",),               # ال
)
DEFAULT_SUFFIXES: tuple[str, ...] = (
    "ها",        # ها
    "هم",        # هم
    "كم",        # كم
    "نا",        # نا
    "ات",        # ات
    "ون",        # ون
    "ين",        # ين
    "ة",              # ة
)


@dataclass(frozen=True)
class MorphSegmentation:
    """A word split into ordered morphemes whose concatenation is the word."""

    word: str
    morphemes: tuple[str, ...]

    def __post_init__(self):
        if not self.morphemes or any(not m for m in self.morphemes):
            raise DataError(f"segmentation of {self.word!r} has empty morphemes")
        if "".join(self.morphemes) != self.word:
            raise DataError(
                f"morphemes {self.morphemes!r} do not concatenate to {self.word!r}"
            )

    @property
    def boundary_offsets(self) -> tuple[int, ...]:
        """Cumulative end offset of each morpheme; strictly increasing."""
        offsets = []
        pos = 0
        for m in self.morphemes:
            pos += len(m)
            offsets.append(pos)
        return tuple(offsets)

    def morpheme_index_per_char(self) -> list[int]:
        out = []
        for idx, m in enumerate(self.morphemes):
            out.extend([idx] * len(m))
        return out


class Segmenter:
    """Base interface: deterministic ``segment(word)`` for one word."""

    kind = "base"

    def segment(self, word: str) -> MorphSegmentation:
        raise NotImplementedError

    def to_config(self) -> dict:
        return {"kind": self.kind}


class SingleMorphemeSegmenter(Segmenter):
    """Whole word as one morpheme; makes boundary-aware training collapse
    to plain BPE."""

    kind = "single_morpheme"

    def segment(self, word: str) -> MorphSegmentation:
        if not word:
            raise DataError("cannot segment an empty word")
        return MorphSegmentation(word=word, morphemes=(word,))


class RuleBasedSegmenter(Segmenter):
    """Peel clitic prefixes (one per class, in class order) and at most one
    suffix, never leaving a stem shorter than ``min_stem_len``."""

    kind = "rule_based"

    def __init__(
        self,
        prefix_groups: Iterable[Iterable[str]] = DEFAULT_PREFIX_GROUPS,
        suffixes: Iterable[str] = DEFAULT_SUFFIXES,
        min_stem_len: int = 2,
    ):
        self.prefix_groups = tuple(tuple(g) for g in prefix_groups)
        self.suffixes = tuple(suffixes)
        self.min_stem_len = min_stem_len

    def segment(self, word: str) -> MorphSegmentation:
        if not word:
            raise DataError("cannot segment an empty word")
        prefixes: list[str] = []
        stem = word
        for group in self.prefix_groups:
            for prefix in group:
                rest = stem[len(prefix):]
                if stem.startswith(prefix) and len(rest) >= self.min_stem_len:
                    prefixes.append(prefix)
                    stem = rest
                    break
        suffix: str | None = None
        for candidate in self.suffixes:
            rest = stem[: len(stem) - len(candidate)]
            if stem.endswith(candidate) and len(rest) >= self.min_stem_len:
                suffix = candidate
                stem = rest
                break
        morphemes = (*prefixes, stem, *((suffix,) if suffix else ()))
        return MorphSegmentation(word=word, morphemes=morphemes)

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "prefix_groups": [list(g) for g in self.prefix_groups],
            "suffixes": list(self.suffixes),
            "min_stem_len": self.min_stem_len,
        }


class LookupTableSegmenter(Segmenter):
    """Gold word -> morphemes table with a fallback chain for unknown words.

    ``fallback=None`` is strict mode: unknown words raise, which callers
    like the evaluation harness treat as "skip this word".
    """

    kind = "lookup_table"

    def __init__(
        self,
        table: dict[str, tuple[str, ...]],
        fallback: Segmenter | None = None,
        table_path: str | None = None,
    ):
        self.table = {w: tuple(ms) for w, ms in table.items()}
        self.fallback = fallback
        self.table_path = table_path

    def segment(self, word: str) -> MorphSegmentation:
        if not word:
            raise DataError("cannot segment an empty word")
        morphemes = self.table.get(word)
        if morphemes is not None:
            return MorphSegmentation(word=word, morphemes=morphemes)
        if self.fallback is None:
            raise DataError(f"word {word!r} not in segmentation table")
        return self.fallback.segment(word)

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "table_path": self.table_path,
            "fallback": self.fallback.to_config() if self.fallback else None,
        }


def default_segmenter() -> Segmenter:
    return RuleBasedSegmenter()


def segmenter_from_config(config: dict | None, table: dict[str, tuple[str, ...]] | None = None) -> Segmenter:
    """Rebuild a segmenter from its serialized config.

    Lookup tables are reloaded from ``table_path`` unless an in-memory
    ``table`` is supplied.
    """
    if config is None:
        return SingleMorphemeSegmenter()
    kind = config.get("kind")
    if kind == "single_morpheme":
        return SingleMorphemeSegmenter()
    if kind == "rule_based":
        return RuleBasedSegmenter(
            prefix_groups=config.get("prefix_groups", DEFAULT_PREFIX_GROUPS),
            suffixes=config.get("suffixes", DEFAULT_SUFFIXES),
            min_stem_len=config.get("min_stem_len", 2),
        )
    if kind == "lookup_table":
        fallback_cfg = config.get("fallback")
        fallback = segmenter_from_config(fallback_cfg) if fallback_cfg else None
        if table is None:
            path = config.get("table_path")
            if path is None:
                raise ConfigError("lookup_table segmenter needs a table or table_path")
            table = load_segmentation_table(path)
        return LookupTableSegmenter(table, fallback=fallback, table_path=config.get("table_path"))
    raise ConfigError(f"unknown segmenter kind {kind!r}")


def segment(segmenter: Segmenter, word: str) -> MorphSegmentation:
    return segmenter.segment(word)


def load_segmentation_table(path) -> dict[str, tuple[str, ...]]:
    """Read a UTF-8 TSV table: ``word<TAB>morpheme1 morpheme2 ...`` per
    line, ``#`` comments and blank lines skipped."""
    table: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise SchemaError(f"{path}:{lineno}: expected 'word<TAB>morphemes'")
            word, morpheme_field = parts
            morphemes = tuple(morpheme_field.split())
            if "".join(morphemes) != word:
                raise SchemaError(
                    f"{path}:{lineno}: morphemes do not concatenate to {word!r}"
                )
            table[word] = morphemes
    return table


def save_segmentation_table(table: dict[str, tuple[str, ...]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(table):
            fh.write(f"{word}\t{' '.join(table[word])}\n")
