"""Exact, URL, and MinHash-LSH near-duplicate removal over record streams.

All three stages are keep-first by original corpus order, order-preserving
on output, and deterministic for a fixed seed. The fuzzy stage shingles
documents into word 8-grams, sketches them with 132 min-hashes (12 bands
of length 11, implied Jaccard threshold (1/12)^(1/11) ~ 0.8), buckets by
band key, and confirms candidate pairs against the estimated Jaccard
before clustering them with a union-find.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator
from urllib.parse import urlsplit, urlunsplit

import numpy as np

from .errors import DataError
from .records import Record

MERSENNE_PRIME = (1 << 61) - 1
_P61 = np.uint64(MERSENNE_PRIME)
_MASK31 = np.uint64((1 << 31) - 1)
_MASK30 = np.uint64((1 << 30) - 1)

_CACHE_MAGIC = b"MHSC"
_CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHHHHQ")
_CACHE_IDLEN = struct.Struct("<H")


@dataclass(frozen=True)
class LshParams:
    """MinHash/LSH configuration; defaults follow the shipped pipeline."""

    gram_size: int = 8
    num_bands: int = 12
    band_length: int = 11
    seed: int = 1

    @property
    def num_hashes(self) -> int:
        return self.num_bands * self.band_length

    @property
    def implied_threshold(self) -> float:
        # Similarity at which band-collision probability crosses ~1/2.
        return (1.0 / self.num_bands) ** (1.0 / self.band_length)


DEFAULT_LSH_PARAMS = LshParams()


@dataclass
class MinHashSignature:
    values: np.ndarray  # (num_hashes,) uint64, entries < 2^61 - 1
    params: LshParams


@dataclass
class DuplicateClusters:
    """Union-find result: flagged record id -> cluster id, plus the
    earliest-in-corpus representative of each cluster."""

    cluster_of: dict[str, int]
    representatives: dict[int, str]

    def members(self, cluster_id: int) -> list[str]:
        return [rid for rid, c in self.cluster_of.items() if c == cluster_id]


@dataclass
class DedupManifest:
    input: int = 0
    kept: int = 0
    dropped_exact: int = 0
    dropped_url: int = 0
    dropped_fuzzy: int = 0
    # dropped id -> the surviving representative's id
    drops: dict[str, str] = field(default_factory=dict)
    # ids that bypassed fuzzy dedup for lack of shingles
    unshingled: list[str] = field(default_factory=list)

    @property
    def dropped(self) -> int:
        return self.dropped_exact + self.dropped_url + self.dropped_fuzzy

    def validate(self) -> None:
        if self.input != self.kept + self.dropped:
            raise AssertionError("manifest counts do not telescope")


class UnionFind:
    """Disjoint sets over ints with path compression and union by rank."""

    def __init__(self):
        self._parent: dict[int, int] = {}
        self._rank: dict[int, int] = {}

    def find(self, x: int) -> int:
        parent = self._parent
        if x not in parent:
            return x
        path = [x]
        root = parent[x]
        while root != path[-1]:
            path.append(root)
            root = parent.get(root, root)
        for node in path:
            parent[node] = root
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        rank_a = self._rank.setdefault(ra, 1)
        rank_b = self._rank.setdefault(rb, 1)
        if rank_a < rank_b:
            ra, rb = rb, ra
        self._parent[rb] = ra
        if rank_a == rank_b:
            self._rank[ra] += 1

    def groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for x in list(self._parent):
            out.setdefault(self.find(x), []).append(x)
        for members in out.values():
            members.sort()
        return out


def _hash64(data: str) -> int:
    return int.from_bytes(
        hashlib.blake2b(data.encode("utf-8"), digest_size=8).digest(), "little"
    )


def _check_unique_ids(records: list[Record]) -> None:
    seen: dict[str, int] = {}
    for pos, record in enumerate(records):
        if record.id in seen:
            raise DataError(
                f"duplicate record id {record.id!r} at positions {seen[record.id]} and {pos}"
            )
        seen[record.id] = pos


# --------------------------------------------------------------------------
# Exact and URL dedup


def exact_dedup(
    records: Iterable[Record], bucket_count: int = 16
) -> tuple[list[Record], DedupManifest]:
    """Keep the first occurrence of each distinct text.

    Records are partitioned into ``bucket_count`` buckets by text hash so
    each bucket can be deduplicated independently (memory is bounded by
    the largest bucket); survivors are then merged back into original
    corpus order by position.
    """
    materialized = list(records)
    _check_unique_ids(materialized)
    manifest = DedupManifest(input=len(materialized))

    buckets: list[list[int]] = [[] for _ in range(bucket_count)]
    for pos, record in enumerate(materialized):
        buckets[_hash64(record.text) % bucket_count].append(pos)

    survivor_runs: list[list[int]] = []
    for bucket in buckets:
        first_by_text: dict[str, int] = {}
        survivors: list[int] = []
        for pos in bucket:  # bucket positions are already ascending
            text = materialized[pos].text
            keeper = first_by_text.get(text)
            if keeper is None:
                first_by_text[text] = pos
                survivors.append(pos)
            else:
                manifest.drops[materialized[pos].id] = materialized[keeper].id
                manifest.dropped_exact += 1
        survivor_runs.append(survivors)

    kept = [materialized[pos] for pos in heapq.merge(*survivor_runs)]
    manifest.kept = len(kept)
    manifest.validate()
    return kept, manifest


def normalize_url(url: str) -> str:
    """Lowercase scheme and host, drop the fragment, strip a trailing slash."""
    parts = urlsplit(url.strip())
    return urlunsplit(
        (parts.scheme.lower(), parts.netloc.lower(), parts.path.rstrip("/"), parts.query, "")
    )


def url_dedup(records: Iterable[Record]) -> tuple[list[Record], DedupManifest]:
    """Keep-first per normalized URL; records without a url are always kept."""
    manifest = DedupManifest()
    kept: list[Record] = []
    first_by_url: dict[str, str] = {}
    for record in records:
        manifest.input += 1
        url = record.metadata.get("url")
        if not url:
            kept.append(record)
            continue
        key = normalize_url(url)
        keeper = first_by_url.get(key)
        if keeper is None:
            first_by_url[key] = record.id
            kept.append(record)
        else:
            manifest.drops[record.id] = keeper
            manifest.dropped_url += 1
    manifest.kept = len(kept)
    manifest.validate()
    return kept, manifest


# --------------------------------------------------------------------------
# MinHash / LSH


def shingle(text: str, gram_size: int = 8) -> set[int]:
    """Hash the sliding word n-grams of a text to 64-bit values.

    Texts shorter than ``gram_size`` words yield a single shingle covering
    the whole text; empty text yields the empty set.
    """
    words = text.split()
    if not words:
        return set()
    if len(words) < gram_size:
        return {_hash64(" ".join(words))}
    return {
        _hash64(" ".join(words[i : i + gram_size]))
        for i in range(len(words) - gram_size + 1)
    }


def _fold_p61(v: np.ndarray) -> np.ndarray:
    # Reduce v (< 2^64) mod 2^61 - 1 using 2^61 = 1 (mod p).
    v = (v >> np.uint64(61)) + (v & _P61)
    return np.where(v >= _P61, v - _P61, v)


def _mulmod_p61(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Exact (a * x) mod 2^61 - 1 for uint64 operands below 2^61.

    The 122-bit product is assembled from 30/31-bit limbs so every
    intermediate fits in uint64.
    """
    a_hi, a_lo = a >> np.uint64(31), a & _MASK31
    x_hi, x_lo = x >> np.uint64(31), x & _MASK31
    low = _fold_p61(a_lo * x_lo)
    high = _fold_p61((a_hi * x_hi) << np.uint64(1))  # * 2^62 = * 2 (mod p)
    mid = a_hi * x_lo + a_lo * x_hi
    mid = _fold_p61((mid >> np.uint64(30)) + ((mid & _MASK30) << np.uint64(31)))
    return _fold_p61(low + high + mid)


@lru_cache(maxsize=8)
def _hash_family(seed: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    a = rng.integers(1, MERSENNE_PRIME, size=n, dtype=np.uint64)
    b = rng.integers(0, MERSENNE_PRIME, size=n, dtype=np.uint64)
    return a, b


def minhash_signature(shingles: set[int], params: LshParams = DEFAULT_LSH_PARAMS) -> MinHashSignature:
    """Sketch a shingle set: entry i is min over shingles of (a_i*x + b_i) mod p."""
    if not shingles:
        raise DataError("cannot sign an empty shingle set")
    a, b = _hash_family(params.seed, params.num_hashes)
    x = np.fromiter(shingles, dtype=np.uint64, count=len(shingles)) % _P61
    hashed = _fold_p61(_mulmod_p61(a[:, None], x[None, :]) + b[:, None])
    return MinHashSignature(values=hashed.min(axis=1), params=params)


def estimate_jaccard(sig_a: MinHashSignature, sig_b: MinHashSignature) -> float:
    """Fraction of matching signature positions; unbiased Jaccard estimate."""
    if sig_a.params != sig_b.params:
        raise DataError("signatures built with different parameters or seeds")
    return float(np.mean(sig_a.values == sig_b.values))


def lsh_band_keys(sig: MinHashSignature) -> tuple[int, ...]:
    """One 64-bit key per band; equal bands produce equal keys."""
    r = sig.params.band_length
    keys = []
    for band in range(sig.params.num_bands):
        payload = struct.pack("<H", band) + sig.values[band * r : (band + 1) * r].astype("<u8").tobytes()
        keys.append(int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little"))
    return tuple(keys)


def fuzzy_dedup(
    records: Iterable[Record],
    params: LshParams = DEFAULT_LSH_PARAMS,
    threshold: float = 0.8,
    verify: bool = True,
    signature_sink: dict[str, MinHashSignature] | None = None,
) -> tuple[list[Record], DuplicateClusters, DedupManifest]:
    """Collapse near-duplicate clusters found via banded MinHash.

    Candidates share at least one band key; with ``verify`` they must also
    pass ``estimate_jaccard >= threshold`` before being unioned. Documents
    that produce no shingles bypass dedup and are always kept. When a
    ``signature_sink`` dict is supplied it is filled with id -> signature
    (for cache files and cluster exports).
    """
    materialized = list(records)
    _check_unique_ids(materialized)
    manifest = DedupManifest(input=len(materialized))

    signatures: dict[int, MinHashSignature] = {}
    buckets: dict[int, list[int]] = {}
    for pos, record in enumerate(materialized):
        grams = shingle(record.text, params.gram_size)
        if not grams:
            manifest.unshingled.append(record.id)
            continue
        sig = minhash_signature(grams, params)
        signatures[pos] = sig
        if signature_sink is not None:
            signature_sink[record.id] = sig
        for key in lsh_band_keys(sig):
            buckets.setdefault(key, []).append(pos)

    uf = UnionFind()
    candidates: set[tuple[int, int]] = set()
    for bucket in buckets.values():
        if len(bucket) < 2:
            continue
        for i, pos_a in enumerate(bucket):
            for pos_b in bucket[i + 1 :]:
                candidates.add((pos_a, pos_b) if pos_a < pos_b else (pos_b, pos_a))
    for pos_a, pos_b in sorted(candidates):
        if verify and estimate_jaccard(signatures[pos_a], signatures[pos_b]) < threshold:
            continue
        uf.union(pos_a, pos_b)

    cluster_of: dict[str, int] = {}
    representatives: dict[int, str] = {}
    dropped_positions: set[int] = set()
    for cluster_id, members in enumerate(sorted(uf.groups().values())):
        rep_pos = members[0]
        representatives[cluster_id] = materialized[rep_pos].id
        for pos in members:
            cluster_of[materialized[pos].id] = cluster_id
            if pos != rep_pos:
                dropped_positions.add(pos)
                manifest.drops[materialized[pos].id] = materialized[rep_pos].id
                manifest.dropped_fuzzy += 1

    kept = [r for pos, r in enumerate(materialized) if pos not in dropped_positions]
    manifest.kept = len(kept)
    manifest.validate()

    clusters = DuplicateClusters(cluster_of=cluster_of, representatives=representatives)
    return kept, clusters, manifest


def export_clusters_csv(
    clusters: DuplicateClusters,
    manifest: DedupManifest,
    signatures: dict[str, MinHashSignature],
    path,
) -> None:
    """CSV rows (dropped_id, survivor_id, estimated_jaccard)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dropped_id", "survivor_id", "estimated_jaccard"])
        for dropped_id, survivor_id in sorted(manifest.drops.items()):
            est = ""
            if dropped_id in signatures and survivor_id in signatures:
                est = f"{estimate_jaccard(signatures[dropped_id], signatures[survivor_id]):.6f}"
            writer.writerow([dropped_id, survivor_id, est])


# --------------------------------------------------------------------------
# Signature cache file


def write_signature_cache(
    path, entries: Iterable[tuple[str, MinHashSignature]], params: LshParams
) -> int:
    """Binary cache: header {magic, version, gram, bands, band_length, seed},
    then (id, num_hashes x u64) entries, little-endian."""
    n = 0
    with open(path, "wb") as fh:
        fh.write(
            _CACHE_HEADER.pack(
                _CACHE_MAGIC,
                _CACHE_VERSION,
                params.gram_size,
                params.num_bands,
                params.band_length,
                params.seed,
            )
        )
        for rid, sig in entries:
            if sig.params != params:
                raise DataError(f"signature for {rid!r} does not match cache parameters")
            encoded = rid.encode("utf-8")
            fh.write(_CACHE_IDLEN.pack(len(encoded)))
            fh.write(encoded)
            fh.write(sig.values.astype("<u8").tobytes())
            n += 1
    return n


def read_signature_cache(path) -> tuple[LshParams, Iterator[tuple[str, MinHashSignature]]]:
    fh = open(path, "rb")
    header = fh.read(_CACHE_HEADER.size)
    if len(header) != _CACHE_HEADER.size:
        fh.close()
        raise DataError(f"truncated signature cache {path}")
    magic, version, gram, bands, band_len, seed = _CACHE_HEADER.unpack(header)
    if magic != _CACHE_MAGIC:
        fh.close()
        raise DataError(f"{path} is not a signature cache")
    if version != _CACHE_VERSION:
        fh.close()
        raise DataError(f"unsupported signature cache version {version}")
    params = LshParams(gram_size=gram, num_bands=bands, band_length=band_len, seed=seed)

    def _entries() -> Iterator[tuple[str, MinHashSignature]]:
        sig_bytes = params.num_hashes * 8
        with fh:
            while True:
                raw_len = fh.read(_CACHE_IDLEN.size)
                if not raw_len:
                    return
                (id_len,) = _CACHE_IDLEN.unpack(raw_len)
                rid = fh.read(id_len).decode("utf-8")
                values = np.frombuffer(fh.read(sig_bytes), dtype="<u8").astype(np.uint64)
                if values.size != params.num_hashes:
                    raise DataError(f"truncated signature entry for {rid!r}")
                yield rid, MinHashSignature(values=values, params=params)

    return params, _entries()
