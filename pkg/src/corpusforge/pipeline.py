"""Pipeline configuration, stage execution, manifests, and corpus stats.

A pipeline is an ordered stage list over JSONL shards. Every stage writes
an immutable shard directory named by stage index, stage name, and config
hash, plus a ``_SUCCESS`` marker and a small stage manifest; rerunning a
config skips stages whose directories are already complete, so deleting
stage k's directory regenerates stages k onward only. All randomness
derives from the single global seed hashed with the stage name, making
two runs of one config byte-identical.
"""

from __future__ import annotations

import glob as globmod
import hashlib
import json
import logging
import os
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import yaml

from .version import __version__
from .bpe import Tokenizer, train_bpe, train_morph_bpe
from .dedup import (
    DEFAULT_LSH_PARAMS,
    LshParams,
    exact_dedup,
    export_clusters_csv,
    fuzzy_dedup,
    url_dedup,
    write_signature_cache,
)
from .errors import ConfigError, DataError
from .ngram_lm import export_arpa, load_lm, perplexity_filter, save_lm, train_lm
from .records import (
    NormalizationOptions,
    Record,
    clean_text,
    detect_source_boilerplate,
    normalize_arabic,
    parse_record,
    serialize_record,
    strip_source_boilerplate,
)
from .segmentation import load_segmentation_table, segmenter_from_config
from .signals import (
    FilterPolicy,
    PARAGRAPH_PRESETS,
    SIGNAL_NAMES,
    apply_policy,
    build_histogram,
    compute_signals,
    export_bin_samples_jsonl,
    export_histogram_csv,
    min_long_paragraphs,
)
from .tokenizer_eval import export_report_json, export_worst_words_csv, morph_alignment_score

logger = logging.getLogger(__name__)

STAGE_NAMES = (
    "clean",
    "signals",
    "calibrate",
    "filter",
    "dedup_exact",
    "dedup_url",
    "dedup_fuzzy",
    "lm_train",
    "lm_filter",
    "tok_train",
    "tok_eval",
)

_STAGE_PARAMS: dict[str, set[str]] = {
    "clean": {"normalize", "normalization", "strip_boilerplate", "boilerplate_key", "min_repeat"},
    "signals": set(),
    "calibrate": {"signals", "sample_capacity"},
    "filter": {
        "policy",
        "policy_file",
        "paragraph_preset",
        "paragraph_min_chars",
        "paragraph_min_paragraphs",
    },
    "dedup_exact": {"bucket_count"},
    "dedup_url": set(),
    "dedup_fuzzy": {
        "gram_size",
        "num_bands",
        "band_length",
        "threshold",
        "verify",
        "write_cache",
        "clusters_csv",
    },
    "lm_train": {"order", "vocab_limit", "smoothing", "prune_singletons", "model_file", "arpa_file"},
    "lm_filter": {
        "model",
        "high_pct",
        "low_pct",
        "per_dataset",
        "min_records",
        "high_cutoff",
        "low_cutoff",
    },
    "tok_train": {
        "mode",
        "vocab_size",
        "segmenter",
        "segmentation_table",
        "reserved_count",
        "extra_alphabet",
        "strict_boundaries",
        "model_file",
    },
    "tok_eval": {"model", "segmenter", "segmentation_table", "frequency_weighted", "report_file", "worst_csv"},
}

# Stages that are pure per record and can fan out over shards in a pool.
_PARALLEL_SAFE = {"clean", "signals"}


@dataclass
class StageSpec:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class PipelineConfig:
    input: str
    output_dir: str
    stages: list[StageSpec]
    seed: int = 0
    dataset_tag: str | None = None
    lenient: bool = False
    workers: int | None = None
    shard_size: int = 100_000
    version: int = 1

    def validate(self) -> None:
        if self.version != 1:
            raise ConfigError(f"unsupported config version {self.version!r}")
        if not self.stages:
            raise ConfigError("config declares no stages")
        for spec in self.stages:
            if spec.name not in STAGE_NAMES:
                raise ConfigError(f"unknown stage {spec.name!r}")
            unknown = set(spec.params) - _STAGE_PARAMS[spec.name]
            if unknown:
                raise ConfigError(
                    f"stage {spec.name!r} has unknown parameters {sorted(unknown)}"
                )
        if self.shard_size < 1:
            raise ConfigError("shard_size must be positive")

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        known = {
            "input",
            "output_dir",
            "stages",
            "seed",
            "dataset_tag",
            "lenient",
            "workers",
            "shard_size",
            "version",
        }
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for required in ("input", "output_dir", "stages"):
            if required not in obj:
                raise ConfigError(f"config missing required key {required!r}")
        stages = []
        for raw in obj["stages"]:
            if isinstance(raw, str):
                stages.append(StageSpec(name=raw))
            elif isinstance(raw, dict):
                name = raw.get("name")
                if not name:
                    raise ConfigError("stage entry missing 'name'")
                stages.append(StageSpec(name=name, params=raw.get("params", {})))
            else:
                raise ConfigError(f"bad stage entry {raw!r}")
        config = cls(
            input=obj["input"],
            output_dir=obj["output_dir"],
            stages=stages,
            seed=obj.get("seed", 0),
            dataset_tag=obj.get("dataset_tag"),
            lenient=obj.get("lenient", False),
            workers=obj.get("workers"),
            shard_size=obj.get("shard_size", 100_000),
            version=obj.get("version", 1),
        )
        config.validate()
        return config

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "input": self.input,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "dataset_tag": self.dataset_tag,
            "lenient": self.lenient,
            "workers": self.workers,
            "shard_size": self.shard_size,
            "stages": [{"name": s.name, "params": s.params} for s in self.stages],
        }

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            if path.suffix in (".yaml", ".yml"):
                obj = yaml.safe_load(fh)
            else:
                obj = json.load(fh)
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(obj)

    def config_hash(self) -> str:
        # output_dir and workers do not affect results, so they stay out
        # of the hash that names stage directories.
        payload = self.to_dict()
        payload.pop("output_dir")
        payload.pop("workers")
        canon = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def stage_seed(global_seed: int, stage_index: int, stage_name: str) -> int:
    payload = f"{global_seed}:{stage_index}:{stage_name}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass
class StageManifest:
    name: str
    index: int
    input_count: int
    output_count: int
    dropped_by_reason: dict[str, int] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    artifacts: dict[str, str] = field(default_factory=dict)
    cached: bool = False

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    tool_version: str = __version__
    status: str = "running"
    error: str | None = None
    input_checksums: dict[str, str] = field(default_factory=dict)
    output_checksums: dict[str, str] = field(default_factory=dict)
    stages: list[StageManifest] = field(default_factory=list)

    def validate_telescoping(self) -> None:
        for previous, current in zip(self.stages, self.stages[1:]):
            if current.input_count != previous.output_count:
                raise AssertionError(
                    f"stage {current.name} input {current.input_count} != "
                    f"stage {previous.name} output {previous.output_count}"
                )

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "status": self.status,
            "error": self.error,
            "input_checksums": self.input_checksums,
            "output_checksums": self.output_checksums,
            "stages": [s.to_dict() for s in self.stages],
        }


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _read_shard(path, lenient: bool) -> Iterator[Record]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read shard {path}: {exc}") from exc
    with fh:
        for i, line in enumerate(fh, start=1):
            if line.strip():
                yield parse_record(line, line_number=i, lenient=lenient)


def _read_shards(paths: list[str], lenient: bool, dataset_tag: str | None = None) -> Iterator[Record]:
    for path in paths:
        for record in _read_shard(path, lenient):
            if dataset_tag is not None:
                record.metadata.setdefault("dataset", dataset_tag)
            yield record


def _write_shards(records: Iterable[Record], out_dir: Path, shard_size: int) -> tuple[list[str], int]:
    paths: list[str] = []
    count = 0
    fh = None
    try:
        for record in records:
            if fh is None or count % shard_size == 0:
                if fh:
                    fh.close()
                shard_path = out_dir / f"part-{len(paths):05d}.jsonl"
                paths.append(str(shard_path))
                fh = open(shard_path, "w", encoding="utf-8")
            fh.write(serialize_record(record))
            fh.write("\n")
            count += 1
    finally:
        if fh:
            fh.close()
    if not paths:  # keep downstream stages glob-able even when empty
        shard_path = out_dir / "part-00000.jsonl"
        shard_path.touch()
        paths.append(str(shard_path))
    return paths, count


# --------------------------------------------------------------------------
# Per-record transforms (parallel-safe stages)


def _normalization_options(params: dict) -> NormalizationOptions:
    overrides = params.get("normalization", {})
    unknown = set(overrides) - set(NormalizationOptions.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown normalization flags {sorted(unknown)}")
    return NormalizationOptions(**overrides)


def _clean_record(record: Record, params: dict) -> Record:
    text = clean_text(record.text)
    if params.get("normalize", True):
        text = normalize_arabic(text, _normalization_options(params))
    return record.copy_with_text(text)


def _signals_record(record: Record, params: dict) -> Record:
    record.quality_signals.update(compute_signals(record.text))
    return record


_RECORD_TRANSFORMS = {
    "clean": _clean_record,
    "signals": _signals_record,
}


def _transform_shard_worker(args) -> tuple[int, int]:
    stage_name, params, in_path, out_path, lenient = args
    transform = _RECORD_TRANSFORMS[stage_name]
    n = 0
    with open(out_path, "w", encoding="utf-8") as out:
        for record in _read_shard(in_path, lenient):
            out.write(serialize_record(transform(record, params)))
            out.write("\n")
            n += 1
    return n, n


# --------------------------------------------------------------------------
# Stage implementations


@dataclass
class _StageContext:
    stage_dir: Path
    seed: int
    config: PipelineConfig
    shared: dict


def _stage_clean(records: list[Record], params: dict, ctx: _StageContext):
    if params.get("strip_boilerplate", False):
        key = params.get("boilerplate_key", "source")
        min_repeat = params.get("min_repeat", 0.5)
        groups: dict[str, list[Record]] = {}
        cleaned = [r.copy_with_text(clean_text(r.text)) for r in records]
        for record in cleaned:
            groups.setdefault(record.metadata.get(key, ""), []).append(record)
        for group in groups.values():
            boilerplate = detect_source_boilerplate(group, min_repeat=min_repeat)
            for record in group:
                record.text = strip_source_boilerplate(record.text, boilerplate)
        records = cleaned
    else:
        records = [r.copy_with_text(clean_text(r.text)) for r in records]
    if params.get("normalize", True):
        opts = _normalization_options(params)
        for record in records:
            record.text = normalize_arabic(record.text, opts)
    return records, {}, {}


def _stage_signals(records: list[Record], params: dict, ctx: _StageContext):
    for record in records:
        record.quality_signals.update(compute_signals(record.text))
    return records, {}, {}


def _stage_calibrate(records: list[Record], params: dict, ctx: _StageContext):
    names = params.get("signals") or list(SIGNAL_NAMES)
    capacity = params.get("sample_capacity", 100)
    artifacts = {}
    for name in names:
        hist = build_histogram(records, name, sample_capacity=capacity, seed=ctx.seed)
        csv_path = ctx.stage_dir / f"hist_{name}.csv"
        samples_path = ctx.stage_dir / f"samples_{name}.jsonl"
        export_histogram_csv(hist, csv_path)
        export_bin_samples_jsonl(hist, samples_path)
        artifacts[f"hist_{name}"] = str(csv_path)
        artifacts[f"samples_{name}"] = str(samples_path)
    return records, {}, artifacts


def _stage_filter(records: list[Record], params: dict, ctx: _StageContext):
    if "policy" in params and "policy_file" in params:
        raise ConfigError("filter stage takes either 'policy' or 'policy_file', not both")
    if "policy_file" in params:
        policy = FilterPolicy.load(params["policy_file"])
    else:
        policy = FilterPolicy.from_dict(params.get("policy", {"version": 1, "rules": []}))

    preset = params.get("paragraph_preset")
    if preset is not None and preset not in PARAGRAPH_PRESETS:
        raise ConfigError(f"unknown paragraph preset {preset!r}")
    check_paragraphs = preset is not None or "paragraph_min_chars" in params
    if preset is not None:
        min_paragraphs, min_chars = PARAGRAPH_PRESETS[preset]
    else:
        min_paragraphs, min_chars = 1, 200
    min_chars = params.get("paragraph_min_chars", min_chars)
    min_paragraphs = params.get("paragraph_min_paragraphs", min_paragraphs)

    kept = []
    drops: dict[str, str] = {}
    for record in records:
        decision = apply_policy(record, policy)
        if not decision.keep:
            drops[record.id] = decision.reason
            continue
        if check_paragraphs and not min_long_paragraphs(record.text, min_chars, min_paragraphs):
            drops[record.id] = "min_long_paragraphs"
            continue
        kept.append(record)
    return kept, drops, {}


def _stage_dedup_exact(records: list[Record], params: dict, ctx: _StageContext):
    kept, manifest = exact_dedup(records, bucket_count=params.get("bucket_count", 16))
    drops = {rid: "exact_duplicate" for rid in manifest.drops}
    return kept, drops, {}


def _stage_dedup_url(records: list[Record], params: dict, ctx: _StageContext):
    kept, manifest = url_dedup(records)
    drops = {rid: "url_duplicate" for rid in manifest.drops}
    return kept, drops, {}


def _stage_dedup_fuzzy(records: list[Record], params: dict, ctx: _StageContext):
    lsh = LshParams(
        gram_size=params.get("gram_size", DEFAULT_LSH_PARAMS.gram_size),
        num_bands=params.get("num_bands", DEFAULT_LSH_PARAMS.num_bands),
        band_length=params.get("band_length", DEFAULT_LSH_PARAMS.band_length),
        seed=ctx.seed,
    )
    sink: dict = {}
    kept, clusters, manifest = fuzzy_dedup(
        records,
        params=lsh,
        threshold=params.get("threshold", 0.8),
        verify=params.get("verify", True),
        signature_sink=sink,
    )
    artifacts = {}
    csv_path = ctx.stage_dir / params.get("clusters_csv", "clusters.csv")
    export_clusters_csv(clusters, manifest, sink, csv_path)
    artifacts["clusters_csv"] = str(csv_path)
    if params.get("write_cache", False):
        cache_path = ctx.stage_dir / "signatures.bin"
        write_signature_cache(cache_path, sorted(sink.items()), lsh)
        artifacts["signature_cache"] = str(cache_path)
    drops = {rid: "fuzzy_duplicate" for rid in manifest.drops}
    return kept, drops, artifacts


def _stage_lm_train(records: list[Record], params: dict, ctx: _StageContext):
    lm = train_lm(
        (r.text for r in records),
        order=params.get("order", 5),
        vocab_limit=params.get("vocab_limit", 500_000),
        prune_singletons=params.get("prune_singletons", False),
        smoothing=params.get("smoothing", "kneser_ney"),
    )
    model_path = ctx.stage_dir / params.get("model_file", "lm.bin")
    save_lm(lm, model_path)
    artifacts = {"lm_model": str(model_path)}
    if params.get("arpa_file"):
        arpa_path = ctx.stage_dir / params["arpa_file"]
        export_arpa(lm, arpa_path)
        artifacts["lm_arpa"] = str(arpa_path)
    ctx.shared["lm_model"] = str(model_path)
    return records, {}, artifacts


def _stage_lm_filter(records: list[Record], params: dict, ctx: _StageContext):
    model_path = params.get("model") or ctx.shared.get("lm_model")
    if not model_path:
        raise ConfigError("lm_filter needs a 'model' path or a preceding lm_train stage")
    lm = load_lm(model_path)
    kept, manifest = perplexity_filter(
        records,
        lm,
        high_pct=params.get("high_pct", 5.0),
        low_pct=params.get("low_pct", 0.0),
        per_dataset=params.get("per_dataset", True),
        min_records=params.get("min_records", 20),
        high_cutoff=params.get("high_cutoff"),
        low_cutoff=params.get("low_cutoff"),
    )
    cutoffs_path = ctx.stage_dir / "perplexity_cutoffs.json"
    with open(cutoffs_path, "w", encoding="utf-8") as fh:
        json.dump(manifest.cutoffs, fh, ensure_ascii=False, indent=2, sort_keys=True)
    return kept, dict(manifest.drops), {"cutoffs": str(cutoffs_path)}


def _tok_segmenter(params: dict):
    seg_config = params.get("segmenter")
    table = None
    if params.get("segmentation_table"):
        table = load_segmentation_table(params["segmentation_table"])
        if seg_config is None:
            seg_config = {
                "kind": "lookup_table",
                "table_path": params["segmentation_table"],
                "fallback": {"kind": "rule_based"},
            }
    return segmenter_from_config(seg_config, table=table) if seg_config else None


def _stage_tok_train(records: list[Record], params: dict, ctx: _StageContext):
    if "vocab_size" not in params:
        raise ConfigError("tok_train requires 'vocab_size'")
    mode = params.get("mode", "morph")
    if mode not in ("vanilla", "morph"):
        raise ConfigError(f"unknown tokenizer mode {mode!r}")
    extra = params.get("extra_alphabet")
    corpus = (r.text for r in records)
    if mode == "morph":
        segmenter = _tok_segmenter(params) or segmenter_from_config({"kind": "rule_based"})
        tokenizer = train_morph_bpe(
            corpus,
            segmenter,
            vocab_size=params["vocab_size"],
            extra_alphabet=extra,
            reserved_count=params.get("reserved_count", 0),
            strict_boundaries=params.get("strict_boundaries", False),
        )
    else:
        tokenizer = train_bpe(
            corpus,
            vocab_size=params["vocab_size"],
            extra_alphabet=extra,
            reserved_count=params.get("reserved_count", 0),
        )
    model_path = ctx.stage_dir / params.get("model_file", "tokenizer.txt")
    tokenizer.save(model_path)
    ctx.shared["tokenizer_model"] = str(model_path)
    return records, {}, {"tokenizer_model": str(model_path)}


def _stage_tok_eval(records: list[Record], params: dict, ctx: _StageContext):
    model_path = params.get("model") or ctx.shared.get("tokenizer_model")
    if not model_path:
        raise ConfigError("tok_eval needs a 'model' path or a preceding tok_train stage")
    tokenizer = Tokenizer.load(model_path)
    segmenter = _tok_segmenter(params)
    report = morph_alignment_score(
        tokenizer,
        (r.text for r in records),
        segmenter=segmenter,
        frequency_weighted=params.get("frequency_weighted", True),
    )
    report_path = ctx.stage_dir / params.get("report_file", "tok_eval.json")
    worst_path = ctx.stage_dir / params.get("worst_csv", "worst_words.csv")
    export_report_json(report, report_path)
    export_worst_words_csv(report, worst_path)
    return records, {}, {"report": str(report_path), "worst_words": str(worst_path)}


_STAGE_FUNCS = {
    "clean": _stage_clean,
    "signals": _stage_signals,
    "calibrate": _stage_calibrate,
    "filter": _stage_filter,
    "dedup_exact": _stage_dedup_exact,
    "dedup_url": _stage_dedup_url,
    "dedup_fuzzy": _stage_dedup_fuzzy,
    "lm_train": _stage_lm_train,
    "lm_filter": _stage_lm_filter,
    "tok_train": _stage_tok_train,
    "tok_eval": _stage_tok_eval,
}


# --------------------------------------------------------------------------
# Runner


def _atomic_write_json(obj: dict, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2, sort_keys=True)
    os.replace(tmp, path)


def _run_stage_pooled(
    spec: StageSpec, in_paths: list[str], stage_dir: Path, workers: int, lenient: bool
) -> tuple[list[str], int, int]:
    out_paths = [str(stage_dir / f"part-{i:05d}.jsonl") for i in range(len(in_paths))]
    jobs = [
        (spec.name, spec.params, in_path, out_path, lenient)
        for in_path, out_path in zip(in_paths, out_paths)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_transform_shard_worker, jobs))
    else:
        results = [_transform_shard_worker(job) for job in jobs]
    total_in = sum(r[0] for r in results)
    total_out = sum(r[1] for r in results)
    return out_paths, total_in, total_out


def run_pipeline(config: PipelineConfig) -> RunManifest:
    """Execute the configured stages in order; returns the run manifest.

    Config errors surface before any file is touched. A stage failure
    writes a partial manifest marked failed and re-raises.
    """
    config.validate()
    input_paths = sorted(globmod.glob(config.input))
    if not input_paths:
        raise DataError(f"input glob {config.input!r} matches no shards")

    out_root = Path(config.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    config_hash = config.config_hash()
    workers = config.workers or os.cpu_count() or 1

    manifest = RunManifest(config_hash=config_hash, seed=config.seed)
    manifest.input_checksums = {p: _sha256_file(p) for p in input_paths}

    shared: dict = {}
    current_paths = input_paths
    current_count: int | None = None
    try:
        for index, spec in enumerate(config.stages):
            stage_dir = out_root / f"{index:02d}_{spec.name}_{config_hash[:8]}"
            success_marker = stage_dir / "_SUCCESS"
            stage_manifest_path = stage_dir / "stage_manifest.json"
            if success_marker.exists() and stage_manifest_path.exists():
                with open(stage_manifest_path, encoding="utf-8") as fh:
                    cached = json.load(fh)
                stage_man = StageManifest(**{**cached, "cached": True})
                shared.update(cached.get("artifacts", {}))
                manifest.stages.append(stage_man)
                current_paths = sorted(globmod.glob(str(stage_dir / "part-*.jsonl")))
                current_count = stage_man.output_count
                logger.info("stage %d %s: cached, %d records", index, spec.name, current_count)
                continue

            stage_dir.mkdir(parents=True, exist_ok=True)
            started = time.monotonic()
            seed = stage_seed(config.seed, index, spec.name)

            pooled = spec.name in _PARALLEL_SAFE and not spec.params.get("strip_boilerplate")
            if pooled:
                out_paths, in_count, out_count = _run_stage_pooled(
                    spec, current_paths, stage_dir, workers, config.lenient
                )
                dropped_by_reason: dict[str, int] = {}
                artifacts: dict[str, str] = {}
            else:
                dataset_tag = config.dataset_tag if index == 0 else None
                records = list(_read_shards(current_paths, config.lenient, dataset_tag))
                in_count = len(records)
                ctx = _StageContext(stage_dir=stage_dir, seed=seed, config=config, shared=shared)
                kept, drops, artifacts = _STAGE_FUNCS[spec.name](records, spec.params, ctx)
                out_paths, out_count = _write_shards(kept, stage_dir, config.shard_size)
                dropped_by_reason = dict(Counter(drops.values()))
                if drops:
                    _atomic_write_json(dict(sorted(drops.items())), stage_dir / "drops.json")
                shared.update(artifacts)

            stage_man = StageManifest(
                name=spec.name,
                index=index,
                input_count=current_count if current_count is not None else in_count,
                output_count=out_count,
                dropped_by_reason=dropped_by_reason,
                wall_clock_s=round(time.monotonic() - started, 6),
                artifacts=artifacts,
            )
            _atomic_write_json(stage_man.to_dict(), stage_manifest_path)
            success_marker.touch()
            manifest.stages.append(stage_man)
            current_paths = out_paths
            current_count = out_count
            logger.info(
                "stage %d %s: %d -> %d records", index, spec.name, stage_man.input_count, out_count
            )

        manifest.output_checksums = {p: _sha256_file(p) for p in current_paths}
        manifest.status = "succeeded"
        manifest.validate_telescoping()
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
        _atomic_write_json(manifest.to_dict(), out_root / "manifest.json")
        raise
    _atomic_write_json(manifest.to_dict(), out_root / "manifest.json")
    return manifest


# --------------------------------------------------------------------------
# Stats


@dataclass
class SignalSketch:
    count: int = 0
    mean: float = 0.0
    min: float = float("inf")
    max: float = float("-inf")

    def offer(self, value: float) -> None:
        self.count += 1
        self.mean += (value - self.mean) / self.count
        self.min = min(self.min, value)
        self.max = max(self.max, value)

    def to_dict(self) -> dict:
        if not self.count:
            return {"count": 0}
        return {"count": self.count, "mean": self.mean, "min": self.min, "max": self.max}


@dataclass
class StatsSummary:
    record_count: int
    whitespace_token_count: int
    signal_sketches: dict[str, SignalSketch]

    def to_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "whitespace_token_count": self.whitespace_token_count,
            "signals": {k: v.to_dict() for k, v in sorted(self.signal_sketches.items())},
        }


def stats(shard_paths: Iterable[str], lenient: bool = False) -> StatsSummary:
    """One streaming pass: record count, whitespace token count, and a
    count/mean/min/max sketch per quality signal present on the records."""
    record_count = 0
    token_count = 0
    sketches: dict[str, SignalSketch] = {}
    for path in shard_paths:
        for record in _read_shard(path, lenient):
            record_count += 1
            token_count += len(record.text.split())
            for name, value in record.quality_signals.items():
                sketches.setdefault(name, SignalSketch()).offer(value)
    return StatsSummary(
        record_count=record_count,
        whitespace_token_count=token_count,
        signal_sketches=sketches,
    )
