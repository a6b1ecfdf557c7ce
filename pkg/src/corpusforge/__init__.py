"""corpusforge: corpus curation and tokenization for pretraining data.

Stages: record cleaning and Arabic normalization, twenty syntactic quality
signals with histogram calibration and threshold policies, exact / URL /
MinHash-LSH deduplication, n-gram perplexity filtering, and BPE tokenizer
training with an optional morpheme-boundary constraint plus intrinsic
evaluation (fertility, morphological alignment).
"""

from .version import __version__
from .errors import ConfigError, CorpusForgeError, DataError, RecordParseError, SchemaError
from .records import (
    NormalizationOptions,
    Record,
    clean_text,
    detect_source_boilerplate,
    normalize_arabic,
    parse_record,
    read_records,
    serialize_record,
    strip_source_boilerplate,
    write_records,
)
from .signals import (
    FilterPolicy,
    HistogramCalibration,
    PolicyDecision,
    PolicyRule,
    SIGNAL_NAMES,
    apply_policy,
    arabic_fraction,
    build_histogram,
    compute_signals,
    default_arabic_policy,
    merge_histograms,
    min_long_paragraphs,
    tokenize_words,
)
from .dedup import (
    DedupManifest,
    DuplicateClusters,
    LshParams,
    MinHashSignature,
    estimate_jaccard,
    exact_dedup,
    fuzzy_dedup,
    lsh_band_keys,
    minhash_signature,
    normalize_url,
    read_signature_cache,
    shingle,
    url_dedup,
    write_signature_cache,
)
from .ngram_lm import (
    NgramLm,
    export_arpa,
    load_lm,
    perplexity,
    perplexity_filter,
    save_lm,
    train_lm,
)
from .segmentation import (
    LookupTableSegmenter,
    MorphSegmentation,
    RuleBasedSegmenter,
    Segmenter,
    SingleMorphemeSegmenter,
    load_segmentation_table,
    save_segmentation_table,
    segment,
)
from .bpe import (
    MergeRule,
    Tokenizer,
    audit_boundary_safety,
    combine_vocabs,
    train_bpe,
    train_morph_bpe,
)
from .tokenizer_eval import (
    AlignmentResult,
    EvalReport,
    align_word,
    fertility,
    morph_alignment_score,
)
from .pipeline import PipelineConfig, RunManifest, StageSpec, run_pipeline, stats

__all__ = [name for name in dir() if not name.startswith("_")]
