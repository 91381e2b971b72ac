"""Context-format normalization and long-context robustness evaluation for RAG."""

from .attention import (
    AbsResult,
    AttentionVector,
    CalibrationReport,
    attention_balance_score,
    select_format,
    span_attention_profile,
)
from .dataset import (
    Dataset,
    Document,
    FormatStyle,
    KvGenConfig,
    KvSample,
    QaSample,
    apply_format_style,
    generate_kv_dataset,
    load_qa_dataset,
    render_kv_prompt,
    save_dataset,
)
from .harness import (
    ExperimentResult,
    PermutationPlan,
    calibrate,
    run_cnorm_pipeline,
    run_permutation_experiment,
    run_tokenization_study,
)
from .metrics import PositionAccuracy, compute_oaa, compute_opa, pearson, score_answer
from .normalizer import (
    DEFAULT_DELIMITERS,
    FormatConfig,
    NormalizedDocument,
    PromptTemplate,
    assemble_prompt,
    candidate_formats,
    normalize_document,
    reformat_sentence,
    segment_sentences,
)

__version__ = "0.1.0"

__all__ = [
    "AbsResult",
    "AttentionVector",
    "CalibrationReport",
    "DEFAULT_DELIMITERS",
    "Dataset",
    "Document",
    "ExperimentResult",
    "FormatConfig",
    "FormatStyle",
    "KvGenConfig",
    "KvSample",
    "NormalizedDocument",
    "PermutationPlan",
    "PromptTemplate",
    "QaSample",
    "apply_format_style",
    "assemble_prompt",
    "PositionAccuracy",
    "attention_balance_score",
    "compute_oaa",
    "compute_opa",
    "pearson",
    "score_answer",
    "calibrate",
    "candidate_formats",
    "generate_kv_dataset",
    "load_qa_dataset",
    "normalize_document",
    "reformat_sentence",
    "render_kv_prompt",
    "run_cnorm_pipeline",
    "run_permutation_experiment",
    "run_tokenization_study",
    "save_dataset",
    "segment_sentences",
    "select_format",
    "span_attention_profile",
]
