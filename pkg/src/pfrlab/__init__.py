"""Private function retrieval over MDS-coded databases: a numpy laboratory."""

from .audit import (
    PrivacyReport,
    RateReport,
    baseline_rates,
    outer_bound_v2,
    privacy_audit_statistical,
    privacy_audit_structural,
    rate_report,
    scheme_rate,
)
from .decoder import DecodeState, peel_decode, regenerate_redundant
from .field import FieldElement, PrimeField, PrimeFieldCtx, Rational, fp_add, fp_inv, fp_mul
from .mds import (
    DatabaseShard,
    GeneratorMatrix,
    MessageStore,
    build_generator,
    decode_segment,
    encode_shards,
    verify_mds,
)
from .protocol import (
    AnswerString,
    DatabaseNode,
    InProcessTransport,
    SessionTranscript,
    SocketTransport,
    evaluate_answers,
    run_session,
)
from .query import (
    QueryAtom,
    QueryMatrix,
    QuerySet,
    SchemeParams,
    generate_query_set,
    lower_to_matrix,
    query_set,
)
from .virtual import (
    CombinationVector,
    IndexAssignment,
    enumerate_combinations,
    make_index_assignment,
    permuted_symbol,
    virtual_message,
    virtual_symbol,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerString",
    "CombinationVector",
    "DatabaseNode",
    "DatabaseShard",
    "DecodeState",
    "FieldElement",
    "GeneratorMatrix",
    "InProcessTransport",
    "IndexAssignment",
    "MessageStore",
    "PrimeField",
    "PrimeFieldCtx",
    "PrivacyReport",
    "QueryAtom",
    "QueryMatrix",
    "QuerySet",
    "RateReport",
    "Rational",
    "SchemeParams",
    "SessionTranscript",
    "SocketTransport",
    "baseline_rates",
    "build_generator",
    "decode_segment",
    "encode_shards",
    "enumerate_combinations",
    "evaluate_answers",
    "fp_add",
    "fp_inv",
    "fp_mul",
    "generate_query_set",
    "lower_to_matrix",
    "make_index_assignment",
    "outer_bound_v2",
    "peel_decode",
    "permuted_symbol",
    "privacy_audit_statistical",
    "privacy_audit_structural",
    "query_set",
    "rate_report",
    "regenerate_redundant",
    "run_session",
    "scheme_rate",
    "verify_mds",
    "virtual_message",
    "virtual_symbol",
]
