"""Holographic-reduced-representation aggregation of audio fingerprints."""
from .compose import (
    ComposedDatabase,
    CompositeBlock,
    FingerprintSequence,
    Method,
    aggregate_decimation,
    aggregate_summation,
    compose_block,
    compose_database,
    read_database,
    recover_position,
    write_database,
)
from .hrr import (
    PositionBasis,
    circular_convolve,
    containment_score,
    exact_inverse,
    generate_position_basis,
    unbind,
)
from .index import ExactIndex, IvfPqIndex, IvfPqParams, build_exact, kmeans, topk_exact, topk_ivfpq, train_ivfpq
from .search import compose_queries, search_baseline, search_sequence, search_single
from .synth import CorpusSpec, NoiseSpec, gen_database, ingest_external, perturb_query

__version__ = "0.1.0"
