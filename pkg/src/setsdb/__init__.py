"""setsdb: an embedded time series store where streams carry meaning.

Samples live in a small multi-database store with retention and rollups.
On top of that, ontologies describe what each stream measures and for which
part of a system, provenance records how derived streams were produced, and
a reasoning layer turns "availability of cluster c1" into an executable
retrieval plan, exactly or by similarity.
"""

from .errors import (
    CycleError,
    DanglingReference,
    DivisionByZero,
    DuplicateDatabase,
    DuplicateStream,
    Error,
    ExpressionParseError,
    InvalidName,
    KindMismatch,
    NoUsableAttributes,
    QueryParseError,
    SchemaError,
    UnboundMetric,
    Underivable,
    UnitMismatch,
    UnknownDatabase,
    UnknownEntity,
    UnknownMetric,
    UnknownSeries,
    UnknownStream,
    UnknownUnit,
    UnresolvedReference,
    UnsupportedHere,
)
from .metric_expr import EvalContext, evaluate, format_expr, parse_expr
from .ontology import (
    Entity,
    MetricNode,
    OntologySet,
    SystemArchitecture,
    SystemOntology,
    UnitNode,
    load_architecture,
    load_ontology,
    normalize_token,
    sub_entities,
    tokenize,
)
from .query import (
    BasicQuery,
    ExactQuery,
    MatchResult,
    QueryResult,
    SimilarityQuery,
    parse_query,
    print_query,
    run_query,
)
from .reasoning import (
    Aggregate,
    ConvertUnit,
    EvaluateExpr,
    MappedQuery,
    Retrieval,
    SemanticQuery,
    convert_units,
    execute,
    plan_exact,
)
from .semantics import (
    DatabaseSemantics,
    Operation,
    ProvenanceNode,
    SemanticCatalog,
    StreamSemantics,
    Timing,
    semantics_from_document,
    semantics_to_document,
)
from .similarity import (
    GedCosts,
    GedResult,
    LabeledGraph,
    Match,
    SemanticVector,
    SimilarityConfig,
    aggregate_similarity,
    build_filter_tree,
    graph_edit_distance,
    keyword_similarity,
    metric_similarity,
    plan_similarity,
    prune,
    system_similarity,
    vector_for_stream,
)
from .store import (
    AGGREGATORS,
    BaseStore,
    Database,
    RetentionPolicy,
    Rollup,
    Sample,
    SeriesKey,
    downsample,
    format_line,
    format_lines,
    format_value,
    parse_line,
    parse_lines,
)
from .system import System

__version__ = "0.1.0"

__all__ = [
    "AGGREGATORS",
    "Aggregate",
    "BaseStore",
    "BasicQuery",
    "ConvertUnit",
    "CycleError",
    "DanglingReference",
    "Database",
    "DatabaseSemantics",
    "DivisionByZero",
    "DuplicateDatabase",
    "DuplicateStream",
    "Entity",
    "Error",
    "EvalContext",
    "EvaluateExpr",
    "ExactQuery",
    "ExpressionParseError",
    "GedCosts",
    "GedResult",
    "InvalidName",
    "KindMismatch",
    "LabeledGraph",
    "MappedQuery",
    "Match",
    "MatchResult",
    "MetricNode",
    "NoUsableAttributes",
    "OntologySet",
    "Operation",
    "ProvenanceNode",
    "QueryParseError",
    "QueryResult",
    "Retrieval",
    "RetentionPolicy",
    "Rollup",
    "Sample",
    "SchemaError",
    "SemanticCatalog",
    "SemanticQuery",
    "SemanticVector",
    "SeriesKey",
    "SimilarityConfig",
    "SimilarityQuery",
    "StreamSemantics",
    "System",
    "SystemArchitecture",
    "SystemOntology",
    "Timing",
    "UnboundMetric",
    "Underivable",
    "UnitMismatch",
    "UnitNode",
    "UnknownDatabase",
    "UnknownEntity",
    "UnknownMetric",
    "UnknownSeries",
    "UnknownStream",
    "UnknownUnit",
    "UnresolvedReference",
    "UnsupportedHere",
    "aggregate_similarity",
    "build_filter_tree",
    "convert_units",
    "downsample",
    "evaluate",
    "execute",
    "format_expr",
    "format_line",
    "format_lines",
    "format_value",
    "graph_edit_distance",
    "keyword_similarity",
    "load_architecture",
    "load_ontology",
    "metric_similarity",
    "normalize_token",
    "parse_expr",
    "parse_line",
    "parse_lines",
    "parse_query",
    "plan_exact",
    "plan_similarity",
    "print_query",
    "prune",
    "run_query",
    "semantics_from_document",
    "semantics_to_document",
    "sub_entities",
    "system_similarity",
    "tokenize",
    "vector_for_stream",
]
