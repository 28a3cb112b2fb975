"""Combinatorial test design: models, covering arrays and output-driven constraint mining."""

from meshchaos.ctd.clustering import (
    ClusterCategory,
    OutputCluster,
    cluster_outputs,
    derive_constraints,
    tokenize,
)
from meshchaos.ctd.expr import And, Atom, Implies, Not, Or, parse_expr
from meshchaos.ctd.model import (
    CtdModel,
    CtdParameter,
    ProductCapExceeded,
    enumerate_legal,
    format_model,
    generate_covering_array,
    interaction_coverage,
    load_model,
    parse_model,
    realizable_tuples,
)

__all__ = [
    "And",
    "Atom",
    "ClusterCategory",
    "CtdModel",
    "CtdParameter",
    "Implies",
    "Not",
    "Or",
    "OutputCluster",
    "ProductCapExceeded",
    "cluster_outputs",
    "derive_constraints",
    "enumerate_legal",
    "format_model",
    "generate_covering_array",
    "interaction_coverage",
    "load_model",
    "parse_expr",
    "parse_model",
    "realizable_tuples",
    "tokenize",
]
