from meshchaos.pdg.flatten import FlatRecord, flatten, unflatten
from meshchaos.pdg.model import (
    AnomalyReason,
    Bucket,
    ComparisonReport,
    FieldStats,
    GenerationResult,
    PathRef,
    PdgConfig,
    PdgModel,
    TestMatch,
    build,
    compare,
    decycle,
    generate,
    load_model,
    read_records,
    save_model,
    value_hash,
)
from meshchaos.pdg.tree import DecisionTree, Node, PathAtom, fit_tree

__all__ = [
    "AnomalyReason",
    "Bucket",
    "ComparisonReport",
    "DecisionTree",
    "FieldStats",
    "FlatRecord",
    "GenerationResult",
    "Node",
    "PathAtom",
    "PathRef",
    "PdgConfig",
    "PdgModel",
    "TestMatch",
    "build",
    "compare",
    "decycle",
    "fit_tree",
    "flatten",
    "generate",
    "load_model",
    "read_records",
    "save_model",
    "unflatten",
    "value_hash",
]
