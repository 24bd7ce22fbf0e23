"""Video clip classifiers for laser-herding footage, with a dataset-bias audit."""

import json

from . import _core
from ._core import (
    CLASS_ORDER,
    HerdnetError,
    dense_flow,
    f1_score,
    generate_dataset,
    sample_indices_uniform,
    softmax,
)

__all__ = [
    "CLASS_ORDER",
    "HerdnetError",
    "audit_report",
    "cli",
    "cross_split_summary",
    "dense_flow",
    "f1_score",
    "generate_dataset",
    "sample_indices_uniform",
    "softmax",
]


def cross_split_summary(values):
    return json.loads(_core.cross_split_summary(list(values)))


def audit_report(predictions, manifest_csv, predicted_class_pp=False, seed=0):
    """`predictions` is the list stored under "predictions" in an eval output."""
    return json.loads(_core.audit_report(json.dumps(predictions), str(manifest_csv), predicted_class_pp, seed))


def cli(*args):
    """Runs `herdnet <args>`; returns (exit_code, stdout, stderr)."""
    return _core.cli([str(a) for a in args])
