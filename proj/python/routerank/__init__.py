"""Personalized route ranking: synthetic data, DCR model and evaluation."""

from ._routerank import (
    DcrModel,
    InvalidArgument,
    MissingInput,
    NumericError,
    RouterankError,
    SchemaError,
    __version__,
    auc,
    binarize_label,
    default_config,
    kmeans,
    run_stage,
    tsne,
    verify_stage,
)

STAGES = ("gen", "extract", "cluster", "train", "eval", "plot")


def run_all(out, config=None, seed=None, quiet=True, plot=True):
    """Runs every stage in order and returns the manifests by stage name."""
    stages = STAGES if plot else STAGES[:-1]
    return {s: run_stage(s, out, config=config, seed=seed, quiet=quiet) for s in stages}


__all__ = [
    "DcrModel",
    "InvalidArgument",
    "MissingInput",
    "NumericError",
    "RouterankError",
    "SchemaError",
    "STAGES",
    "auc",
    "binarize_label",
    "default_config",
    "kmeans",
    "run_all",
    "run_stage",
    "tsne",
    "verify_stage",
]
