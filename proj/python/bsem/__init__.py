"""Bayesian structural equation models on a C++ core."""

try:
    from ._core import (  # type: ignore[attr-defined]
        ConvergenceReport,
        FitMeasures,
        FitResult,
        SummaryRow,
        canonical_model,
        fit,
        load_run,
        partable,
        save_run,
    )
except ImportError:  # in-tree builds leave the extension next to the package
    from _core import (
        ConvergenceReport,
        FitMeasures,
        FitResult,
        SummaryRow,
        canonical_model,
        fit,
        load_run,
        partable,
        save_run,
    )

__all__ = [
    "ConvergenceReport",
    "FitMeasures",
    "FitResult",
    "SummaryRow",
    "canonical_model",
    "fit",
    "load_run",
    "partable",
    "save_run",
]
