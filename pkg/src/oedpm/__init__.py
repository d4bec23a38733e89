"""Outlier detection with ensembles of truncated Dirichlet-process Gaussian mixtures."""

__version__ = "0.1.0"

from .data_io import Dataset, evaluate, fit_standardizer, load_csv, write_report  # noqa: E402
from .dpgm import DpgmHyperparams, MixtureEstimate, VariationalState, fit  # noqa: E402
from .ensemble import (  # noqa: E402
    OEDPM,
    DetectionReport,
    EnsembleComponent,
    EnsembleConfig,
    fit_detector,
    score,
)
from .errors import (  # noqa: E402
    ConfigError,
    DataError,
    NumericError,
    OEDPMError,
    UsageError,
)

__all__ = [
    "OEDPM",
    "ConfigError",
    "DataError",
    "Dataset",
    "DetectionReport",
    "DpgmHyperparams",
    "EnsembleComponent",
    "EnsembleConfig",
    "MixtureEstimate",
    "NumericError",
    "OEDPMError",
    "UsageError",
    "VariationalState",
    "evaluate",
    "fit",
    "fit_detector",
    "fit_standardizer",
    "load_csv",
    "score",
    "write_report",
]
