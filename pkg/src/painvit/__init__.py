"""Pain detection with vision transformers on facial frames.

The package is layered: ``tensor`` (reverse-mode autodiff on numpy),
``vit`` (the model), ``optim`` (Adam and SAM), ``data`` (PSPI labels,
folds, grids, Mixup, synthetic corpus), ``metrics``, ``interpret``
(attention maps) and ``harness`` (training, sweep, reports).
"""

from .errors import (ConfigError, ContractError, DimensionError, FormatError, PainVitError,
                     TruncatedFileError, UndefinedMetricError, ValidationError)

__version__ = "0.1.0"

__all__ = ["PainVitError", "DimensionError", "ContractError", "ConfigError", "ValidationError",
           "FormatError", "TruncatedFileError", "UndefinedMetricError", "__version__"]
