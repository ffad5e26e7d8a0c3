"""uatomo: frequency-domain ultrasound transmission simulation and
absorption-map reconstruction on 2-D grids.

Subpackages group the pipeline stages: grid/medium construction, the
frequency-domain wave operator, acquisition (arrays, sensors, measurement
synthesis), sensitivity assembly, regularized inversion, and image-quality
metrics, plus file formats, configuration, the experiment pipeline, and a CLI.
"""

__version__ = "0.1.0"

from .errors import (
    InvalidArgumentError,
    SolverError,
    UatomoError,
    UndefinedContrastError,
)

__all__ = [
    "__version__",
    "UatomoError",
    "InvalidArgumentError",
    "SolverError",
    "UndefinedContrastError",
]
