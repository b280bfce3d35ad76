"""Multi-class coded slotted ALOHA with unequal error protection.

Modules: ``model`` (configurations and degree distributions), ``graph_sim``
(frame sampling, SIC peeling and Monte Carlo PLR), ``density_evolution``
(asymptotic thresholds), ``error_floor`` (stopping-set enumeration and
finite-length PLR prediction), ``optimizer`` (degree-distribution design),
``delay`` (decoding delay) and ``cli``.
"""

from .model import (
    ClassSpec,
    CSAError,
    DegreeDistribution,
    DomainError,
    InvalidConfigError,
    LimitError,
    ScenarioConfig,
    UndefinedDegreeError,
)

__all__ = [
    "ClassSpec",
    "CSAError",
    "DegreeDistribution",
    "DomainError",
    "InvalidConfigError",
    "LimitError",
    "ScenarioConfig",
    "UndefinedDegreeError",
]
__version__ = "0.1.0"
