"""Linear immersions of nonlinear flows: limit sets, exact embeddings and learned embeddings."""
from .dynamics import DomainSpec, SystemDef, Trajectory, catalog, get_system, integrate, reverse
from .errors import (ConfigError, DegenerateData, DomainViolation, EmptyDomain, ImmersionLabError,
                     IntegrationDiverged, ResamplingExhausted, UnsupportedOperation)
from .immersions import ImmersionCandidate, exact_catalog, get_candidate, injectivity_probe, verify_immersion
from .learning import Dictionary, collapse_metric, exclusion_test, fit_embedding, sample_pairs, sweep
from .limits import (BasinMap, LimitParams, LimitSet, catalog_limit_sets, closed_basin_score,
                     estimate_omega_limit, incremental_stability_probe, label_basins)

__version__ = "0.1.0"

__all__ = [
    "BasinMap", "ConfigError", "DegenerateData", "Dictionary", "DomainSpec", "DomainViolation",
    "EmptyDomain", "ImmersionCandidate", "ImmersionLabError", "IntegrationDiverged", "LimitParams",
    "LimitSet", "ResamplingExhausted", "SystemDef", "Trajectory", "UnsupportedOperation",
    "catalog", "catalog_limit_sets", "closed_basin_score", "collapse_metric", "estimate_omega_limit",
    "exact_catalog", "exclusion_test", "fit_embedding", "get_candidate", "get_system",
    "incremental_stability_probe", "injectivity_probe", "integrate", "label_basins", "reverse",
    "sample_pairs", "sweep", "verify_immersion",
]
