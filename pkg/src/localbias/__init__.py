"""Local group bias detection with severity-constrained clustering."""

__version__ = "0.1.0"

from .audit import (  # noqa: E402
    AuditReport,
    BiasThresholds,
    ClusterAudit,
    audit_clusters,
    bootstrap_thresholds,
    characterize,
    normalized_inertia,
)
from .cohort import Cohort, CohortError, Instance, load_cohort, relabel_groups, write_cohort  # noqa: E402
from .engine import (  # noqa: E402
    ClusteringResult,
    Hyperparams,
    bias_term,
    clustering_cost,
    fit,
    init_centroids,
    severity_term,
    total_objective,
)
from .synth import SyntheticSpec, demo_spec, generate, recall_score  # noqa: E402
from .tuning import GridSpec, grid_search  # noqa: E402
