"""Lifelong data-curation engine: pseudo-task clustering of gradient
vectors, entropy-driven multi-way score selection, coverage sampling, and
permanent semantic deduplication over a growing sample pool."""

from .clustering import ClusterModel, SelectKResult, kmeans, select_k
from .datamodel import (
    BundleError,
    CuratorError,
    DataPool,
    ManifestEntry,
    PerformanceTable,
    SampleRecord,
    SelectionManifest,
    SelectorRegistry,
    StateConflictError,
    ValidationReport,
    merge_pool,
    read_bundle,
    validate_bundle,
    write_bundle,
)
from .dedup import CompressionPlan, compress_pool, prune_cluster, redundancy_rank
from .lifecycle import EngineConfig, advance_timestep, compress_state, load_state, report
from .metrics import (
    average_accuracy,
    forgetting_rate,
    metrics_report,
    read_performance_csv,
    relative_gain,
    skill_upper_bounds,
)
from .projection import ProjectionSpec, project, project_many
from .scoring import (
    ScoreTable,
    build_score_table,
    dump_scores,
    el2n,
    image_grounding,
    output_entropy,
    perplexity,
)
from .selection import (
    BudgetPlan,
    HistogramSpec,
    allocate_budgets,
    ccs_sample,
    choose_selector,
    distribution_entropy,
    select_subset,
    trim_outliers,
)
from .synthgen import GeneratedStream, SkillSpec, StreamSpec, generate

__version__ = "0.1.0"
