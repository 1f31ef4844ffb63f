from .data import (
    DISTRIBUTIONS,
    KEY_INDEXES,
    TABLES,
    BenchmarkSpec,
    catalog_hash,
    create_key_indexes,
    export_catalog,
    generate,
    import_catalog,
)
from .templates import (
    TEMPLATES,
    TPCH_TEMPLATES,
    Calibration,
    CalibrationWarning,
    QueryInstance,
    QueryTemplate,
    calibrate_threshold,
    get_template,
    instantiate,
    perturbed_query,
)
from .workload import (
    CatalogMismatch,
    ReportError,
    WorkloadReport,
    classify_plan_change,
    compare_reports,
    make_queries,
    run_workload,
    sampler_trace,
    trimmed_mean,
)

__all__ = [
    "DISTRIBUTIONS", "KEY_INDEXES", "TABLES", "TEMPLATES", "TPCH_TEMPLATES",
    "BenchmarkSpec", "Calibration", "CalibrationWarning", "CatalogMismatch", "QueryInstance", "QueryTemplate",
    "ReportError", "WorkloadReport",
    "calibrate_threshold", "catalog_hash", "classify_plan_change", "compare_reports", "create_key_indexes",
    "export_catalog", "generate", "get_template", "import_catalog", "instantiate", "make_queries",
    "perturbed_query", "run_workload", "sampler_trace", "trimmed_mean",
]
