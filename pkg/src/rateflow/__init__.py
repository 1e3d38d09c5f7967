"""Exact-rate planning and cycle simulation for continuous-flow CNN pipelines."""

__version__ = "0.1.0"

from .rates import LayerRates, Rate, RateProfile, propagate
from .model_ir import (
    LayerKind,
    LayerSpec,
    ModelError,
    ModelGraph,
    Padding,
    Tensor8,
    conv_geometry,
    load_model,
)
from .golden import golden_forward, golden_layer
from .kpu_schedule import (
    KpuVariantSchedule,
    ScheduleError,
    TapAssignment,
    derive_variants,
    window_coverage,
)
from .dse import (
    CandidateSet,
    DseError,
    LayerImpl,
    LayerPlan,
    LegacyUnsupportedError,
    NetworkPlan,
    PlanError,
    candidate_set,
    estimate_resources,
    estimate_throughput,
    load_plan,
    plan_from_dict,
    plan_network,
    plan_to_dict,
    select_impl,
    select_impl_legacy,
)

__all__ = [
    "__version__",
    "Rate",
    "LayerRates",
    "RateProfile",
    "propagate",
    "LayerKind",
    "Padding",
    "LayerSpec",
    "ModelGraph",
    "ModelError",
    "Tensor8",
    "conv_geometry",
    "load_model",
    "golden_forward",
    "golden_layer",
    "KpuVariantSchedule",
    "TapAssignment",
    "ScheduleError",
    "derive_variants",
    "window_coverage",
    "CandidateSet",
    "LayerImpl",
    "LayerPlan",
    "NetworkPlan",
    "DseError",
    "PlanError",
    "LegacyUnsupportedError",
    "candidate_set",
    "select_impl",
    "select_impl_legacy",
    "plan_network",
    "plan_from_dict",
    "plan_to_dict",
    "load_plan",
    "estimate_resources",
    "estimate_throughput",
]
