"""Trajectory simulator and analysis toolkit for monitored free fermions.

Quadratic fermion chains under continuous monitoring of two competing
quadratic observable sets, evolved exactly in the Gaussian-state (BdG)
representation: stochastic trajectories, post-selected deterministic
limits, entanglement diagnostics, momentum-space steady states, and
finite-size-scaling analysis, with a dense few-site reference
implementation for validation.
"""

from .errors import (
    BranchImpossibleError,
    CollapseError,
    DegenerateStateError,
    FermionMonitorError,
    GaplessPointError,
    InvalidInputError,
    NumericalConsistencyError,
    ResourceLimitError,
    StationarityWarning,
    StiffnessError,
)
from .state import (
    BdGState,
    CorrelationData,
    RegionSpec,
    SimParams,
    b_indicator,
    correlators,
    dual_correlators,
    dual_rotation,
    half_cut_entropy,
    half_filling_state,
    init_dual_product_state,
    init_product_state,
    orthonormalize,
    overlap_magnitude,
    quarter_regions,
    region_entropy,
    topological_entropy,
)
from .engine import (
    StepRecord,
    load_readout_log,
    postselected_fixed_point,
    postselected_step,
    replay,
    run_trajectory,
    sample_readouts,
    save_readout_log,
    step,
)
from .oracle import DenseOracle
from .nonhermitian import (
    NHPoint,
    PhaseLabel,
    classify_phase,
    darkstate_realspace,
    gapless_boundary,
    integrate_eom,
    nh_point,
    spectral_gap,
    steady_correlators_k,
    winding_numbers,
)
from .ensemble import (
    OBSERVABLES,
    EnsembleResult,
    EnsembleStats,
    SeedScheme,
    TrajectorySeries,
    default_burn_in,
    run_ensemble,
)
from .scaling import (
    CollapseFit,
    CrossingEstimate,
    Curve,
    LogFit,
    barycentric_grid,
    classify_scaling,
    collapse_fit,
    crossing_point,
    log_fit,
    synthetic_collapse,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "FermionMonitorError", "InvalidInputError", "DegenerateStateError",
    "NumericalConsistencyError", "ResourceLimitError", "BranchImpossibleError",
    "GaplessPointError", "StiffnessError", "CollapseError", "StationarityWarning",
    # state
    "SimParams", "BdGState", "CorrelationData", "RegionSpec", "quarter_regions",
    "init_product_state", "half_filling_state", "init_dual_product_state",
    "dual_rotation", "orthonormalize", "overlap_magnitude", "correlators",
    "dual_correlators", "region_entropy", "half_cut_entropy",
    "topological_entropy", "b_indicator",
    # engine
    "StepRecord", "step", "run_trajectory", "replay", "sample_readouts",
    "save_readout_log", "load_readout_log", "postselected_step",
    "postselected_fixed_point",
    # oracle
    "DenseOracle",
    # momentum-space analysis
    "NHPoint", "PhaseLabel", "nh_point", "winding_numbers", "spectral_gap",
    "classify_phase", "gapless_boundary", "steady_correlators_k",
    "integrate_eom", "darkstate_realspace",
    # ensembles
    "OBSERVABLES", "SeedScheme", "EnsembleStats", "EnsembleResult",
    "TrajectorySeries", "default_burn_in", "run_ensemble",
    # scaling
    "Curve", "CrossingEstimate", "CollapseFit", "LogFit", "crossing_point",
    "collapse_fit", "log_fit", "classify_scaling", "synthetic_collapse",
    "barycentric_grid",
]
