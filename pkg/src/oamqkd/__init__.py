"""High-dimensional QKD toolkit for same-order OAM mode bases.

Exact mode algebra for Laguerre-Gaussian / rotated Hermite-Gaussian bases,
a Monte-Carlo prepare-measure protocol simulator, a Kolmogorov-turbulence
crosstalk channel, and two secret-key-rate certifiers (analytic entropic
bound and numerical dual optimization).
"""

__version__ = "0.1.0"

from .modes import (
    HGExpansion,
    ModeIndex,
    PMUBPair,
    b_coeff,
    build_pmub,
    hg45_in_hg,
    lg_in_hg,
    protocol_mode_indices,
    render_intensity,
)
from .turbulence import (
    ChannelNoise,
    CrosstalkProfile,
    TurbulenceParams,
    channel_qber,
    circular_harmonic,
    crosstalk_profile,
    detection_probability,
    radial_density,
    rotational_coherence,
)
from .security import (
    AnalyticRate,
    ConstraintSet,
    DualSolution,
    HermitianOperator,
    IdealProtocolState,
    JointOutcomeDistribution,
    analytic_key_rate,
    build_constraints,
    conditional_entropy,
    dual_exponential,
    dual_objective,
    ideal_state,
    key_pinchers,
    optimize_dual,
    practical_rate_series,
)
from .protocol import (
    ProtocolConfig,
    SessionResult,
    SessionStats,
    SorterStage,
    SourceMode,
    apparatus_pipeline,
    default_sorter_stages,
    default_source_modes,
    run_session,
    sorter_route,
)

__all__ = [name for name in dir() if not name.startswith("_")]
