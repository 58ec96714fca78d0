"""Optimism-based adaptive regulation of linear-quadratic systems."""

from .confidence import ConfidenceEllipsoid, ParameterRegion, contains, sample_feasible
from .exceptions import (
    BlowUpError,
    DimensionError,
    DomainError,
    EmptyRegionError,
    InstabilityError,
    LQError,
    NotStabilizableError,
    NumericalError,
    RankDeficiencyError,
    SampleSizeOverflow,
    SelectionFailure,
)
from .identify import (
    ClosedLoopLeastSquares,
    LeastSquaresFit,
    fit_closed_loop,
    noise_bound,
    prediction_radius,
    sample_size,
    state_bound,
)
from .lqmodel import CostPair, DynamicsParameter, JordanData, is_stabilizer, jordan_constant, spectral_radius
from .noise import NoiseModel, tail_triple
from .ofu import OFURegulator, ofu_select, run_algorithm1, schedule
from .riccati import RiccatiSolution, average_cost, clt_variance, lipschitz_probe, solve_dare
from .simulate import Policy, RunRecord, certainty_equivalence_policy, run_policy, step

__version__ = "0.1.0"
