"""Open and unitary quantum walks driven by quantum Bernoulli noises."""

__version__ = "0.1.0"

from .errors import (
    CursorMismatchError,
    DimensionMismatchError,
    EngineSpecMismatchError,
    ModeBudgetError,
    PositivityError,
    QBNWalkError,
    SpecParseError,
    SupportBoundaryError,
    WindowTooSmallError,
)
from .fock import (
    InternalOperator,
    ModeBudget,
    PermutedIsomorphism,
    SubsetMask,
    build_LR,
    build_annihilation,
    build_coin,
    build_creation,
    partial_trace_mode,
)
from .initial import Dirac, Mixture, Pure, Separable, dirac, format_initial, parse_initial
from .kraus import LatticeWindow, apply_channel, build_kraus, check_completeness
from .openwalk import (
    Nucleus,
    ProductNucleus,
    SeparableNucleus,
    evolve,
    mode_retire,
    step_1d,
    step_d,
    step_separable,
)
from .stats import Distribution, binomial_reference, char_function, gauss_sup_error, moments, total_variation
from .unitary import VectorState, compare_open_unitary, norm_distribution, step_unitary
