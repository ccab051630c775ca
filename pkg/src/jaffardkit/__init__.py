"""Finite-truncation toolkit for operator-valued matrices with polynomial off-diagonal decay."""

from .blockop import (
    BlockMatrix,
    BlockVector,
    WeightSpec,
    apply,
    block_norm,
    column_pnorm_bound,
    entry_sup,
    involve,
    multiply,
    operator_norm_l2,
    vector_pnorm,
)
from .errors import (
    ContractionError,
    ConvergenceError,
    FitError,
    JaffardKitError,
    NumericError,
    ParameterError,
    ShapeError,
    SingularityError,
)
from .inversion import direct_inverse, inverse_closedness_experiment, neumann_inverse
from .jaffard import algebra_norm_bracket, decay_fit, hermitize, jaffard_norm, random_jaffard
from .pointset import (
    PointSet,
    convolution_constant,
    make_jittered,
    make_lattice,
    neighbor_partition,
    point_sum_constant,
    relsep_count,
    tail_sum,
)
from .spectral import gamma_check, gelfand_radius, radius_comparison, true_radius_selfadjoint

__version__ = "0.1.0"
