"""Stochastic Runge-Kutta methods for Stratonovich SDEs with machinery for
exact and near preservation of quadratic invariants."""

from .errors import (
    ConfigError,
    DivergenceError,
    Error,
    NonConvergenceError,
    ParseError,
    SingularMatrixError,
    TreeCapError,
)
from .experiments import StudyResult, loglog_fit, shoelace_area
from .integrator import (
    IterationPolicy,
    JacobianMode,
    StepKind,
    StepStats,
    Trajectory,
    contraction_factor,
    explicit_step,
    fixed_point_qi_bound,
    fixed_point_solve,
    integrate,
    kubo_milstein_step,
    newton_qi_bound,
    newton_solve,
    step,
)
from .problems import (
    SdeSystem,
    cubic_hamiltonian_system,
    invariant_value,
    kubo_exact,
    kubo_system,
)
from .tableau import (
    BUILTIN_NAMES,
    DefectMatrices,
    Tableau,
    builtin_tableau,
    defect_matrices,
    is_exactly_conservative,
    is_explicit,
    parse_tableau,
    satisfies_order_one,
    serialize_tableau,
)
from .trees import (
    ColoredTree,
    ConditionResidual,
    Family,
    canonical_encoding,
    elementary_weight,
    enumerate_trees,
    qi_order,
    residual_table,
    tree_from_text,
    tree_order2,
    tree_to_text,
)
from .wiener import BrownianPath, coarsen, sample_increments, truncate

__version__ = "0.1.0"
