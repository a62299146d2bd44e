"""Optimal control by evolving a feasible trajectory along a descent flow in virtual time."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CyclingError,
    DefinitionError,
    DomainError,
    EvaluationError,
    StaleTableError,
    StepFailure,
    ValidationError,
    VemocError,
)
from .evolution import (  # noqa: E402
    ActiveSetState,
    EvolutionOptions,
    GainConfig,
    assemble_system,
    control_variation,
    detect_active,
    evolution_rhs,
    solve_multipliers,
    terminal_time_variation,
    working_set_loop,
)
from .grid import TimeGrid, interpolate, node_motion_term, quadrature  # noqa: E402
from .integrator import (  # noqa: E402
    EvolutionHistory,
    IntegratorConfig,
    evolve,
    rk45_step,
    stopping_check,
)
from .problem import (  # noqa: E402
    OcpDefinition,
    TrajectoryState,
    audit_derivatives,
    evaluate_dynamics,
    performance_index,
)
from .problems import PROBLEM_IDS, builtin_problem  # noqa: E402
from .sweeps import (  # noqa: E402
    TransitionTable,
    adjoint_sweep,
    backward_transition_sweep,
    build_table,
    compute_pu,
    propagate_variation,
)
from .verify import (  # noqa: E402
    ConstraintClass,
    CycloidSolution,
    LqSolution,
    ResidualReport,
    classify_constraint,
    costate_by_backward_integration,
    cycloid_oracle,
    lq_oracle,
    lq_oracle_arrays,
    optimality_residuals,
    reconstruct_costate,
)
