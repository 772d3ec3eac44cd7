"""High-order (tensor) methods for strongly monotone variational inequalities
and strongly-convex-strongly-concave saddle point problems."""

from tensorvi.core import (
    BudgetExceeded,
    CallKind,
    InnerSolveFailed,
    IterationRecord,
    Phase,
    PointZ,
    RunTrace,
    SolverParams,
    Status,
    bregman,
    norm_z,
    weighted_average,
)
from tensorvi.oracle import (
    CountingOracle,
    SaddleOracle,
    TaylorModelF,
    duality_gap_exact,
    fd_check,
    merit,
    operator_f,
    taylor_f_eval,
)
from tensorvi.problems import (
    ProblemInstance,
    QuadraticSaddle,
    SmoothCoupledSaddle,
    estimate_r0,
    generate_instance,
    quadratic_exact_solution,
    smooth_reference_solution,
)
from tensorvi.homp import find_gamma, homp_run, implicit_step
from tensorvi.crn import CubicSubproblem, crn_run, crn_step, solve_cubic_subproblem
from tensorvi.drivers import (
    RegularizedOracle,
    RestartSchedule,
    gradnorm_solve,
    hybrid_solve,
    restarted_homp,
    tensor_step,
)

__version__ = "0.1.0"
