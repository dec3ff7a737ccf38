"""Solver and verifier for discounted infinite-horizon control problems.

Problem: maximize ``int exp(-theta t) u(c, x) dt`` subject to
``c + x' = f(x, t)`` and ``x >= 0``.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .checks import (
    CheckRecord,
    CheckReport,
    ScalingCertificate,
    builtin_certificate,
    check_basic,
    check_f_concavity_and_cone,
    check_H_concavity,
    check_scaling_inequality,
    check_scaling_on_path,
    scaled_consumption,
    scaling_gap_W,
    tail_integral_estimate,
)
from .expr import DualValue, eval_with_derivs, format_expr, parse
from .hamiltonian import MultiplierPath, eval_LGH, foc_residuals, multiplier_from_path
from .oracle import (
    DiscretizedProblem,
    OracleSolution,
    backward_induction,
    compare_objectives,
    oracle_path,
)
from .problem import (
    AdmissiblePath,
    ProblemSpec,
    feasibility_check,
    load_spec,
    make_spec,
    template_growth,
    template_linear_wealth,
)
from .solver import (
    ShootingConfig,
    ShootingResult,
    SteadyState,
    Trajectory,
    find_steady_state,
    integrate,
    linearize,
    saddle_path_backward,
    shoot,
)
from .verify import (
    Certificate,
    NecessaryReport,
    certify_sufficient,
    closed_form_example1,
    estimate_tvc,
    verify_necessary,
)
