"""Monte Carlo construction and verification of measure solutions of quadratic BSDEs."""
from ._backend import NAME as BACKEND
from .closedform import (CustomFunctional, EndpointFunctional, HittingAffine, SquareEndpoint,
                         classify_scenario, explicit_log_solution, first_solution, laplace_tau,
                         mixed_solution, scenario_report, second_solution, square_endpoint_solution)
from .errors import (DivergingMomentError, DomainError, ImportanceDegeneracyError, InvalidArgument,
                     NonConvergenceError)
from .generators import LinearBounded, LipschitzCustom, Quadratic, check_H1, constants_report
from .iterate import DiagnosticsConfig, iterate_measure_solution
from .paths import Barrier, build_grid, sample_first_passage, simulate_ensemble
from .regression import QuadratureEngine, RegressionEngine
from .solution import SolutionPath
from .verify import (MeasureReport, bsde_residual, explosion_criterion, girsanov_weight,
                     hitting_measure_report, martingale_expectation)

__version__ = "0.1.0"


def schema_path(name):
    """Location of a shipped JSON schema: ``measure_report``, ``constants`` or ``scenario``."""
    from importlib.resources import files
    return files(__name__) / "schemas" / f"{name}.schema.json"
