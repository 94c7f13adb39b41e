"""Mean-field Schrodinger bridge solver with Gaussian-mixture boundaries.

Steers the state distribution of a linear McKean-Vlasov system between two
Gaussian mixtures with minimum expected control energy, optionally under
probabilistic half-space constraints, and validates the mixture policy by
large-population simulation.
"""

from .chance import ChanceSpec, HalfSpace, LinearizedConstraint, Obstacle, Route
from .conic import ConicProgram, ConicSolution, Tolerances
from .dynamics import LTVSystem, TimeGrid, TransitionBundle
from .errors import (ConditioningError, ConfigurationError, ControllabilityError,
                     DivergenceError, InfeasibleProblemError, InputError,
                     MfsbError, NumericalDomainError, SchemaError,
                     SolverFailureError)
from .gaussmix import Gaussian, GaussianMixture
from .meanfield import (MfsbResult, Scenario, alternate_optimize,
                        problem1_system, problem2_system,
                        solve_constrained_fixed_plan, solve_scenario,
                        solve_unconstrained)
from .mixture import MixtureSolution, bound_and_gap, flow_density, policy_eval
from .ocs import (ConditionalPolicy, OcsProblem, build_ocs_sdp,
                  mean_feedforward_closed_form, solve_ocs, w2_oracle)
from .sim import SwarmMetrics, SwarmRun, estimate_metrics, simulate_swarm
from .transport import TransportPlan, marginals, solve_plan

__version__ = "0.1.0"
