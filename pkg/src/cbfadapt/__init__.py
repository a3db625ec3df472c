"""Input-constrained control barrier functions with online gain adaptation."""

from .adaptation import AdaptationConfig, AdaptationLog, adapt_run, propose_candidates, select_parameter, uncertainty_gate
from .barrier import (
    CandidateBarrier,
    ClassKParams,
    LinearBarrier,
    cbf_condition_holds,
    class_k_eval,
    kcbf_contains,
    lie_derivatives,
    wall_barrier,
)
from .dynamics import DoubleIntegrator, InputBox, PlanarQuadplane, Unicycle, clamp_input, step
from .iccbf import IccbfSpec, eval_constraint, eval_stack, inner_set_margin, kcand_feasible
from .qp_filter import FilterResult, filtered_policy, nominal_pd, safety_filter
from .simulation import Trajectory, simulate, time_to_reach
from .validator import ValidationReport, generate_dataset, validate_horizon, validate_params

__version__ = "0.1.0"
