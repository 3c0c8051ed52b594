"""Stabilizing NMPC for a planar drift-nonholonomic vehicle.

The package splits into the nominal model (:mod:`driftmpc.dynamics`), the
terminal-set geometry (:mod:`driftmpc.terminal_set`), the auxiliary
stabilizing controllers (:mod:`driftmpc.auxiliary`), the closed-form
terminal cost and its certification (:mod:`driftmpc.terminal_cost`), the
multiple-shooting transcription (:mod:`driftmpc.ocp`), the nonlinear-program
solver (:mod:`driftmpc.solver`), the receding-horizon loop
(:mod:`driftmpc.mpc`), and the experiment CLI (:mod:`driftmpc.cli`).
"""

from .dynamics import (
    DEFAULT_LIMITS,
    Control,
    InputLimits,
    State,
    Trajectory,
    dynamics_rhs,
    rk4_step,
    simulate,
    wrap_angle,
)
from .terminal_set import (
    Branch,
    TerminalMembership,
    TerminalSetState,
    TerminalSetViolation,
    classify_terminal,
    reduce_state,
    reduced_rhs,
    reference_pitch,
)
from .auxiliary import (
    AuxPhase,
    AuxTimestamps,
    aux_control,
    best_branch,
    lemma1_timestamps,
    make_aux_policy,
    phase_plan,
)
from .terminal_cost import (
    StabilityReport,
    TerminalCostGradient,
    TerminalCostValue,
    terminal_cost,
    terminal_cost_gradient,
    terminal_cost_oracle,
    terminal_cost_time_derivative,
    verify_stability_conditions,
)

__all__ = [
    "DEFAULT_LIMITS",
    "Control",
    "InputLimits",
    "State",
    "Trajectory",
    "dynamics_rhs",
    "rk4_step",
    "simulate",
    "wrap_angle",
    "Branch",
    "TerminalMembership",
    "TerminalSetState",
    "TerminalSetViolation",
    "classify_terminal",
    "reduce_state",
    "reduced_rhs",
    "reference_pitch",
    "AuxPhase",
    "AuxTimestamps",
    "aux_control",
    "best_branch",
    "lemma1_timestamps",
    "make_aux_policy",
    "phase_plan",
    "StabilityReport",
    "TerminalCostGradient",
    "TerminalCostValue",
    "terminal_cost",
    "terminal_cost_gradient",
    "terminal_cost_oracle",
    "terminal_cost_time_derivative",
    "verify_stability_conditions",
]

__version__ = "0.1.0"
