"""Identification of sparsely interconnected dynamical systems.

The package reduces a network of coupled subsystems with partially measured
signals to the constrained form  minimize f(z, theta)  s.t.  z = A x + b,
theta = E theta0,  and solves it with an alternating-direction scheme that
splits over the subsystems, including a coordinator/worker execution mode
and a closed-loop data simulator for the two reference experiments.
"""

from .errors import (
    BadM,
    ConfigError,
    DimensionMismatch,
    MissingContribution,
    NetidError,
    NotASelection,
    SingularLoop,
    SingularSchur,
    ZeroDegree,
)
from .families import arx_loop, build_family, default_true_theta0, pde_chain
from .models import (
    NodeModel,
    TyingMap,
    build_regressor,
    build_T,
    build_tying_arx,
    build_tying_pde,
    shift,
)
from .simulate import SimConfig, SimData, draw_inputs, draw_noise, simulate
from .solver import (
    AdmmState,
    Problem,
    SolveResult,
    SolverConfig,
    assemble_problem,
    solve,
)
from .topology import (
    NetworkTopology,
    StandardForm,
    build_standard_form,
    find_output_split,
    reconstruct_signals,
    stack_node_signals,
    topology_from_dict,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmState",
    "BadM",
    "ConfigError",
    "DimensionMismatch",
    "MissingContribution",
    "NetidError",
    "NetworkTopology",
    "NodeModel",
    "NotASelection",
    "Problem",
    "SimConfig",
    "SimData",
    "SingularLoop",
    "SingularSchur",
    "SolveResult",
    "SolverConfig",
    "StandardForm",
    "TyingMap",
    "ZeroDegree",
    "arx_loop",
    "assemble_problem",
    "build_family",
    "build_regressor",
    "build_standard_form",
    "build_T",
    "build_tying_arx",
    "build_tying_pde",
    "default_true_theta0",
    "draw_inputs",
    "draw_noise",
    "find_output_split",
    "pde_chain",
    "reconstruct_signals",
    "shift",
    "simulate",
    "solve",
    "stack_node_signals",
    "topology_from_dict",
    "__version__",
]
