"""Suction-compensated on-manifold MPC for quadrotors near vertical walls."""

from .accel import NUMBA_ENABLED
from .controller import (
    MpcConfig,
    MpcController,
    MpcPlan,
    MpcStepResult,
    PidConfig,
    PidController,
    ReferenceTrajectory,
    build_mpc_graph,
    mpc_step,
    pid_step,
)
from .dynamics import ControlInput, VehicleParams, drag_force_body, propagate, state_derivative
from .factors import (
    NoiseParams,
    control_limit_residual,
    control_rate_residual,
    dynamics_covariance,
    dynamics_jacobians,
    dynamics_residual,
    dynamics_weight,
    reference_residual,
)
from .identification import IdResult, IdSample, InsufficientExcitationError, identify
from .manifold import (
    InvalidRotationError,
    State,
    skew,
    so3_exp,
    so3_log,
    state_boxminus,
    state_boxplus,
)
from .sim import (
    Metrics,
    SimConfig,
    SimLog,
    TrajectorySpec,
    apply_actuator_noise,
    compute_metrics,
    make_trajectory,
    simulate,
    wall_plane,
)
from .solver import LmOptions, Problem, SingularSystemError, SolveReport, linearize, lm_solve
from .suction import (
    NegativeDistanceError,
    PlaneFrame,
    SuctionParams,
    rotor_position_in_plane,
    suction_force_world,
    suction_scalar,
)

__version__ = "0.1.0"
