"""Standoff tracking of a moving target with a quadrotor.

Lyapunov vector-field guidance plans circling reference trajectories;
condensed linear/nonlinear MPC tracks them under attitude and rotor limits;
the MPC law can be distilled into a small feed-forward network with a
feasibility projection and an integral range-bias corrector; a deterministic
harness closes the loop and benchmarks solver-versus-network latency.
"""

from .errors import (ConfigError, FaultError, GuidanceSingularityError,
                     InfeasibleHoverError, ModelFormatError,
                     SingularAttitudeError, TrainingDivergedError)
from .guidance import (ImState, ReferenceTrajectory, TargetState,
                       TrackingPattern, im_update, lgv_velocity,
                       plan_trajectory, radial_tangential, sat, scalar_field,
                       unit_gradient)
from .mpc import (CondensedQp, LinearizedMpc, MpcConfig, NonlinearMpc,
                  assemble_condensed, assemble_constraints, build_condensed_qp,
                  build_offsets, lmpc_control, nmpc_control, rollout,
                  rollout_cost)
from .policy import (Dataset, MlpModel, RandomizationBounds, TrainReport,
                     collect_samples, fidelity, load_model, mlp_forward,
                     save_model, train)
from .projection import (FeasibleSet, build_feasible_set, project_halfspace,
                         project_policy_output)
from .qp import QpOptions, QpSolution, brute_force_oracle, solve
from .quad import (Linearization, QuadParams, UavState, continuous_dynamics,
                   hover_input, linearize, rotation_matrix, step_euler,
                   thrust_torque)
from .sim import (NetworkPolicy, PidBaseline, PidGains, Scenario, SimRecord,
                  bench_latency, make_probes, preset_scenario, run_closed_loop,
                  steady_state_metrics, summary)

__version__ = "0.1.0"
