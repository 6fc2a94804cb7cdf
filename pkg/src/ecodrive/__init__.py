"""Energy-minimal velocity planning for heavy vehicles over long horizons.

The package pre-optimises gear selection offline on a kinetic-energy/force
grid, fits convex surrogates of the powertrain, and plans speed online with
a real-time-iteration SQP inside an MPC loop whose travel-time budget is
enforced through a Newton-updated time price.
"""

from .errors import (ConstructionError, DomainError, EcodriveError, FitError,
                     InfeasibleError, ParseError, RouteRangeError, SolverError)
from .model import (Control, RoadProfile, State, Trajectory, VehicleParams,
                    accel_limits, accel_of, energy_floor, kinetic_energy,
                    resistive_forces, speed_of, time_slope, traction_force)
from .mpc import (CostateEstimator, HorizonController, MpcConfig, MpcResult,
                  Plan, brake_norm, estimate_lambda_max, heuristic_trajectory,
                  heuristic_velocity, initial_state, max_travel_time,
                  plan_to_trajectory, rms_jerk, rms_jerk_space, run_mpc,
                  solve_route, trajectory_metrics)
from .ocp import (HorizonGrid, LinearizedLimits, QpLayout, QpProblem,
                  StageCostCoeffs, assemble_qp, discretized_cost,
                  linearize_sqrt_term, linearized_limits, stage_cost)
from .powertrain import (ActuatorMap, FittedForceLimits, ForceLimitFit,
                         GearMap, PowerFit, TabulatedForceLimits, WheelTables,
                         fit_force_limits, fit_power_poly, optimise_gear_map,
                         power_fit_samples, solve_lp_2var, synth_actuator_map,
                         wheel_transform)
from .qp import QpSolution, kkt_residuals, solve as solve_qp
from .routes import ingest_road, synthetic_route

__version__ = "0.1.0"
