"""Transient-stability toolkit built on the Cartesian loss-frame swing model."""

from .caseio import (Disturbance, RawCase, make_lossless, parse_case,
                     parse_disturbances, serialize_case)
from .network import (LoadSet, NetworkModel, PartitionedAdmittance, VoltageMap,
                      build_grid, build_network_model, categorize_loads,
                      partition_admittance, reduce_to_sensitivities)
from .steady import (InitialState, MachineState, OperatingPoint,
                     apply_disturbance, disturbed_grid, operating_point,
                     post_disturbance_state, solve_power_flow)
from .swing import (LossFrameState, ObservationMetrics, SwingSystem,
                    assemble_system, compute_observations, from_loss_frame,
                    to_loss_frame)
from .analytic import (AnalyticSolution, BasisSet, Spectrum, asymptote,
                       evaluate, evaluate_many, fit_initial_conditions,
                       real_block_spectrum, solve_system, sylvester_basis)
from .validity import (BoundaryEvent, MonitoredRun, ValidityConfig,
                       consistent_reinit, epsilon_tracking, locate_boundary,
                       projection_norms, solve_monitored)
from .assess import (ComCheck, EnergyReport, Verdict, classify, coi_frame,
                     com_check, dm_margin, eigen_condition, split_t)
from .tds import GridDynamics, TdsConfig, rk4_simulate, rk4_step
from .trajectory import (Trajectory, compare_trajectories, export_trajectory,
                         read_trajectory)
from .scenario import Report, ScenarioConfig, run_scenario

__version__ = "0.1.0"
