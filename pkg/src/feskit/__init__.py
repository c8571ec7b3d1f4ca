"""feskit: iterative equilibrium-seeking algorithms run as sampled-data
feedback controllers, with stability certificates and packaged case studies.
"""

__version__ = "0.1.0"

from .operators import (
    Box,
    NonnegOrthant,
    Polyhedron,
    ProductSet,
    ZeroSet,
    SetValuedOp,
    FbsMetric,
    project,
    resolvent_fbs,
    sqne_probe,
)
from .qp import QpInstance, QpSolution, QpInfeasible, QpMaxIterations, solve_qp
from .ge import (
    GeProblem,
    GameProblem,
    HingePenalty,
    KktNlpProblem,
    NonConvergence,
    SolutionOracle,
    assemble_game_ge,
    licq_check,
    solve_oracle,
    ssosc_check,
)
from .plant import (
    BuildingParams,
    DisturbanceSignal,
    LyapunovData,
    NonHurwitz,
    PlantModel,
    SupplyChainParams,
    build_building,
    build_siso_plant,
    build_supply_chain,
    constant_disturbance,
    integrate_hold,
    lti_lyapunov,
    piecewise_constant_disturbance,
    ramp_disturbance,
    surge_disturbance,
    table_disturbance,
)
from .algorithms import (
    ControllerFault,
    FbsController,
    JnController,
    ProxGradController,
    SqpBuildingController,
    prox_grad_step,
    vanishing_schedule,
)
from .closed_loop import ClosedLoopTrace, LoopConfig, run, tracking_report
from .analysis import (
    GainEstimate,
    StabilityCertificate,
    build_certificate,
    estimate_gain,
    lipschitz_v_quadratic,
    merit_monitor,
    small_gain_lhs,
    small_gain_threshold,
)
from .scenarios import (
    ConfigError,
    HysteresisController,
    Scenario,
    ScenarioResult,
    default_config,
    dumps_config,
    load_config,
    scenario_building,
    scenario_from_config,
    scenario_siso,
    scenario_supply_chain,
)
