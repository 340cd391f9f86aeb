"""Total-power minimization for STAR-RIS assisted uplink NOMA."""

__version__ = "0.1.0"

from .kernels import BACKEND
from .model import (
    ChannelRealization,
    SideState,
    Solution,
    SystemConfig,
    dbm_to_watts,
    draw_channels,
    effective_gain,
    path_loss,
    sinr_and_rate,
    solution_rates,
    watts_to_dbm,
)
from .sdp import SdpOptions, SdpProblem, SdpSolution, embed_hermitian, extract_complex, solve_sdp
from .altop import (
    AltOpOptions,
    InfeasibleError,
    MonotonicityError,
    PenaltyOptions,
    lambda_bounds,
    optimal_powers,
    p_altop,
    psum_min_of_lambda,
    qos_coefficient,
    time_slot_search,
)
from .baselines import BaselineKind, run_eq_paltop, run_fixed_paltop, run_ris_oma
from .experiments import ExperimentSpec, SpecError, load_spec, run_experiment
