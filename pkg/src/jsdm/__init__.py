"""Two-stage (outer/inner) beamforming simulator for FDD massive MIMO with
covariance-based user grouping and graph-based group scheduling."""

from .channel_model import (
    ArrayConfig,
    CovarianceMatrix,
    UserGeometry,
    drop_users,
    eigendecompose,
    one_ring_covariance,
    sample_channel,
    sample_channels,
    ula,
)
from .clustering import (
    AdviceGraph,
    FractionalSolution,
    Partition,
    build_advice_graph,
    cluster_users,
    disagreement_cost,
    dol_similarity,
    exact_cluster,
    pivot_cluster,
    round_distances,
    solve_cluster_lp,
)
from .config import NAMED_CONFIGS, ConfigError, ScenarioConfig, load_config, save_config
from .deterministic_equivalent import (
    FixedPointError,
    FixedPointState,
    asymptotic_sinr,
    deterministic_state,
    group_sir,
    solve_fixed_point,
    user_rate,
)
from .precoding import (
    GroupProfile,
    IllConditionedError,
    InnerPrecoder,
    OuterPrecoder,
    design_outer_precoders,
    effective_channel,
    group_centroid,
    instantaneous_sinr,
    zero_forcing_inner,
)
from .scheduler import (
    AgreementGraph,
    InterferenceGraph,
    ScheduleSet,
    build_interference_graph,
    color_groups,
    eliminate,
    mutual_agreement,
    schedule_groups,
    select_schedule,
)
from .sim_harness import (
    StageError,
    baseline_no_scheduling,
    jain_index,
    run_drop,
    sweep,
    validate_deterministic_equivalent,
)

__version__ = "0.1.0"
