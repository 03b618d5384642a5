from .gaussian import (
    GaussianSSM,
    KalmanResult,
    LinearGaussianOracleConfig,
    NonlinearSSMConfig,
    gamma_fn,
    guided_moments,
    kalman_filter,
    kalman_smoother,
    linear_gaussian,
    nonlinear_ssm,
)
from .kinetics import LV_CONSISTENT_C2_BOUNDS, LV_TRUE_THETA, PKY_TRUE_THETA, MarkovJumpHMM, lv_model, pky_model
from .ssa import (
    MAX_EVENTS,
    ReactionNetwork,
    SSAExplosionError,
    lotka_volterra_network,
    prokaryotic_full_network,
    prokaryotic_network,
    ssa_simulate,
)
from .summaries import read_trajectory_csv, summarize, trajectory_csv, write_trajectory_csv
