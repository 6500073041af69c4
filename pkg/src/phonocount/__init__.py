"""Conditional phonon-number measurement with single photons.

Truncated-Fock-space simulation of a mechanical oscillator read out
photon by photon: an idealized two-outcome interaction-time protocol, a
cascaded source-cavity-detector trajectory model with stochastic
detection times, and a density-matrix variant with mechanical damping.
"""

__version__ = "0.1.0"

from .cascaded import (DetectionRecord, JumpResult, ModelParams,
                       NoCountTrajectory, SubspaceAmplitudes,
                       analytic_dip_time_g0, analytic_rate_g0, apply_jump,
                       detection_rate, evolve_no_count, filter_values,
                       generator_matrix, no_count_probability,
                       no_count_trajectory, rate_decomposition)
from .damped import (ConditionalDensity, DampedJumpResult, DampedTrajectory,
                     MechanicalDensity, apply_jump_damped,
                     damped_no_count_trajectory, detection_rate_damped,
                     evolve_mechanics, evolve_no_count_damped, rearm_source,
                     stepper_error_estimate, thermal_density)
from .errors import (ConfigError, HistoryUnderflowError,
                     ImpossibleOutcomeError, NoDipError, NumericalFailure,
                     StepperError, TruncationError, ZeroRateError)
from .experiment import (CollapseTrace, ExperimentConfig, RateProfileReport,
                         collapse_metrics, rate_profile_report,
                         run_cascaded_collapse, run_damped_sweep,
                         run_jc_protocol)
from .fock import (FockCutoff, MechanicalState, Moments, NumberDistribution,
                   PhaseSpaceGrid, coherent_state, default_cutoff, fock_state,
                   lowering_matrix, number_moments, poisson_distribution,
                   thermal_distribution, wigner_transform, wigner_values)
from .jc import (MeasurementResult, SampledOutcome, apply_jc_measurement,
                 constant_theta_distribution, gaussian_width_estimate,
                 outcome_probability_curve, repeated_conditional_distribution,
                 sample_jc_outcome)
from .sampling import (RateProfile, SamplingWindow, dip_index, dip_time,
                       find_window, refine_dip_time, sample_detection_time)

__all__ = [
    "__version__",
    "ConfigError", "NumericalFailure", "TruncationError",
    "ImpossibleOutcomeError", "HistoryUnderflowError", "NoDipError",
    "ZeroRateError", "StepperError",
    "FockCutoff", "MechanicalState", "NumberDistribution", "Moments",
    "PhaseSpaceGrid", "default_cutoff", "fock_state", "coherent_state",
    "poisson_distribution", "thermal_distribution", "number_moments",
    "lowering_matrix", "wigner_values", "wigner_transform",
    "apply_jc_measurement", "MeasurementResult", "outcome_probability_curve",
    "repeated_conditional_distribution", "constant_theta_distribution",
    "gaussian_width_estimate", "sample_jc_outcome", "SampledOutcome",
    "ModelParams", "SubspaceAmplitudes", "DetectionRecord", "JumpResult",
    "NoCountTrajectory", "generator_matrix", "evolve_no_count",
    "detection_rate", "rate_decomposition", "no_count_probability",
    "analytic_rate_g0", "analytic_dip_time_g0", "apply_jump", "filter_values",
    "no_count_trajectory",
    "ConditionalDensity", "MechanicalDensity", "DampedJumpResult",
    "DampedTrajectory", "thermal_density",
    "rearm_source", "evolve_no_count_damped", "detection_rate_damped",
    "apply_jump_damped", "damped_no_count_trajectory", "evolve_mechanics",
    "stepper_error_estimate",
    "RateProfile", "SamplingWindow", "find_window", "dip_index", "dip_time",
    "refine_dip_time", "sample_detection_time",
    "ExperimentConfig", "CollapseTrace", "RateProfileReport",
    "collapse_metrics", "run_cascaded_collapse", "run_damped_sweep",
    "run_jc_protocol", "rate_profile_report",
]
