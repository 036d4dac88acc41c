"""Simulation laboratory for the spatial Lambda-Fleming-Viot process with selection."""
from .errors import ConfigError, DomainError, InputError, ResolutionError
from .geometry import TorusDomain, ball_intersection_volume, ball_volume, torus_distance
from .events import (EventKind, EventModel, FixedRadius, ReproductionEvent, StableRadii,
                     event_stream, sample_event, sample_stable_radius, total_event_rate)
from .scaling import (KernelSpec, ScalingParams, apply_fractional_generator, gamma_R,
                      levy_symbol, phi_kernel, scaling_params)
from .forward import (BallIndicator, CosineMode, ForwardState, GaussianBump, apply_neutral_event,
                      apply_selective_event, local_average, rescaled_config, run_forward)
from .dual import (DualState, apply_dual_event, propose_covering_event, rescaled_dual_config,
                   run_dual)
from .limits import (LimitDualConfig, PdeConfig, simulate_limit_dual, solve_fkpp,
                     solve_fkpp_stochastic_1d, solve_fractional_fkpp)
from .analysis import McReport, averaging_gap, duality_check, lineage_msd, qv_estimate

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DomainError", "InputError", "ResolutionError",
    "TorusDomain", "ball_intersection_volume", "ball_volume", "torus_distance",
    "EventKind", "EventModel", "FixedRadius", "ReproductionEvent", "StableRadii",
    "event_stream", "sample_event", "sample_stable_radius", "total_event_rate",
    "KernelSpec", "ScalingParams", "apply_fractional_generator", "gamma_R",
    "levy_symbol", "phi_kernel", "scaling_params",
    "BallIndicator", "CosineMode", "ForwardState", "GaussianBump", "apply_neutral_event",
    "apply_selective_event", "local_average", "rescaled_config", "run_forward",
    "DualState", "apply_dual_event", "propose_covering_event", "rescaled_dual_config", "run_dual",
    "LimitDualConfig", "PdeConfig", "simulate_limit_dual", "solve_fkpp",
    "solve_fkpp_stochastic_1d", "solve_fractional_fkpp",
    "McReport", "averaging_gap", "duality_check", "lineage_msd", "qv_estimate",
]
