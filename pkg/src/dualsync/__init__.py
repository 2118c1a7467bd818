"""Dual-carrier remote carrier-phase synchronization: simulation and analysis."""

from .channel import CarrierPlan, ChannelLeg, leg_step, prop_phase, sigma_from_snr
from .config import ConfigError, ScenarioConfig, parse_config
from .linear_analysis import (
    RationalDelayTF,
    asym_error,
    bode,
    delay_margin,
    doppler_offset,
    dual_loop_tfs,
    gc_tf,
    single_loop_tfs,
)
from .nodes import (
    DivergenceError,
    FollowerState,
    MasterState,
    Scenario,
    ScenarioResult,
    detect_ambiguity_jumps,
    follower_step,
    master_step,
    run_scenario,
)
from .oscillator import (
    MaskFitError,
    NoiseMask,
    TwoStateClock,
    TwoStateParams,
    clock_step,
    fit_two_state,
    scale_to_rf,
    synthesize_phase,
)
from .pll import LoopConfig, LoopUnit, closed_tf, controller_step, discriminate, nco_step, wrap_phase
from .spectral import PsdEstimate, cheb_window, decimate, psd_estimate

__version__ = "0.1.0"
