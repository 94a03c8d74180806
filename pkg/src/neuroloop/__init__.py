"""Closed-loop EEG attention adaptation: DSP, IAF, policies, sim, bridge."""

from .adapt import (
    AdaptationDecision,
    AdaptationEngine,
    BandPowerWindow,
    BandTrend,
    Policy,
    Significance,
    StreamState,
    apply_action,
    classify_trend,
    decide,
    relative_change,
)
from .dsp import (
    BandRange,
    ChannelSet,
    EegChunk,
    FilterSpec,
    PsdEstimate,
    StreamingFilter,
    apply_filter,
    band_power,
    common_average_reference,
    design_filter,
    welch_psd,
)
from .iaf import IafEstimate, IndividualBands, derive_bands, estimate_iaf, trim_edges
from .protocol import ClockSync, estimate_offset
from .session import Block, BlockSpec, SessionConfig, SessionPipeline, orchestrate_session
from .sim import Scenario, StateProfile, generate, load_replay, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AdaptationDecision", "AdaptationEngine", "BandPowerWindow", "BandTrend",
    "Policy", "Significance", "StreamState", "apply_action", "classify_trend",
    "decide", "relative_change",
    "BandRange", "ChannelSet", "EegChunk", "FilterSpec", "PsdEstimate",
    "StreamingFilter", "apply_filter", "band_power",
    "common_average_reference", "design_filter", "welch_psd",
    "IafEstimate", "IndividualBands", "derive_bands", "estimate_iaf",
    "trim_edges",
    "ClockSync", "estimate_offset",
    "Block", "BlockSpec", "SessionConfig", "SessionPipeline",
    "orchestrate_session",
    "Scenario", "StateProfile", "generate", "load_replay", "run_scenario",
    "__version__",
]
