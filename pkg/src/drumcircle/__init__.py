"""Networked 2:3 polyrhythmic tapping task at desk scale.

Synthetic sensorimotor agents play the task over simulated (or real UDP)
links; the analysis pipeline scores timing constancy with a Bayesian IOI
tracker bank and quantifies embodied coordination through postural sway
and wavelet coherence.
"""

from .agents import AgentParams, AgentState, SwayParams, TapAgent, simulate_dyad, synthesize_sway
from .blistener import (
    BListenerParams,
    PredictionReport,
    TrackerState,
    init_trackers,
    joint_score,
    score_stream,
    tracker_step,
)
from .errors import (
    ConfigError,
    DataError,
    DrumCircleError,
    GeometryError,
    InsufficientDataError,
    ProtocolError,
    SessionError,
    ValidationError,
)
from .movement import (
    BandSpec,
    CoherenceMatrix,
    MarkerFrame,
    SwaySeries,
    band_coherence,
    extract_transparent_segments,
    load_marker_series,
    postural_position,
    qom,
    wavelet_coherence,
)
from .net import (
    ClockSyncState,
    LinkConfig,
    Message,
    MsgType,
    UdpTransport,
    decode_message,
    encode_message,
    estimate_clock_offset,
    link_deliver,
)
from .rhythm import (
    BeatSchedule,
    Background,
    CycleOutcome,
    InstructionOnset,
    RhythmSpec,
    TapEvent,
    TransparencyState,
    backing_track_schedule,
    build_instruction_grid,
    evaluate_cycle,
    match_tap,
    update_transparency,
)
from .session import AgentEndpoint, TrialMeta, UdpRemoteEndpoint, run_session
from .trialio import (
    Condition,
    RunConfig,
    TrialRecord,
    export_long_csv,
    load_run_config,
    read_trial,
    write_trial,
)
from .analysis import analyze_directory, analyze_record

__version__ = "0.1.0"
