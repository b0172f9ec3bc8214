"""Event-camera theremin playground: spiking-flavored hand tracking,
graded-spike transport, and a fully simulated robot show."""

from .events import (
    DepthFrame,
    Event,
    EventStream,
    Frame,
    Hand,
    Resolution,
    Trajectory,
    TrajectorySample,
    decode_evt1,
    depth_mask,
    encode_evt1,
    frame_accumulate,
    frame_downsample,
    synth_hand_events,
    waving_trajectory,
)
from .harness import (
    RunReport,
    SimConfig,
    compute_rtf,
    load_config,
    power_ratio,
    protocol_bench,
    run_show,
    single_bit_fuzz,
)
from .neural_field import (
    Field,
    FieldParams,
    KernelParams,
    Peak,
    detect_peaks,
    field_step,
    make_kernel,
)
from .orchestrator import (
    ControllerState,
    ControlSignals,
    Intention,
    Module,
    Orchestrator,
    ShowState,
    control_signals,
    transition,
)
from .sigma_delta import (
    DenseNet,
    GradedSpike,
    Layer,
    SdState,
    SigmaDeltaNetwork,
    delta_encode,
    sd_forward,
    sigma_decode,
)
from .theremin import (
    ControlPoint,
    PitchCalibration,
    PixelGeometry,
    Score,
    calibrate_pitch,
    hands_to_control,
    note_freq,
    parse_score,
    render_trace,
    score_to_trajectory,
    write_wav,
)
from .tracker import HandEstimate, HandLabel, HandPoint, HandTracker, TrackerConfig
from .transport import (
    ChannelConfig,
    SafeFrame,
    SafeReceiver,
    channel_transmit,
    raw_decode,
    raw_encode,
    safe_decode,
    safe_encode,
)

__version__ = "0.1.0"
