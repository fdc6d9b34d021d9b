"""Seedable simulator and two-node harness for a single-basis
polarization-encoding QKD link over fiber."""

from polqkd.errors import (
    ContractViolation,
    InvalidParameter,
    ProtocolAbort,
    UndefinedQBER,
)
from polqkd.optics import (
    AlignmentError,
    PolarizationPhase,
    PowerLevel,
    StateAmplitudes,
    apply_attenuation,
    fiber_loss_db,
    pbs_h_probability,
    pbs_v_probability,
    phase_for_voltage,
    poisson_tail,
    sample_poisson,
    state_amplitudes,
)
from polqkd.devices import (
    ChannelSpec,
    DetectorSpec,
    DriftProcess,
    DriftWalk,
    ModulatorSpec,
    OpticalPulse,
    SourceSpec,
    detect_counts,
    drift_angle,
    expected_h_rate,
    im_transmission,
    pm_apply,
)
from polqkd.timing import (
    Channel,
    ClockSpec,
    CountSample,
    TagEvent,
    VoltageSchedule,
    fpga_schedule,
    gate_by_mcss,
    mcss_edges,
    ttu_bin,
)
from polqkd.protocol import (
    ClassifiedBit,
    ClassifierThresholds,
    Decision,
    SessionConfig,
    SessionReport,
    alice_run,
    bob_run,
    calibrate_thresholds,
    classify,
    estimate_qber,
    run_session,
)

__version__ = "0.1.0"
