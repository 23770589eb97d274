"""Multiband OFDM ranging: simulation, subband combination and coherence metrics."""

from .combine import (
    OmpConfig,
    OmpResult,
    RangeGrid,
    RangeProfile,
    SpbpConfig,
    bp_combine,
    dirichlet,
    find_lobes,
    omp,
    omp_combine,
    pslr,
    raf,
    range_profile,
    spbp_profile,
    spbp_search_k1,
    spbp_select_k0,
)
from .estimators import BackprojectionRanger, OmpRanger, SpbpRanger
from .exceptions import (
    InvalidArgumentError,
    NoCandidateError,
    SingularityError,
    UndefinedPhaseError,
    UndefinedPSLRError,
)
from .metrics import (
    CoherenceReport,
    DetectionSet,
    PeakDetectConfig,
    align_rigid,
    coherence_sweep,
    detect_peaks,
    empw,
    mpc,
    nmpm,
    ospa,
)
from .preproc import Cir, calibrate, cfr_to_cir, estimate_cfr
from .scene import Isotropic, PhaseDrift, RandomPhase, ScatteringCenter, Scene
from .subband import (
    SPEED_OF_LIGHT,
    AllocationSet,
    OfdmParams,
    Subband,
    SubbandPlan,
    gpp_fr3_allocations,
    make_contiguous_sweep,
    nominal_resolution,
    plan_from_allocations,
    sweep_duration,
    total_aperture,
)
from .synth import (
    Cfr,
    ClockModel,
    HardwareResponse,
    NoiseModel,
    ideal_cfr,
    phase_noise_std,
    simulate_sweep,
)

__version__ = "0.1.0"
