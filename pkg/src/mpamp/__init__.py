"""Multi-processor approximate message passing with lossy uplink compression.

Library layout:

    model       problem instances (signal, sensing matrix, noise, row partition)
    denoiser    Bernoulli-Gaussian conditional-mean denoiser and state evolution
    quantizer   mid-tread uniform quantizer + entropy coding (ECSQ)
    ratedist    Blahut-Arimoto rate-distortion curves for the uplink source
    allocation  per-iteration coding-rate selection (back-tracking and DP)
    sim         centralized AMP and the P-processor fusion-center simulation
    cli         experiment harness (`mpamp run/se/allocate/table1`)
"""

__version__ = "0.1.0"

from .model import SignalPrior, ProblemConfig, ProblemInstance, build_instance, empirical_sdr, sample_signal
from .denoiser import EffectiveChannel, SETrace, eta, eta_prime, se_step, se_trajectory
from .quantizer import CodedBlock, QuantizerSpec, ScalarSourceModel, decode, delta_for_mse, delta_for_rate, design, encode, quantize
from .ratedist import DiscreteSource, RDCurve, blahut_arimoto, discretize, distortion_at_rate, rd_curve
from .allocation import AllocationPlan, BTPolicy, DPTables, PlanningContext, bt_step, dp_allocate, f1, plan_to_ecsq
from .sim import IterationTrace, run_centralized, run_mp

__all__ = [
    "SignalPrior", "ProblemConfig", "ProblemInstance", "build_instance", "empirical_sdr", "sample_signal",
    "EffectiveChannel", "SETrace", "eta", "eta_prime", "se_step", "se_trajectory",
    "CodedBlock", "QuantizerSpec", "ScalarSourceModel", "decode", "delta_for_mse", "delta_for_rate",
    "design", "encode", "quantize",
    "DiscreteSource", "RDCurve", "blahut_arimoto", "discretize", "distortion_at_rate", "rd_curve",
    "AllocationPlan", "BTPolicy", "DPTables", "PlanningContext", "bt_step", "dp_allocate", "f1", "plan_to_ecsq",
    "IterationTrace", "run_centralized", "run_mp",
]
