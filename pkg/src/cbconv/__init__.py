"""Control-bounded A/D conversion toolkit."""

__version__ = "0.1.0"

from .model import (AnalogSystem, ChainSpec, StabilityVerdict, atf, build_chain,
                    check_stability, dither_feedback_augment, gamma_max)
from .xfer import (MismatchInputModel, NoisePrediction, TransferPoint, bandwidth,
                   eta_from_osr, ntf, predict_conversion_noise, predict_mismatch_noise,
                   predict_snr, predict_thermal_noise, sigma2_y_white, stf)
from .design import (FilterCoefficients, ParallelForm, care_hamiltonian, care_solve,
                     design_filter, discretize, parallelize, solve_w)
from .sim import (ControlTrace, InputSignal, Mismatch, NoiseInjection, SimReport,
                  replay, simulate)
from .estimate import (EstimateTrace, StreamingMixedEstimator, estimate_batch,
                       estimate_mixed, estimate_parallel, oracle_smoother)
from .analyze import (SpectrumReport, SweepPoint, limit_cycle_check, psd, snr_in_band,
                      snr_sweep, spectral_slope, tone_fit)

__all__ = [s for s in dir() if not s.startswith("_")]
