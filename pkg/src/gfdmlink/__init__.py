"""Link-level simulator for uplink multiuser SIMO GFDM.

Semi-blind joint estimation of per-user CFOs, channels and transmit IQ
imbalances via the noise subspace, stacked zero-forcing detection, an
approximate CFO CRLB, and a Monte-Carlo campaign harness with a FastAPI
service and thin CLI on top.
"""

from .errors import (ConfigurationError, DetectionError, FeasibilityError,
                     GfdmLinkError, InputError, NumericalError,
                     SingularOperatorError)
from .waveform import (AssignmentPlan, ModulationMatrix, SystemConfig,
                       build_assignment, build_modulation_for,
                       build_modulation_matrix, build_prototype_filter,
                       image_subcarrier, modulate_symbol, rectangular_prototype)
from .impairments import (FrameTruth, ReceivedFrame, UserImpairment,
                          build_cfo_matrix, build_channel_matrix,
                          cfo_included_cir, cfo_phase_ramp, draw_channel,
                          draw_impairments, iq_params, make_user_impairment,
                          mixing_operators, synthesize_received)
from .estimator import (LOG_DET, MIN_EIGENVALUE, CfoCostEvaluator,
                        EstimationResult, PilotLayout, SubspaceDecomposition,
                        assemble_equivalent_channels, blind_channel, cfo_cost,
                        cfo_cost_curve, compute_subspace_dims, decompose_frame,
                        estimate_cfo, estimate_frame, estimate_ambiguity_iq,
                        noise_subspace, plan_pilots, sample_covariance)
from .detector import (DetectionOperators, build_detection_operators,
                       detect_frame, detect_symbol, qpsk_demap, qpsk_map)
from .crlb import crlb_cfo, fim_frame, fim_per_symbol, jacobian_per_symbol
from .harness import (CampaignConfig, CampaignResult, SummaryRow, TrialRecord,
                      compute_ber, contiguous_block_sets, default_system,
                      genie_result, interleaved_sets, mse_cfo, mse_channel_iq,
                      outage_probability, run_campaign, trial_seed)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
