"""RIS-aided unsourced random access: coupled tensor detection with automatic
active-device-count learning, reflection design, and a Monte-Carlo harness."""

from .channel import (ChannelRealization, GeometryConfig, build_dictionary,
                      sample_device_channel, sample_realization, sample_ris_bs,
                      steering_bs, steering_ris)
from .constellation import (SubConstellation, SymbolTensor, UndecodableSignal,
                            build_subconstellation, demap_factor, encode_bits,
                            export_codebook, import_codebook)
from .ctad import (CtadConfig, CtadDivergence, DetectionResult, PosteriorState,
                   compute_elbo, gaussian_fuse, identifiability_check,
                   init_posterior, matrix_normal_moments, prune_columns,
                   run_ctad)
from .metrics import nmse_metric, per_metric
from .outercode import StitchResult, TreeCodeConfig, split_and_encode, stitch
from .phasedesign import (PhasePlan, SdpSolution, effective_matrix,
                          gaussian_randomization, random_phase, solve_phase_sdp)
from .harness import (SystemConfig, TrialRecord, config_hash, parse_config,
                       run_trial, simulate, sweep)
from .tensors import hadamard, khatri_rao, kruskal, outer_rank1, refold, unfold, vec

__version__ = "0.1.0"
