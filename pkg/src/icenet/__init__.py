"""Adaptive implicit-equilibrium channel estimation lab.

A numpy/scipy implementation of pilot-based OFDM channel estimation with
a weight-tied equilibrium network solved by Anderson acceleration, the
classical baselines it is measured against, and the synthetic time-varying
channel that feeds everything.
"""

from .baselines import (LmmseCalibration, calibrate_lmmse, estimate_ft,
                        estimate_lmmse, estimate_ls_li, nmse)
from .block import (IEBConfig, IEBParams, config_param_count, forward,
                    init_params, load_params, param_count, save_params,
                    vjp_theta, vjp_z)
from .channel import (ChannelConfig, ChannelFrame, freq_correlation,
                      generate_dataset, generate_frame, max_doppler_hz,
                      time_correlation)
from .errors import (ConfigurationError, DatasetFormatError, DivergenceError,
                     IcenetError, MissingArtifactError, NumericError,
                     ShapeError)
from .evaluate import (EvalRecord, RunConfig, run_depth_comparison,
                       run_iteration_histogram, run_snr_sweep, run_table1)
from .explicit import (ECENetConfig, ecenet_forward, ecenet_param_count,
                       init_ecenet, load_ecenet, save_ecenet)
from .ofdm import (FrameSample, PilotPattern, build_samples,
                   complex_to_planes, interpolate_to_grid, load_dataset,
                   observe_pilots, planes_to_complex, save_dataset)
from .solver import (BatchSolveResult, RetainedTensorCounter, SolveConfig,
                     SolveResult, anderson_solve, backward_config,
                     deq_backward, deq_forward, deq_forward_batch,
                     ift_adjoint_solve, picard_solve)
from .training import TrainConfig, TrainReport, lr_at, split_dataset, train

__version__ = "0.1.0"
