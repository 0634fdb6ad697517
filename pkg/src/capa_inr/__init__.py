"""Continuous-aperture-array downlink MIMO beamforming with implicit neural
representations (BeaINR, CoefINR) and numerical baselines."""
from .baselines import discretize_channel, fourier_solve, spda_solve, svd_waterfill, waterfill, wmmse_solve
from .channel import channel_matrix, dyadic_green, scalar_channel
from .config import RunConfig
from .errors import (CapaError, ConfigError, CorruptCheckpointError, DegenerateBeamformerError, NumericalError,
                     NumericalPSDError, SingularityError)
from .geometry import Aperture, PhysicalConfig, UserRegion, stream_count
from .inr import BEAINR, COEFINR, INRModel, NetworkConfig, SamplingConfig, SystemSetup, TrainConfig, make_model, train
from .integration import QuadratureGrid, gl_grid, gl_rule, sobol_grid
from .objective import (BeamformerSamples, beamformer_se, normalize_power, project_onto_channel_subspace,
                        spectral_efficiency, transmit_power)

__version__ = "0.1.0"
