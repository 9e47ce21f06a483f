"""Beam-domain channel estimation for spatially non-stationary massive MIMO."""

from .channel import (
    ArrayGeometry,
    ChannelGenParams,
    ChannelRealization,
    ClusterSet,
    PathComponent,
    VisibilityRegion,
    array_ctf,
    beam_element_oracle,
    beam_transform,
    dirichlet_kernel,
    inverse_beam_transform,
    leakage_envelope,
    realize,
    sample_clusters,
)
from .errors import BeamEstError, ConfigError
from .estimators import (
    BdsSampConfig,
    EstimateReport,
    asd,
    bds_samp,
    bomp,
    nmse,
    omp,
    oracle_ls,
    oracle_ls_best,
    samp,
)
from .harness import ExperimentConfig, SweepResult, emit_csv, parse_config, run_sweep
from .measurement import MeasurementModel, Observation, bernoulli_matrix, coherence, observe

__version__ = "0.1.0"
