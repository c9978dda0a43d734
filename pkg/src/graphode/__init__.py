"""Latent graph ODE models for multi-agent dynamic systems.

Learns continuous multi-object dynamics from irregularly-sampled,
partially-observed trajectories: a temporal-graph encoder infers a
posterior over latent initial states, a graph-coupled neural ODE evolves
them, and a Gaussian decoder emits observations at arbitrary times.
"""

from .autodiff import Parameter, Tensor, backward, grad_check, no_grad
from .data import (Dataset, InteractionGraph, ObservationSet, Sample,
                   TrajectorySet, load_dataset, save_dataset)
from .encoder import VARIANTS, EncoderParams, encode_all, encode_graph
from .evaluation import (ExperimentSpec, MseReport, evaluate,
                         run_experiment_matrix)
from .model import LatentDynamicsModel, ModelConfig
from .ode_model import (DecoderParams, OdeFuncParams, PairSet, decode,
                        ode_func, rk4_solve, sample_trajectories)
from .simulate import (SimConfig, generate_dataset, leapfrog, simulate,
                       subsample_irregular)
from .tasks import (TaskSplit, make_extrapolation_split,
                    make_interpolation_split, training_split)
from .temporal_graph import (TemporalGraph, build_temporal_graph,
                             temporal_encode, window_threshold)
from .training import (Adam, ElboReport, TrainConfig, elbo, kl_diag_gaussian,
                       rotate_observations, train)

__all__ = [
    "Adam", "Dataset", "DecoderParams", "ElboReport", "EncoderParams",
    "ExperimentSpec", "InteractionGraph", "LatentDynamicsModel", "ModelConfig",
    "MseReport", "ObservationSet", "OdeFuncParams", "PairSet", "Parameter",
    "Sample", "SimConfig", "TaskSplit", "TemporalGraph", "Tensor",
    "TrainConfig", "TrajectorySet", "VARIANTS", "backward",
    "build_temporal_graph", "decode", "elbo", "encode_all", "encode_graph",
    "evaluate", "generate_dataset", "grad_check", "kl_diag_gaussian",
    "leapfrog", "load_dataset", "make_extrapolation_split",
    "make_interpolation_split", "no_grad", "ode_func", "rk4_solve",
    "rotate_observations", "run_experiment_matrix", "sample_trajectories",
    "save_dataset",
    "simulate", "subsample_irregular", "temporal_encode", "train",
    "training_split", "window_threshold",
]

__version__ = "0.1.0"
