"""Attention-based multi-dimension EEG classifier toolkit.

Converts raw multichannel EEG into temporal-spectral-spatial feature tensors,
trains a three-block attention model with a built-in tape autodiff engine and
AdamW, explains trained models with gradient-weighted channel attribution,
and drives cross-validated experiments (ablations, channel-reduction sweeps)
from a CLI.
"""

__version__ = "0.1.0"

from .engine import AdamW, OptimizerConfig, Tape, Tensor
from .errors import AmdetError, DataError, NumericalError, UsageError
from .features import (BandSpec, DEAP_BANDS, RawRecording, SEED_BANDS,
                       SampleTensor, Trial, extract_features)
from .model import ModelConfig, forward, init_params, predict
from .data import (FeatureSet, PlantedSignal, SynthSpec, default_synth_spec,
                   read_features, read_recording, synth_generate,
                   write_features, write_recording)
from .attribution import ChannelReport, grad_cam_channels, rank_channels
from .harness import ExperimentConfig, RunReport, kfold_split, train

__all__ = [
    "AdamW", "OptimizerConfig", "Tape", "Tensor",
    "AmdetError", "DataError", "NumericalError", "UsageError",
    "BandSpec", "DEAP_BANDS", "SEED_BANDS", "RawRecording", "SampleTensor",
    "Trial", "extract_features",
    "ModelConfig", "forward", "init_params", "predict",
    "FeatureSet", "PlantedSignal", "SynthSpec", "default_synth_spec",
    "read_features", "read_recording", "synth_generate", "write_features",
    "write_recording",
    "ChannelReport", "grad_cam_channels", "rank_channels",
    "ExperimentConfig", "RunReport", "kfold_split", "train",
]
