"""GCGNet: graph-consistent generative forecasting with exogenous variables, on a small numpy autodiff core."""

from gcgnet.baselines import BaselineConfig, FusionWrapper, LinearForecaster
from gcgnet.data import Dataset, MaskSpec, SynthSpec, load_csv, make_windows, split, synth_generate
from gcgnet.model import GCGNet, ModelConfig, build_ablation
from gcgnet.train import Metrics, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig", "Dataset", "FusionWrapper", "GCGNet", "LinearForecaster", "MaskSpec", "Metrics",
    "ModelConfig", "SynthSpec", "TrainConfig", "build_ablation", "evaluate", "load_checkpoint", "load_csv",
    "make_windows", "save_checkpoint", "split", "synth_generate", "train",
]
