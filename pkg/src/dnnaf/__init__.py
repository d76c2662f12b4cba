"""Adaptive filtering driven by a learned noise-density derivative.

Pipeline: draw noise samples (:mod:`noise`), estimate the density derivative
with a Gaussian KDE (:mod:`kde`), fit a small network to it (:mod:`gradnet`),
and use the network as the error nonlinearity of an adaptive filter
(:mod:`filters`). :mod:`theory` predicts stability and steady-state error;
:mod:`harness` runs seeded Monte Carlo comparisons.
"""

from .errors import DnnafError
from .filters import ALGORITHMS, DNNAF, LMF, LMS, MCC, MEE
from .gradnet import GradientNet, TrainConfig, load_model, save_model, train
from .kde import GradientDataset, KdeModel, build_gradient_dataset, silverman_bandwidth
from .noise import PRESETS, parse_model, preset, sample

__all__ = [
    "ALGORITHMS", "DNNAF", "DnnafError", "GradientDataset", "GradientNet", "KdeModel",
    "LMF", "LMS", "MCC", "MEE", "PRESETS", "TrainConfig", "build_gradient_dataset",
    "load_model", "parse_model", "preset", "sample", "save_model", "silverman_bandwidth",
    "train",
]
__version__ = "0.1.0"
