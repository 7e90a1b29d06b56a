"""Generalized approximate message passing for sparse linear classification."""
from .data import Dataset, SyntheticTruth, read_dataset, read_libsvm, write_dataset, write_libsvm
from .em import EMConfig, EMResult, em_fit
from .engine import GampConfig, GampDivergence, GampResult, one_bit_cs, predict, run_gamp
from .estimator import GAMPClassifier, OneBitCSClassifier, make_input_channel, make_output_channel

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EMConfig",
    "EMResult",
    "GAMPClassifier",
    "GampConfig",
    "GampDivergence",
    "GampResult",
    "OneBitCSClassifier",
    "SyntheticTruth",
    "em_fit",
    "make_input_channel",
    "make_output_channel",
    "one_bit_cs",
    "predict",
    "read_dataset",
    "read_libsvm",
    "run_gamp",
    "write_dataset",
    "write_libsvm",
]
