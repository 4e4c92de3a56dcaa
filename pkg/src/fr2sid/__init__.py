"""Fast randomized subspace identification of LTI state-space models."""

from .baseline import BaselineConfig, run_conventional
from .datamodel import TimeSeriesData, build_hankel, load_timeseries, save_timeseries
from .identify import Identification, run_fr2sid
from .metrics import markov_error, nee, subspace_distance, validation_mse
from .simulate import SystemSpec, generate_system, make_input, simulate
from .sketch import SketchConfig, sketch_matrix, sketch_stream
from .statespace import StateSpaceModel

__all__ = [
    "BaselineConfig", "Identification", "SketchConfig", "StateSpaceModel", "SystemSpec",
    "TimeSeriesData", "build_hankel", "generate_system", "load_timeseries", "make_input",
    "markov_error", "nee", "run_conventional", "run_fr2sid", "save_timeseries", "simulate",
    "sketch_matrix", "sketch_stream", "subspace_distance", "validation_mse",
]

__version__ = "0.1.0"
