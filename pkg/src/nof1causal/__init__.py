"""Time-varying causal effect estimation for single-subject (N-of-1) time series."""
from .estimands import Request, estimand_series
from .frame import CoefficientFrame
from .gformula import McConfig
from .pipeline import FitConfig, fit_all
from .series import DagConfig, Schema, Series, load_series, read_csv
from .synth import TruthSpec, generate

__all__ = ["CoefficientFrame", "DagConfig", "FitConfig", "McConfig", "Request", "Schema", "Series", "TruthSpec",
           "estimand_series", "fit_all", "generate", "load_series", "read_csv"]
__version__ = "0.1.0"
