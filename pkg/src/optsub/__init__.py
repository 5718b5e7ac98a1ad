"""Optimal subsampling for M-estimation, with replacement and Poisson."""

from .dataset import CsvSchema, Dataset, Observation, load_csv, write_csv
from .errors import OptsubError
from .model import FAMILIES, ModelFamily, get_family
from .optprob import SamplingPlan, opt_probs_poisson, opt_probs_withreplacement, poisson_threshold
from .pipeline import PipelineResult, aggregate, fit_full, run_poisson, run_withreplacement
from .sampling import RngSeed

__all__ = [
    "CsvSchema",
    "Dataset",
    "FAMILIES",
    "ModelFamily",
    "Observation",
    "OptsubError",
    "PipelineResult",
    "RngSeed",
    "SamplingPlan",
    "aggregate",
    "fit_full",
    "get_family",
    "load_csv",
    "opt_probs_poisson",
    "opt_probs_withreplacement",
    "poisson_threshold",
    "run_poisson",
    "run_withreplacement",
    "write_csv",
]
