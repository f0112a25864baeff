from .anneal import AnnealConfig, FitResult, fit, information, wkb_reference
from .objective import FitTemplate, action_of_data, negative_log_likelihood
from .scan import Minimum, Prediction, local_minima, predict, scan_minima, summarize

__all__ = [
    "AnnealConfig", "FitResult", "FitTemplate", "Minimum", "Prediction", "action_of_data",
    "fit", "information", "local_minima", "negative_log_likelihood", "predict", "scan_minima",
    "summarize", "wkb_reference",
]
