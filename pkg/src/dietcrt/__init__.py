"""Conditional independence testing by distilling to conditional-CDF residuals."""

from .data import LabeledDataset, RngStream
from .crt import CrtConfig, CrtResult, DietConfig, crt_pvalue, diet_test, generic_crt

__version__ = "0.1.0"

__all__ = [
    "CrtConfig", "CrtResult", "DietConfig", "LabeledDataset", "RngStream",
    "crt_pvalue", "diet_test", "generic_crt",
]
