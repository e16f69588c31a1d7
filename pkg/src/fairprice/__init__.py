"""Fairness measurement and mitigation for insurance pricing GLMs."""

from .dataset import BinningSpec, ColumnSpec, Portfolio, SchemaError, load_csv, split, write_csv
from .glm import FittedGLM, GlmSpec, fit
from .knn import DistanceSpec
from .metrics import FairnessPanel, fairness_panel, hgr_kde
from .synthgen import SynthConfig, generate

__all__ = [
    "BinningSpec", "ColumnSpec", "DistanceSpec", "FairnessPanel", "FittedGLM", "GlmSpec", "Portfolio",
    "SchemaError", "SynthConfig", "fairness_panel", "fit", "generate", "hgr_kde", "load_csv", "split",
    "write_csv",
]
