"""Nonparametric biclustering of count matrices with paired Dirichlet process mixtures."""

__version__ = "0.1.0"

from .bicluster import Bicluster, load_biclusters, save_biclusters  # noqa: E402
from .cdp import (CdpHyper, CdpModel, extract_biclusters, fit_cdp,  # noqa: E402
                  joint_prob)
from .countmat import SparseCountMatrix, load_matrix, preprocess  # noqa: E402
from .dpmm import DpmmConfig, run_dpmm  # noqa: E402
from .evaluate import jaccard_pair, jaccard_score  # noqa: E402
from .synth import SynthSpec, case_presets, simulate  # noqa: E402

__all__ = ["Bicluster", "CdpHyper", "CdpModel", "DpmmConfig", "SparseCountMatrix",
           "SynthSpec", "case_presets", "extract_biclusters", "fit_cdp", "jaccard_pair",
           "jaccard_score", "joint_prob", "load_biclusters", "load_matrix", "preprocess",
           "run_dpmm", "save_biclusters", "simulate"]
