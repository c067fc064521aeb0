"""Lipschitz networks for certified l_inf robustness: layers, training, certification, constructions."""
from .network import Network, build_linf, build_maxmin, build_sortnet, build_standard
from .numeric import RandomSource, sort_desc, top_k

__version__ = "0.1.0"

__all__ = [
    "Network",
    "RandomSource",
    "build_linf",
    "build_maxmin",
    "build_sortnet",
    "build_standard",
    "sort_desc",
    "top_k",
]
