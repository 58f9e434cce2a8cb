"""Robust topology optimization through a learned latent design space.

Deterministic SIMP optima sampled over the load uncertainty form a corpus; a
VAE compresses it to a few latent variables, a neural surrogate predicts the
robust compliance, and gradient descent in latent space searches for designs
better than any in the corpus.
"""
from .grid import GridSpec, Physics, ProblemSpec, build_problem, make_cantilever, make_heat_sink, make_l_bracket
from .robust import MonteCarlo, Quadrature, RobustConfig, robust_compliance
from .simp import SimpConfig, run_simp

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "Physics", "ProblemSpec", "build_problem", "make_cantilever", "make_heat_sink",
    "make_l_bracket", "MonteCarlo", "Quadrature", "RobustConfig", "robust_compliance", "SimpConfig",
    "run_simp",
]
