"""Likelihood-free inference of hidden states and parameters of implicit HMMs."""

from .core import (
    Beta,
    CountingModel,
    Gamma,
    ImplicitHMM,
    NumericalError,
    ObsSeries,
    ParamVector,
    Prior,
    RngStream,
    SimulationDivergedError,
    StatePath,
    Uniform,
    prior_sample_and_logpdf,
    simulate_joint,
)

__version__ = "0.1.0"
