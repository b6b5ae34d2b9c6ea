"""Derivative-free optimization with sampler bursts and diffusion maps.

Short constant-temperature Metropolis bursts explore an objective; diffusion
maps find the low-dimensional coordinates of the burst clouds; drift
estimates in those coordinates give an effective gradient to step along;
geometric harmonics lift the step back to the ambient space.
"""
from .errors import ContractError, DegeneracyError, NumericalError
from .objectives import make_objective
from .sampler import SamplerParams, ensemble_bursts, rwmh_burst
from .dmaps import diffusion_map
from .outer_loop import OuterConfig, run_baseline, run_grid, run_ridge

__all__ = ["ContractError", "DegeneracyError", "NumericalError", "make_objective", "SamplerParams",
           "ensemble_bursts", "rwmh_burst", "diffusion_map", "OuterConfig", "run_baseline",
           "run_grid", "run_ridge"]
