"""Generalized Radon transforms over level sets of Beylkin-type defining functions."""
from .geometry import *  # noqa: F401,F403
from .transform import *  # noqa: F401,F403
from .normal import (DenseNormal, PrincipalSymbol, ProbeResult, apply_normal,  # noqa: F401
                     assemble_dense, operator_scale, principal_symbol, probe_symbol)
from .recon import (PerturbationSweep, ReconResult, StabilityReport, SymbolPreconditioner,  # noqa: F401
                    cg_normal_solve, estimate_stability_constant, perturbation_sweep, precondition,
                    sobolev_norm)
from .microlocal import FbiScan, conormal_probe, decay_scan, fbi  # noqa: F401
from .config import RunConfig, load_config  # noqa: F401

__version__ = "0.1.0"
