"""Spectral Galerkin simulations of the cubic fractional NLS with fluctuation-dissipation forcing."""

__version__ = "0.1.0"

from .basis import Basis, Domain, build_basis  # noqa: E402
from .dynamics import FlowParams, Scheme, integrate  # noqa: E402
from .errors import FNLSError  # noqa: E402
from .fluctdissip import DissipationSpec, EnsembleConfig, NoiseSpec, run_ensemble  # noqa: E402

__all__ = [
    "Basis", "Domain", "build_basis",
    "FlowParams", "Scheme", "integrate",
    "FNLSError",
    "DissipationSpec", "EnsembleConfig", "NoiseSpec", "run_ensemble",
]
