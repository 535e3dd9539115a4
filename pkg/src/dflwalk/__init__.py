"""Coined quantum walk coupled to a spin chain: sector ensembles, spectra,
matrix-product-state and brute-force engines."""

from __future__ import annotations

__version__ = "0.1.0"

from .ensemble import EnsembleConfig, ensemble_distribution, fit_localization_length, normalized_ipr, variance
from .errors import DFLWalkError
from .walk_core import SectorState, SpinSector, WalkParams

__all__ = [
    "DFLWalkError",
    "EnsembleConfig",
    "SectorState",
    "SpinSector",
    "WalkParams",
    "ensemble_distribution",
    "fit_localization_length",
    "normalized_ipr",
    "variance",
]
