"""Z2 lattice gauge theory in dual variables: spectra, entanglement and thermalization."""
from .pauli import OperatorSum, PauliString, apply, commutes, multiply
from .lattice import (
    LatticeGeometry,
    Kind,
    SymmetrySectorLabel,
    build_original,
    build_dual_torus,
    build_dual_cylinder,
    build_dual_cut_torus,
    verify_canonical_map,
    sector_projectors,
)

__version__ = "0.1.0"
