"""Ready-to-diagonalize dual systems: Hamiltonian, sector basis and A-side labels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .lattice import (
    CutTorusModel,
    DualMap,
    Kind,
    LatticeGeometry,
    SymmetrySectorLabel,
    build_dual_cut_torus,
    build_dual_cylinder,
    flux_operators,
)
from .pauli import OperatorSum, PauliString
from .spectra import CompiledOperator, Constraint, SectorSpace


def block_matrix(h, states: np.ndarray, n: int, rotated: bool = True) -> np.ndarray:
    """Dense matrix of ``h`` (OperatorSum or PauliString) on a closed set of bitstrings.

    ``states`` must be sorted and invariant under the flips of ``h``.
    """
    terms = [(1.0, h)] if isinstance(h, PauliString) else list(h)
    d = len(states)
    out = np.zeros((d, d), dtype=complex)
    cols = np.arange(d)
    for c, p in terms:
        q = p.hadamard() if rotated else p
        q = PauliString(n, q.x, q.z, q.phase) if q.n != n else q
        k = (q.phase + (q.x & q.z).bit_count()) % 4
        tgt = states ^ q.x
        pos = np.searchsorted(states, tgt)
        if np.any(pos >= d) or np.any(states[np.minimum(pos, d - 1)] != tgt):
            raise ValueError(f"{p.label()} leaves the state set")
        sgn = 1 - 2 * kernels.parities(states, q.z)
        out[pos, cols] += c * (1j ** k) * sgn
    if not np.any(out.imag):
        return out.real
    return out


def restrict_to(op: PauliString, n_a: int) -> PauliString:
    """Drop the (empty) high part of a string supported on the low ``n_a`` bits."""
    if op.support >> n_a:
        raise ValueError(f"{op.label()} is not supported on the first {n_a} qubits")
    return PauliString(n_a, op.x, op.z, op.phase)


@dataclass
class CutSystem:
    """Dual system with an A/B split and a fixed global symmetry sector.

    For the cut torus the sector fixes all residual Gauss laws to +1 and the
    two windings; the basis blocks are then the A-side flux sectors.  For the
    open cylinder subsystem A is the whole register and the blocks are the
    boundary-flux sectors.
    """

    geometry: LatticeGeometry
    epsilon: float
    electric_limit: bool
    map: DualMap
    hamiltonian: OperatorSum
    parts: dict
    space: SectorSpace
    labels: list = field(default_factory=list)
    winding: dict = field(default_factory=dict)
    _compiled: CompiledOperator | None = None

    @property
    def op(self) -> CompiledOperator:
        if self._compiled is None:
            self._compiled = self.space.compile(self.hamiltonian)
        return self._compiled

    @property
    def register(self):
        return self.map.register

    @property
    def n_a(self) -> int:
        return self.space.n_a

    def a_terms(self, include_boundary: bool = False):
        """Energy terms fully supported in A (optionally the boundary fluxes)."""
        terms = [t for t in self.map.local_terms() if t.side == "A" or (self.geometry.kind is Kind.OPEN_CYLINDER)]
        if include_boundary and self.geometry.kind is Kind.CUT_TORUS:
            from .lattice import LocalTerm

            f = flux_operators(self.map)
            for r, op in enumerate(f.left):
                terms.append(LocalTerm("electric", ("left", r), op, "A", False))
            for r, op in enumerate(f.right):
                terms.append(LocalTerm("electric", ("right", r), op, "A", False))
        return terms

    def h_a(self) -> OperatorSum:
        return self.parts.get("A", self.hamiltonian)

    def a_block_matrices(self, h) -> list[np.ndarray]:
        """Dense blocks of an A-supported operator on the A-side sector blocks."""
        n_a = self.n_a
        if isinstance(h, OperatorSum):
            h = OperatorSum(n_a, ((c, restrict_to(p, n_a)) for c, p in h))
        else:
            h = restrict_to(h, n_a)
        return [block_matrix(h, blk.a_states, n_a, self.space.rotated) for blk in self.space.blocks]

    def with_epsilon(self, epsilon: float) -> "CutSystem":
        return build_system(self.geometry, epsilon, electric_limit=False, **self.winding)


def _label_blocks(space: SectorSpace, m: DualMap) -> list[SymmetrySectorLabel]:
    f = flux_operators(m)
    ny = m.register.geometry.ny

    def value(op, a):
        q = op.hadamard() if space.rotated else op
        if q.x:
            raise ValueError("flux operator not diagonal in the working basis")
        s = -1 if (q.z & a).bit_count() % 2 else 1
        return s if q.phase == 0 else -s

    labels = []
    for blk in space.blocks:
        a = int(blk.a_states[0])
        vals = [value(op, a) for op in f.all()]
        lf = tuple(vals[:ny])
        rf = tuple(vals[ny:ny + len(f.right)])
        v = vals[-1] if f.vtilde_x is not None else None
        labels.append(SymmetrySectorLabel(lf, rf, v))
    return labels


def build_system(geometry: LatticeGeometry, epsilon: float, electric_limit: bool = False,
                 vx: int | None = 1, vy: int | None = 1) -> CutSystem:
    """Hamiltonian and sector basis of a cut torus or open cylinder.

    ``vx``/``vy`` fix the winding sector (``None`` leaves it free).  The
    cylinder has no ``V_x`` and by default leaves ``V_y`` free, so all
    ``2**N_y`` boundary-flux configurations are present.
    """
    if geometry.kind is Kind.CUT_TORUS:
        model: CutTorusModel = build_dual_cut_torus(geometry, epsilon, electric_limit)
        m = model.map
        cons = [Constraint(g) for g in model.residual_gauss]
        if vx is not None:
            cons.append(Constraint(m.ribbons["Vx"], vx))
        if vy is not None:
            cons.append(Constraint(m.ribbons["Vy"], vy))
        space = SectorSpace(m.n, model.register.n_a, cons)
        parts = {"A": model.h_a, "B": model.h_b, "AB": model.h_ab}
        h = model.hamiltonian
        winding = {"vx": vx, "vy": vy}
    elif geometry.kind is Kind.OPEN_CYLINDER:
        cyl = build_dual_cylinder(geometry, epsilon, electric_limit)
        m = cyl.map
        cons = [Constraint(g) for g in cyl.gauss]
        if vy is not None and vy != "free":
            cons.append(Constraint(m.ribbons["Vy"], vy))
        space = SectorSpace(m.n, m.n, cons)
        parts = {"A": cyl.hamiltonian}
        h = cyl.hamiltonian
        winding = {"vx": None, "vy": vy}
    else:
        raise ValueError("build_system needs a CutTorus or OpenCylinder geometry")
    sysm = CutSystem(geometry, epsilon, electric_limit, m, h, parts, space, winding=winding)
    if geometry.kind is Kind.CUT_TORUS:
        sysm.labels = _label_blocks(space, m)
    return sysm


def cylinder_system(nx: int, ny: int, epsilon: float, vy: int | None = None) -> CutSystem:
    return build_system(LatticeGeometry.cylinder(nx, ny), epsilon, vy=vy)


def boundary_levels(nx: int, ny: int, epsilon: float) -> dict:
    """Lowest energy of every boundary-flux sector of the open cylinder.

    The flux qubits commute with the Hamiltonian, so each configuration
    ``s = (s_0, ..., s_{N_y-1})`` is a sector; ``V_y`` follows from the
    boundary Gauss laws as ``prod_r s_r``.  Returns ``{s: E_min(s)}``.
    """
    import itertools

    from .spectra import ground_state

    geom = LatticeGeometry.cylinder(nx, ny)
    cyl = build_dual_cylinder(geom, epsilon)
    m = cyl.map
    flux = [PauliString.xs(m.n, [m.register.sigma_qubits[(-1, r, "x")]]) for r in range(ny)]
    out = {}
    for s in itertools.product((1, -1), repeat=ny):
        cons = [Constraint(g) for g in cyl.gauss] + [Constraint(f, v) for f, v in zip(flux, s)]
        space = SectorSpace(m.n, m.n, cons)
        e, _ = ground_state(space.compile(cyl.hamiltonian))
        out[s] = e
    return out


@dataclass
class Equivalence:
    """Sorted dual spectrum against the Gauss-projected gauge-variant one."""

    geometry: LatticeGeometry
    epsilon: float
    dim_original: int
    dim_dual: int
    max_deviation: float

    @property
    def ok(self) -> bool:
        return self.dim_original == self.dim_dual and self.max_deviation < 1e-10


def physical_spectrum(geometry: LatticeGeometry, epsilon: float, electric_limit: bool = False) -> np.ndarray:
    """Spectrum of the gauge-variant model on the torus ``geometry.nx x geometry.ny``.

    The Gauss-invariant subspace is enumerated in the electric basis, where
    every Gauss operator is diagonal.
    """
    from .lattice import build_original
    from .spectra import DENSE_LIMIT, BudgetExceeded

    torus = LatticeGeometry.torus(geometry.nx, geometry.ny)
    o = build_original(torus, epsilon, electric_limit)
    space = SectorSpace(o.n_qubits, None, [Constraint(g) for g in o.gauss])
    if space.dim > 4 * DENSE_LIMIT:
        raise BudgetExceeded(f"physical subspace of dimension {space.dim} beyond the dense oracle")
    return np.linalg.eigvalsh(space.compile(o.hamiltonian).to_dense())


def dual_spectrum(geometry: LatticeGeometry, epsilon: float, electric_limit: bool = False) -> np.ndarray:
    """Full spectrum of the dual model (all winding sectors)."""
    from .lattice import build_dual_torus

    if geometry.kind is Kind.PERIODIC_TORUS:
        h = build_dual_torus(geometry, epsilon, electric_limit)
        space = SectorSpace(h.n, None, [])
    elif geometry.kind is Kind.CUT_TORUS:
        model = build_dual_cut_torus(geometry, epsilon, electric_limit)
        h = model.hamiltonian
        space = SectorSpace(model.register.n_qubits, model.register.n_a,
                            [Constraint(g) for g in model.residual_gauss])
    else:
        raise ValueError("no gauge-variant oracle for open geometries")
    return np.linalg.eigvalsh(space.compile(h).to_dense())


def spectrum_equivalence(geometry: LatticeGeometry, epsilon: float, electric_limit: bool = False) -> Equivalence:
    a = physical_spectrum(geometry, epsilon, electric_limit)
    b = dual_spectrum(geometry, epsilon, electric_limit)
    dev = float(np.max(np.abs(a - b))) if len(a) == len(b) else float("inf")
    return Equivalence(geometry, epsilon, len(a), len(b), dev)
