"""Reduced density matrices, entanglement spectra, gaps and the boundary theory."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import DualRegister, SymmetrySectorLabel
from .pauli import PauliString
from .spectra import DensityMatrix, SectorSpace, StateVector

log = logging.getLogger(__name__)

CUTOFF = 1e-14
LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# partial traces
# ---------------------------------------------------------------------------
def reduce_full(psi: np.ndarray, n: int, a_qubits: Sequence[int]) -> np.ndarray:
    """``Tr_B |psi><psi|`` for a full-register vector, A given by qubit positions.

    The returned matrix is indexed by the A qubits in the listed order
    (the first listed qubit is the lowest bit).
    """
    a_qubits = list(a_qubits)
    if psi.shape[0] != 1 << n:
        raise ValueError("state dimension does not match the register")
    b_qubits = [q for q in range(n) if q not in a_qubits]
    t = psi.reshape([2] * n)
    # numpy axis k is qubit n-1-k
    perm = [n - 1 - q for q in reversed(b_qubits)] + [n - 1 - q for q in reversed(a_qubits)]
    m = np.transpose(t, perm).reshape(1 << len(b_qubits), 1 << len(a_qubits))
    return m.T @ m.conj()


def reduce_to_A(state, register: DualRegister | None = None, labels: Sequence | None = None,
                a_qubits: Sequence[int] | None = None) -> DensityMatrix:
    """Reduced density matrix of subsystem A.

    A sector-basis state gives one block per A-side sector (the Schmidt matrix
    of each block is a reshape).  A plain full-register vector is traced over
    all non-A qubits of ``register`` (or of ``a_qubits``).
    """
    if isinstance(state, StateVector) and state.space.n_b >= 0 and (a_qubits is None):
        space = state.space
        if register is not None and register.n_a != space.n_a and register.n_qubits == space.n:
            raise ValueError("state space split differs from the register partition")
        psi = state.amplitudes
        blocks = []
        for blk in space.blocks:
            m = psi[blk.slice].reshape(blk.shape)
            blocks.append(m @ m.conj().T)
        lab = list(labels) if labels is not None else [blk.signature for blk in space.blocks]
        return DensityMatrix(blocks, lab, "A")
    psi = state.full() if isinstance(state, StateVector) else np.asarray(state)
    n = int(round(math.log2(psi.shape[0])))
    if a_qubits is None:
        if register is None:
            raise ValueError("partition missing: give a register or a_qubits")
        a_qubits = register.a_qubits
        if not a_qubits:
            raise ValueError("partition missing: register has no A qubits")
    return DensityMatrix([reduce_full(psi, n, a_qubits)], [None], "A")


def schmidt_values(state: StateVector) -> list[np.ndarray]:
    """Singular values of every Schmidt block of a sector-basis state."""
    out = []
    for blk in state.space.blocks:
        m = state.amplitudes[blk.slice].reshape(blk.shape)
        out.append(np.linalg.svd(m, compute_uv=False))
    return out


def reduce_to_B(state: StateVector, labels: Sequence | None = None) -> DensityMatrix:
    blocks = []
    for blk in state.space.blocks:
        m = state.amplitudes[blk.slice].reshape(blk.shape)
        blocks.append(m.T @ m.conj())
    lab = list(labels) if labels is not None else [blk.signature for blk in state.space.blocks]
    return DensityMatrix(blocks, lab, "B")


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------
@dataclass
class EntanglementSpectrum:
    """Sorted entanglement energies ``xi = -log(lambda)`` with sector tags."""

    xi: np.ndarray
    sectors: list
    cutoff: float = CUTOFF
    dropped_weight: float = 0.0
    dim: int = 0

    @property
    def schmidt_rank(self) -> int:
        return len(self.xi)

    @property
    def levels(self) -> list[tuple[float, object]]:
        return list(zip(self.xi.tolist(), self.sectors))

    def probabilities(self) -> np.ndarray:
        return np.exp(-self.xi)

    def by_sector(self) -> dict:
        out: dict = {}
        for x, s in zip(self.xi, self.sectors):
            out.setdefault(s, []).append(x)
        return {k: np.array(v) for k, v in out.items()}

    @property
    def n_sectors(self) -> int:
        return len(set(self.sectors))

    def check(self) -> list[str]:
        bad = []
        if np.any(np.diff(self.xi) < 0):
            bad.append("levels not sorted")
        tot = float(np.exp(-self.xi).sum())
        if abs(tot + self.dropped_weight - 1) > 1e-10:
            bad.append(f"retained weight {tot} + dropped {self.dropped_weight} != 1")
        if self.dropped_weight > self.cutoff * max(self.dim, 1):
            bad.append("dropped weight above cutoff * dim")
        return bad


def _projector(strings: Sequence[PauliString], n: int) -> np.ndarray:
    p = np.eye(1 << n, dtype=complex)
    for s in strings:
        s = PauliString(n, s.x, s.z, s.phase) if s.n != n else s
        p = p @ (np.eye(1 << n) + s.to_matrix()) / 2
    return p


def entanglement_spectrum(rho: DensityMatrix, projectors=None, cutoff: float = CUTOFF,
                          commute_tol: float = 1e-9) -> EntanglementSpectrum:
    """Sector-resolved entanglement spectrum.

    A block-diagonal ``rho`` is diagonalized block by block with the block
    labels as sectors.  A single dense ``rho`` with ``projectors`` (a list of
    ``(label, strings)`` acting on the A register) is split as ``P rho P``.
    """
    xs, tags, dropped = [], [], 0.0
    if projectors is not None and len(rho.blocks) == 1:
        m = rho.blocks[0]
        n = int(round(math.log2(m.shape[0])))
        total = np.zeros_like(m, dtype=complex)
        for label, strings in projectors:
            p = _projector(strings, n)
            if np.max(np.abs(p @ m - m @ p)) > commute_tol:
                raise ValueError(f"sector projector {label} does not commute with rho")
            total += p
            w, v = np.linalg.eigh(p)
            basis = v[:, w > 0.5]
            if not basis.shape[1]:
                continue
            ev = np.linalg.eigvalsh(basis.conj().T @ m @ basis)
            keep = ev > cutoff
            dropped += float(np.clip(ev[~keep], 0, None).sum())
            xs.append(-np.log(ev[keep]))
            tags += [label] * int(keep.sum())
        if np.max(np.abs(total - np.eye(m.shape[0]))) > 1e-9:
            raise ValueError("sector projectors are not complete")
    else:
        for label, b in zip(rho.labels or [None] * len(rho.blocks), rho.blocks):
            if not b.size:
                continue
            ev = np.linalg.eigvalsh(b)
            keep = ev > cutoff
            dropped += float(np.clip(ev[~keep], 0, None).sum())
            xs.append(-np.log(ev[keep]))
            tags += [label] * int(keep.sum())
    xi = np.concatenate(xs) if xs else np.zeros(0)
    order = np.argsort(xi, kind="stable")
    return EntanglementSpectrum(xi[order], [tags[k] for k in order], cutoff, dropped, rho.dim)


def spectrum_of_state(state: StateVector, labels: Sequence | None = None, cutoff: float = CUTOFF) -> EntanglementSpectrum:
    """Entanglement spectrum straight from the Schmidt blocks (via SVD)."""
    xs, tags, dropped = [], [], 0.0
    lab = list(labels) if labels is not None else [blk.signature for blk in state.space.blocks]
    for label, s in zip(lab, schmidt_values(state)):
        ev = s ** 2
        keep = ev > cutoff
        dropped += float(ev[~keep].sum())
        xs.append(-np.log(ev[keep]))
        tags += [label] * int(keep.sum())
    xi = np.concatenate(xs) if xs else np.zeros(0)
    order = np.argsort(xi, kind="stable")
    dim = sum(blk.shape[0] for blk in state.space.blocks)
    return EntanglementSpectrum(xi[order], [tags[k] for k in order], cutoff, dropped, dim)


def von_neumann_entropy(rho, cutoff: float = CUTOFF) -> float:
    """Entropy in nats of a DensityMatrix, spectrum or eigenvalue array."""
    if isinstance(rho, EntanglementSpectrum):
        p = rho.probabilities()
    elif isinstance(rho, DensityMatrix):
        p = np.concatenate([np.linalg.eigvalsh(b) for b in rho.blocks if b.size])
    else:
        p = np.asarray(rho, dtype=float)
    p = p[p > cutoff]
    return float(-(p * np.log(p)).sum())


def entropy_bits(rho) -> float:
    return von_neumann_entropy(rho) / LOG2


# ---------------------------------------------------------------------------
# gaps and critical coupling
# ---------------------------------------------------------------------------
@dataclass
class GapResult:
    gap: float
    band_size: int
    flagged: bool = False
    note: str = ""


def entanglement_gap(spectrum: EntanglementSpectrum, i: int = 1, band_size: int | None = None) -> GapResult:
    """Gap above the ``i``-th low-lying band.

    The band holds one level per populated symmetry sector (the boundary
    multiplet), so by default ``band_size`` is the number of distinct sector
    tags.  Without sector tags the largest gap in the first quartile is used
    and the result is flagged.
    """
    xi = spectrum.xi
    if band_size is None:
        tagged = [s for s in spectrum.sectors if s is not None]
        band_size = len(set(tagged)) if tagged else 0
    k = i * band_size
    if band_size and k < len(xi):
        return GapResult(float(xi[k] - xi[k - 1]), band_size)
    q = max(2, len(xi) // 4)
    if len(xi) < 2:
        return GapResult(0.0, 0, True, "fewer than two levels")
    d = np.diff(xi[:q])
    j = int(np.argmax(d))
    return GapResult(float(d[j]), j + 1, True, "band size undetermined; largest gap in first quartile")


@dataclass
class GapScan:
    epsilons: list
    gaps: list
    entropies: list = field(default_factory=list)
    label: str = ""
    fit: tuple | None = None

    def __post_init__(self):
        if len(self.epsilons) != len(self.gaps) or (self.entropies and len(self.entropies) != len(self.gaps)):
            raise ValueError("scan lists differ in length")


def _intercept(eps: np.ndarray, gaps: np.ndarray) -> float:
    a, b = np.polyfit(eps, gaps, 1)
    if a == 0:
        return math.inf
    return float(-b / a)


def critical_coupling(scans, window: tuple[float, float] | None = None) -> tuple[float, float]:
    """Gap-closing coupling from linear extrapolation of ``Delta_xi,1(eps)``.

    Each scan is fit on the points inside ``window`` (all points by default).
    The error combines the largest leave-one-out deviation of each fit with
    the spread of the intercepts across scans.  The mean intercept is returned.
    """
    if isinstance(scans, GapScan):
        scans = [scans]
    cs, loo = [], []
    for sc in scans:
        e = np.asarray(sc.epsilons, float)
        g = np.asarray(sc.gaps, float)
        if window is not None:
            sel = (e >= window[0]) & (e <= window[1])
            e, g = e[sel], g[sel]
        if len(e) < 3:
            raise ValueError(f"scan {sc.label!r} has fewer than 3 points in the closing window")
        c = _intercept(e, g)
        dev = 0.0
        for k in range(len(e)):
            m = np.ones(len(e), bool)
            m[k] = False
            dev = max(dev, abs(_intercept(e[m], g[m]) - c))
        sc.fit = (c, dev)
        cs.append(c)
        loo.append(dev)
    c_mean = float(np.mean(cs))
    spread = float(np.max(np.abs(np.array(cs) - c_mean))) if len(cs) > 1 else 0.0
    return c_mean, float(max(max(loo), spread))


def closing_window(scan: GapScan, n_points: int = 4, kink: float = 0.25) -> tuple[float, float]:
    """Last ``n_points`` couplings before the gap first stops decreasing linearly.

    Closed gaps (numerically zero) are dropped.  Trailing points are then
    trimmed while the last segment is flatter than ``1 - kink`` times the one
    before it, i.e. where the gap rounds off instead of closing linearly.
    """
    e = np.asarray(scan.epsilons, float)
    g = np.asarray(scan.gaps, float)
    open_ = g > 1e-9 * max(float(np.max(np.abs(g))), 1e-300)
    e, g = e[open_], g[open_]
    end = len(e)
    while end > 3:
        s_last = (g[end - 1] - g[end - 2]) / (e[end - 1] - e[end - 2])
        s_prev = (g[end - 2] - g[end - 3]) / (e[end - 2] - e[end - 3])
        if abs(s_last) >= (1 - kink) * abs(s_prev):
            break
        end -= 1
    lo = max(0, end - n_points)
    return float(e[lo]), float(e[end - 1])


# ---------------------------------------------------------------------------
# perturbative boundary theory
# ---------------------------------------------------------------------------
@dataclass
class PerturbativeEH:
    """First-order entanglement and boundary Hamiltonian levels."""

    ny: int
    epsilon: float
    eh_levels: np.ndarray
    heff_levels: np.ndarray
    configs: list
    flux_parity: int | None

    @property
    def eh_spacing_ratio(self) -> float:
        return 0.5


def perturbative_EH_spectrum(ny: int, epsilon: float, flux_parity: int | None = None) -> PerturbativeEH:
    """Levels of the commuting boundary chain at first order in ``epsilon``.

    The boundary flux spins ``s_r = +-1`` sit in the eigenbasis of the
    effective Hamiltonian ``H_eff = -eps * sum_r s_r``; the entanglement
    Hamiltonian is ``N log 2 - (eps/2) sum_r s_r`` with ``N = N_y`` for free
    fluxes and ``N = N_y - 1`` when ``prod_r s_r`` is fixed to ``flux_parity``.
    The constant makes ``sum exp(-xi)`` equal to one at first order.
    """
    configs = [c for c in itertools.product((1, -1), repeat=ny)
               if flux_parity is None or math.prod(c) == flux_parity]
    n_eff = ny if flux_parity is None else ny - 1
    sums = np.array([sum(c) for c in configs], dtype=float)
    eh = n_eff * LOG2 - 0.5 * epsilon * sums
    heff = -epsilon * sums
    order = np.argsort(eh, kind="stable")
    return PerturbativeEH(ny, epsilon, eh[order], np.sort(heff), [configs[k] for k in order], flux_parity)


def two_boundary_prediction(labels: Sequence[SymmetrySectorLabel], epsilon: float) -> dict:
    """First-order lowest level per sector for a subsystem with two cuts.

    Each sector contributes one low-lying level
    ``log(n_sectors) - (eps/2) (sum left flux + sum right flux)``.
    """
    labels = list(dict.fromkeys(labels))
    base = math.log(len(labels))
    return {lab: base - 0.5 * epsilon * (sum(lab.left_flux) + sum(lab.right_flux)) for lab in labels}


def lowest_per_sector(spectrum: EntanglementSpectrum) -> dict:
    return {k: float(v.min()) for k, v in spectrum.by_sector().items()}
