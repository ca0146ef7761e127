"""Constrained bases, eigensolvers, Krylov time evolution and thermal states.

Every Hamiltonian of the dual formulations commutes with a set of X-type
strings (residual Gauss operators, windings, boundary fluxes).  After a global
Hadamard rotation these are diagonal parities, so a symmetry sector is spanned
by the bitstrings with prescribed parities.  :class:`SectorSpace` enumerates
those bitstrings grouped by the parities of their low (A) bits, so that

    psi[block].reshape(n_a_states, n_b_states)

is the Schmidt matrix of the block and the reduced density matrix of A is
block diagonal with one block per A-side symmetry sector.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .pauli import OperatorSum, PauliString

log = logging.getLogger(__name__)

DENSE_LIMIT = 4096


class NonConvergence(RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""


class BudgetExceeded(MemoryError):
    """Requested computation does not fit the memory budget."""


@dataclass(frozen=True)
class Constraint:
    """Eigenvalue condition ``op |psi> = value |psi>`` on a Pauli string."""

    op: PauliString
    value: int = 1


@dataclass
class Block:
    """States of one A-side parity signature and their B-side partners."""

    signature: int
    a_states: np.ndarray
    b_states: np.ndarray
    offset: int

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.a_states), len(self.b_states)

    @property
    def size(self) -> int:
        return len(self.a_states) * len(self.b_states)

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


def _frame(op: PauliString, rotated: bool) -> PauliString:
    return op.hadamard() if rotated else op


class SectorSpace:
    """Basis of a symmetry sector, split as A (low ``n_a`` bits) and B.

    Parameters
    ----------
    n : int
        Register size.
    n_a : int
        Number of low bits forming subsystem A (``n`` when there is no split).
    constraints : sequence of Constraint
        Commuting X-type strings (Z-type when ``rotated`` is False) with their
        eigenvalues.  Redundant or empty lists are allowed.
    rotated : bool
        Work in the Hadamard-rotated (electric) basis.
    """

    def __init__(self, n: int, n_a: int | None = None, constraints: Sequence[Constraint] = (), rotated: bool = True):
        if n > 62:
            raise ValueError("registers beyond 62 qubits are not supported")
        self.n = n
        self.n_a = n if n_a is None else n_a
        self.n_b = n - self.n_a
        self.rotated = rotated
        self.constraints = list(constraints)
        if len(self.constraints) > 24:
            raise ValueError("too many constraints")
        masks, target = [], 0
        for j, c in enumerate(self.constraints):
            op = _frame(c.op, rotated)
            if op.x:
                raise ValueError(f"constraint {c.op.label()} is not diagonal in the working basis")
            if op.n != n or not op.is_hermitian() or c.value not in (1, -1):
                raise ValueError(f"invalid constraint {c}")
            sign = 1 if op.phase == 0 else -1
            masks.append(op.z)
            if sign != c.value:
                target |= 1 << j
        self.masks = masks
        self.target = target
        self._build()

    # -- construction -----------------------------------------------------
    def _signatures(self, nbits: int, shift: int) -> np.ndarray:
        vals = np.arange(1 << nbits, dtype=np.int64)
        sig = np.zeros(len(vals), dtype=np.int64)
        for j, m in enumerate(self.masks):
            part = (m >> shift) & ((1 << nbits) - 1)
            if part:
                sig |= kernels.parities(vals, part) << j
        return sig

    def _build(self):
        nsig = 1 << len(self.masks)
        sig_a = self._signatures(self.n_a, 0)
        sig_b = self._signatures(self.n_b, self.n_a)
        rank_a = np.zeros(len(sig_a), dtype=np.int64)
        rank_b = np.zeros(len(sig_b), dtype=np.int64)
        order_a = np.argsort(sig_a, kind="stable")
        order_b = np.argsort(sig_b, kind="stable")
        cnt_a = np.bincount(sig_a, minlength=nsig)
        cnt_b = np.bincount(sig_b, minlength=nsig)
        start_a = np.concatenate(([0], np.cumsum(cnt_a)))
        start_b = np.concatenate(([0], np.cumsum(cnt_b)))
        for s in range(nsig):
            rank_a[order_a[start_a[s]:start_a[s + 1]]] = np.arange(cnt_a[s])
            rank_b[order_b[start_b[s]:start_b[s + 1]]] = np.arange(cnt_b[s])
        offset = np.zeros(nsig, dtype=np.int64)
        width = np.zeros(nsig, dtype=np.int64)
        blocks = []
        pos = 0
        for s in range(nsig):
            t = s ^ self.target
            if cnt_a[s] == 0 or cnt_b[t] == 0:
                continue
            a_st = order_a[start_a[s]:start_a[s + 1]]
            b_st = order_b[start_b[t]:start_b[t + 1]]
            blocks.append(Block(s, a_st, b_st, pos))
            offset[s] = pos
            width[s] = len(b_st)
            pos += len(a_st) * len(b_st)
        self.blocks = blocks
        self.dim = pos
        self._tables = (np.int64(self.n_a), np.int64((1 << self.n_a) - 1), sig_a, rank_a, rank_b, offset, width)
        self._states = None

    @property
    def states(self) -> np.ndarray:
        """Register bitstring of every basis vector (working frame)."""
        if self._states is None:
            out = np.empty(self.dim, dtype=np.int64)
            for blk in self.blocks:
                st = blk.a_states[:, None] | (blk.b_states[None, :] << self.n_a)
                out[blk.slice] = st.ravel()
            self._states = out
        return self._states

    def index(self, bitstrings) -> np.ndarray:
        """Basis positions of working-frame bitstrings (must lie in the sector)."""
        v = np.asarray(bitstrings, dtype=np.int64)
        n_a, mask_a, sig_a, rank_a, rank_b, offset, width = self._tables
        a, b = v & mask_a, v >> n_a
        s = sig_a[a]
        idx = offset[s] + rank_a[a] * width[s] + rank_b[b]
        ok = self.states[np.clip(idx, 0, self.dim - 1)] == v if self.dim else np.zeros(v.shape, bool)
        if not np.all(ok):
            raise ValueError("bitstring outside the sector")
        return idx

    def contains(self, bitstrings) -> np.ndarray:
        v = np.asarray(bitstrings, dtype=np.int64)
        sig = np.zeros(v.shape, dtype=np.int64)
        for j, m in enumerate(self.masks):
            sig |= kernels.parities(v, m) << j
        return sig == self.target

    # -- operators --------------------------------------------------------
    def compile(self, h: OperatorSum) -> "CompiledOperator":
        if h.n != self.n:
            raise ValueError(f"operator acts on {h.n} qubits, space has {self.n}")
        return CompiledOperator(self, h)

    def embed(self, psi: np.ndarray) -> np.ndarray:
        """Full-register amplitudes in the computational (unrotated) frame."""
        full = np.zeros(1 << self.n, dtype=complex if np.iscomplexobj(psi) else float)
        full[self.states] = psi
        if self.rotated:
            full = hadamard_all(full, self.n)
        return full

    def project(self, full: np.ndarray) -> np.ndarray:
        """Sector components of a full-register computational-frame vector."""
        if self.rotated:
            full = hadamard_all(full, self.n)
        return full[self.states]

    def basis_state(self, bitstring: int) -> np.ndarray:
        psi = np.zeros(self.dim)
        psi[self.index([bitstring])[0]] = 1.0
        return psi

    def memory_bytes(self, n_vectors: int = 1, complex_: bool = True) -> int:
        item = 16 if complex_ else 8
        return self.dim * (8 + n_vectors * item)

    def __repr__(self) -> str:
        return f"SectorSpace(n={self.n}, n_a={self.n_a}, dim={self.dim}, blocks={len(self.blocks)})"


def full_space(n: int, n_a: int | None = None) -> SectorSpace:
    """Unconstrained register in the computational frame."""
    return SectorSpace(n, n_a, (), rotated=False)


def hadamard_all(vec: np.ndarray, n: int) -> np.ndarray:
    """Apply a Hadamard to every qubit (fast Walsh-Hadamard transform)."""
    out = np.array(vec, dtype=np.result_type(vec.dtype, float), copy=True)
    h = 1
    while h < out.shape[0]:
        v = out.reshape(-1, 2, h)
        a = v[:, 0, :].copy()
        v[:, 0, :] += v[:, 1, :]
        v[:, 1, :] = a - v[:, 1, :]
        h *= 2
    return out / math.sqrt(1 << n)


class CompiledOperator:
    """Operator sum grouped by flip mask for fast application on a space."""

    def __init__(self, space: SectorSpace, h: OperatorSum):
        self.space = space
        self.source = h
        groups: dict[int, list] = {}
        complex_ = False
        for c, p in h:
            q = _frame(p, space.rotated)
            k = (q.phase + (q.x & q.z).bit_count()) % 4
            coeff = c * (1j ** k)
            complex_ |= k % 2 == 1
            groups.setdefault(q.x, []).append((q.z, coeff))
        gx, gstart, tz, tc = [], [0], [], []
        for x in sorted(groups):
            gx.append(x)
            for z, c in groups[x]:
                tz.append(z)
                tc.append(c)
            gstart.append(len(tz))
        self.is_complex = complex_
        dt = complex if complex_ else float
        self.gx = np.array(gx, dtype=np.int64)
        self.gstart = np.array(gstart, dtype=np.int64)
        self.tz = np.array(tz if tz else [0], dtype=np.int64)
        self.tc = np.array(tc if tc else [0], dtype=dt) if complex_ else np.real(np.array(tc if tc else [0.0])).astype(float)

    @property
    def shape(self) -> tuple[int, int]:
        return self.space.dim, self.space.dim

    def matvec(self, psi: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        psi = np.ascontiguousarray(psi)
        dt = np.result_type(psi.dtype, self.tc.dtype)
        if psi.dtype != dt:
            psi = psi.astype(dt)
        if out is None:
            out = np.empty(self.space.dim, dtype=dt)
        if not len(self.gx):
            out[:] = 0
            return out
        return kernels.matvec(self.space.states, *self.space._tables, self.gx, self.gstart, self.tz, self.tc, psi, out)

    __call__ = matvec

    def expectation(self, psi: np.ndarray) -> float:
        return float(np.real(np.vdot(psi, self.matvec(psi))))

    def linear_operator(self, dtype=None) -> spla.LinearOperator:
        dt = dtype or (complex if self.is_complex else float)
        return spla.LinearOperator(self.shape, matvec=lambda v: self.matvec(np.ravel(v)), dtype=dt)

    def to_sparse(self) -> sp.csr_matrix:
        if not len(self.gx):
            return sp.csr_matrix(self.shape)
        r, c, v = kernels.coo(self.space.states, *self.space._tables, self.gx, self.gstart, self.tz, self.tc)
        return sp.csr_matrix((v, (r, c)), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        if self.space.dim > 4 * DENSE_LIMIT:
            raise BudgetExceeded(f"dense matrix of dimension {self.space.dim} requested")
        return self.to_sparse().toarray()


def _as_operator(h, space: SectorSpace | None) -> CompiledOperator:
    if isinstance(h, CompiledOperator):
        return h
    if space is None:
        space = full_space(h.n)
    return space.compile(h)


# ---------------------------------------------------------------------------
# eigenpairs
# ---------------------------------------------------------------------------
@dataclass
class StateVector:
    amplitudes: np.ndarray
    space: SectorSpace

    @property
    def register_size(self) -> int:
        return self.space.n

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def full(self) -> np.ndarray:
        return self.space.embed(self.amplitudes)


def residual(op: CompiledOperator, energy: float, psi: np.ndarray) -> float:
    return float(np.linalg.norm(op.matvec(psi) - energy * psi))


def _fix_sign(psi: np.ndarray) -> np.ndarray:
    """Deterministic global phase: largest component real and positive."""
    k = int(np.argmax(np.abs(psi)))
    ph = psi[k] / abs(psi[k])
    return psi / ph if np.iscomplexobj(psi) else psi * np.sign(psi[k])


def ground_state(h, space: SectorSpace | None = None, tol: float = 1e-9, maxiter: int = 20000,
                 v0: np.ndarray | None = None) -> tuple[float, StateVector]:
    """Lowest eigenpair, checked for ``||H psi - E psi|| < tol``.

    Small spaces are diagonalized densely; larger ones use implicitly restarted
    Lanczos on the streaming matrix-vector product.
    """
    op = _as_operator(h, space)
    sp_ = op.space
    if sp_.dim == 0:
        raise ValueError("empty sector")
    if sp_.dim <= DENSE_LIMIT:
        w, v = np.linalg.eigh(op.to_dense())
        e, psi = float(w[0]), v[:, 0]
    else:
        if v0 is None:
            v0 = np.random.default_rng(12345).standard_normal(sp_.dim)
            if op.is_complex:
                v0 = v0 + 0j
        lin = op.linear_operator()
        try:
            w, v = spla.eigsh(lin, k=1, which="SA", v0=v0, tol=1e-13, maxiter=maxiter, ncv=min(40, sp_.dim - 1))
        except spla.ArpackNoConvergence as exc:
            if not len(exc.eigenvalues):
                raise NonConvergence("Lanczos did not converge") from exc
            w, v = exc.eigenvalues, exc.eigenvectors
        e, psi = float(w[0]), v[:, 0]
    psi = _fix_sign(psi / np.linalg.norm(psi))
    res = residual(op, e, psi)
    if res > tol:
        # one refinement pass by shifted Lanczos restart from the estimate
        if sp_.dim > DENSE_LIMIT:
            w, v = spla.eigsh(op.linear_operator(), k=1, which="SA", v0=psi, tol=0, maxiter=maxiter,
                              ncv=min(60, sp_.dim - 1))
            e, psi = float(w[0]), _fix_sign(v[:, 0] / np.linalg.norm(v[:, 0]))
            res = residual(op, e, psi)
        if res > tol:
            raise NonConvergence(f"ground state residual {res:.3e} above {tol:.1e}")
    return e, StateVector(psi, sp_)


def full_spectrum(h, space: SectorSpace | None = None) -> tuple[np.ndarray, np.ndarray]:
    op = _as_operator(h, space)
    if op.space.dim > 4 * DENSE_LIMIT:
        raise BudgetExceeded(f"dense diagonalization of dimension {op.space.dim}")
    return np.linalg.eigh(op.to_dense())


def middle_window(dim: int, fraction: float = 0.5) -> tuple[int, int]:
    """Index range ``[lo, hi)`` covering the central ``fraction`` of a spectrum."""
    lo = int(math.floor(dim * (1 - fraction) / 2))
    hi = max(lo + 1, int(math.ceil(dim * (1 + fraction) / 2)))
    return lo, min(hi, dim)


def draw_middle_index(dim: int, seed: int, fraction: float = 0.5) -> int:
    lo, hi = middle_window(dim, fraction)
    return int(np.random.default_rng(seed).integers(lo, hi))


def eigenstate_near(h, selector: int | dict, space: SectorSpace | None = None,
                    fraction: float = 0.5) -> tuple[float, StateVector, int]:
    """Eigenpair by index or by seeded random draw from the spectrum middle.

    ``selector`` is an index ``k`` or ``{"seed": s}``.  Returns
    ``(energy, state, index)``.
    """
    op = _as_operator(h, space)
    dim = op.space.dim
    if isinstance(selector, dict):
        k = draw_middle_index(dim, int(selector["seed"]), fraction)
    else:
        k = int(selector)
    if not 0 <= k < dim:
        raise IndexError(f"eigenstate index {k} outside [0, {dim})")
    if k == 0:
        e, st = ground_state(op)
        return e, st, 0
    if dim > 4 * DENSE_LIMIT:
        if k > 20:
            raise BudgetExceeded(f"index {k} needs dense diagonalization of dimension {dim}")
        w, v = spla.eigsh(op.linear_operator(), k=k + 1, which="SA", tol=1e-13)
        order = np.argsort(w)
        e, psi = float(w[order[k]]), v[:, order[k]]
    else:
        # single-eigenpair solve in place; the transpose of the symmetric
        # matrix is Fortran-ordered, so LAPACK works without a copy
        w, v = sla.eigh(op.to_dense().T, subset_by_index=[k, k], overwrite_a=True, check_finite=False, driver="evr")
        e, psi = float(w[0]), v[:, 0]
    psi = _fix_sign(psi / np.linalg.norm(psi))
    return e, StateVector(psi, op.space), k


# ---------------------------------------------------------------------------
# time evolution
# ---------------------------------------------------------------------------
@dataclass
class KrylovStats:
    steps: int = 0
    rejected: int = 0
    max_norm_drift: float = 0.0
    energy_drift: float = 0.0


class KrylovPropagator:
    """Adaptive Lanczos propagator for ``exp(-i H t)``.

    Each step builds an ``m``-dimensional Krylov space, exponentiates the
    tridiagonal projection and accepts the step if the a-posteriori error
    estimate ``beta_m |[exp(-i T dt)]_{m-1,0}|`` is below ``tol``; the step is
    rescaled using the asymptotic ``dt**m`` behaviour of the error.
    """

    def __init__(self, op: CompiledOperator, m: int = 30, tol: float = 1e-12, min_dt: float = 1e-10):
        self.op = op
        self.m = m
        self.tol = tol
        self.min_dt = min_dt
        self.dt = None
        self.stats = KrylovStats()

    def _lanczos(self, psi: np.ndarray):
        m = min(self.m, self.op.space.dim)
        V = np.empty((m + 1, psi.shape[0]), dtype=complex)
        alpha = np.zeros(m)
        beta = np.zeros(m)
        nrm = np.linalg.norm(psi)
        V[0] = psi / nrm
        w = np.empty(psi.shape[0], dtype=complex)
        k_used = m
        for j in range(m):
            self.op.matvec(V[j], w)
            alpha[j] = np.real(np.vdot(V[j], w))
            w -= alpha[j] * V[j]
            if j:
                w -= beta[j - 1] * V[j - 1]
            # full reorthogonalization keeps the small basis orthonormal
            w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
            b = np.linalg.norm(w)
            beta[j] = b
            if b < 1e-13 * max(1.0, abs(alpha[j])):
                k_used = j + 1
                break
            V[j + 1] = w / b
        return V, alpha[:k_used], beta[:k_used], nrm, k_used

    def step(self, psi: np.ndarray, t_max: float) -> tuple[np.ndarray, float]:
        V, a, b, nrm, k = self._lanczos(psi)
        T = np.diag(a) + np.diag(b[: k - 1], 1) + np.diag(b[: k - 1], -1)
        ev, U = np.linalg.eigh(T)
        happy = k < self.m or k == self.op.space.dim
        if self.dt is None:
            spread = max(float(ev[-1] - ev[0]), 1e-12)
            self.dt = min(t_max, k / spread)
        dt = min(self.dt, t_max)
        while True:
            c = U @ (np.exp(-1j * ev * dt) * U[0].conj())
            err = 0.0 if happy else nrm * b[k - 1] * abs(c[k - 1])
            if err <= self.tol or happy:
                break
            self.stats.rejected += 1
            dt *= 0.9 * (self.tol / err) ** (1.0 / k)
            if dt < self.min_dt:
                raise NonConvergence(f"Krylov step underflow (dt={dt:.2e})")
        out = nrm * (c @ V[:k])
        if not happy:
            grow = 0.9 * (self.tol / max(err, 1e-300)) ** (1.0 / k)
            self.dt = dt * min(2.0, max(grow, 1.0))
        self.stats.steps += 1
        return out, dt

    def propagate(self, psi: np.ndarray, t: float) -> np.ndarray:
        out = np.asarray(psi, dtype=complex)
        n0 = np.linalg.norm(out)
        done = 0.0
        while done < t - 1e-15 * max(1.0, t):
            out, dt = self.step(out, t - done)
            done += dt
            drift = abs(np.linalg.norm(out) - n0)
            self.stats.max_norm_drift = max(self.stats.max_norm_drift, drift)
        return out


def evolve(h, state: StateVector | np.ndarray, t_grid: Sequence[float], space: SectorSpace | None = None,
           krylov_dim: int = 30, tol: float = 1e-12, callback=None) -> list[StateVector]:
    """States ``exp(-i H t)|psi>`` at each grid time (nondecreasing, from t=0).

    ``callback(t, state)`` is called at each grid point when given; the list of
    states is still returned unless the callback returns ``False`` for storage.
    """
    if isinstance(state, StateVector):
        space = state.space
        psi = state.amplitudes
    else:
        psi = np.asarray(state)
    op = _as_operator(h, space)
    prop = KrylovPropagator(op, krylov_dim, tol)
    t_prev = 0.0
    out = []
    cur = psi.astype(complex)
    e0 = op.expectation(cur)
    for t in t_grid:
        if t < t_prev - 1e-14:
            raise ValueError("time grid must be nondecreasing from 0")
        if t > t_prev:
            cur = prop.propagate(cur, t - t_prev)
        t_prev = t
        st = StateVector(cur.copy(), op.space)
        keep = True
        if callback is not None:
            keep = callback(t, st) is not False
        if keep:
            out.append(st)
    e1 = op.expectation(cur)
    prop.stats.energy_drift = abs(e1 - e0) / max(1.0, abs(e0))
    evolve.last_stats = prop.stats
    return out


evolve.last_stats = None


def dense_evolve(h, psi: np.ndarray, t: float, space: SectorSpace | None = None) -> np.ndarray:
    """Reference ``exp(-iHt) psi`` via a dense matrix exponential."""
    op = _as_operator(h, space)
    return sla.expm(-1j * t * op.to_dense()) @ psi


# ---------------------------------------------------------------------------
# density matrices and thermal states
# ---------------------------------------------------------------------------
@dataclass
class DensityMatrix:
    """Block-diagonal density matrix; ``labels`` tag the blocks.

    ``basis`` names the register subset the matrix lives on.
    """

    blocks: list
    labels: list = field(default_factory=list)
    basis: str = ""

    @classmethod
    def from_matrix(cls, m: np.ndarray, basis: str = "") -> "DensityMatrix":
        return cls([np.asarray(m)], [None], basis)

    @property
    def dim(self) -> int:
        return sum(b.shape[0] for b in self.blocks)

    @property
    def matrix(self) -> np.ndarray:
        if self.dim > 4 * DENSE_LIMIT:
            raise BudgetExceeded("dense density matrix too large")
        return sla.block_diag(*self.blocks) if self.blocks else np.zeros((0, 0))

    def trace(self) -> float:
        return float(sum(np.real(np.trace(b)) for b in self.blocks))

    def eigenvalues(self) -> list[np.ndarray]:
        return [np.linalg.eigvalsh(b) for b in self.blocks]

    def check(self, herm_tol: float = 1e-12, trace_tol: float = 1e-10, pos_tol: float = 1e-10) -> list[str]:
        """List of violated invariants (empty when valid)."""
        bad = []
        for k, b in enumerate(self.blocks):
            if b.size and np.max(np.abs(b - b.conj().T)) > herm_tol:
                bad.append(f"block {k} not Hermitian")
        if abs(self.trace() - 1) > trace_tol:
            bad.append(f"trace {self.trace():.12f} != 1")
        for k, ev in enumerate(self.eigenvalues()):
            if ev.size and ev.min() < -pos_tol:
                bad.append(f"block {k} has eigenvalue {ev.min():.3e}")
        return bad


@dataclass
class ThermalModel:
    """Canonical ensemble of a known spectrum."""

    energies: np.ndarray

    def weights(self, beta: float) -> np.ndarray:
        e = self.energies
        w = np.exp(-beta * (e - e.min()))
        return w / w.sum()

    def energy(self, beta: float) -> float:
        return float(self.weights(beta) @ self.energies)

    def entropy(self, beta: float) -> float:
        p = self.weights(beta)
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())


def _spectrum_of(h) -> np.ndarray:
    if isinstance(h, ThermalModel):
        return h.energies
    if isinstance(h, OperatorSum):
        return np.linalg.eigvalsh(full_space(h.n).compile(h).to_dense())
    if isinstance(h, CompiledOperator):
        return np.linalg.eigvalsh(h.to_dense())
    if isinstance(h, (list, tuple)):
        return np.concatenate([np.linalg.eigvalsh(b) for b in h])
    a = np.asarray(h)
    return np.linalg.eigvalsh(a) if a.ndim == 2 else a


def thermal_density_matrix(h, beta: float, space: SectorSpace | None = None) -> DensityMatrix:
    """``exp(-beta H) / Tr`` by full eigendecomposition.

    ``h`` may be an OperatorSum (optionally restricted to ``space``), a dense
    Hermitian matrix or a list of dense blocks (block-diagonal operator).
    """
    if beta < 0:
        raise ValueError("negative beta")
    if isinstance(h, OperatorSum):
        blocks = [_as_operator(h, space).to_dense()]
    elif isinstance(h, CompiledOperator):
        blocks = [h.to_dense()]
    elif isinstance(h, (list, tuple)):
        blocks = list(h)
    else:
        blocks = [np.asarray(h)]
    if sum(b.shape[0] for b in blocks) > 4 * DENSE_LIMIT:
        raise BudgetExceeded("thermal state beyond dense budget")
    eig = [np.linalg.eigh(b) for b in blocks]
    e0 = min(w.min() for w, _ in eig)
    z = sum(np.exp(-beta * (w - e0)).sum() for w, _ in eig)
    out = []
    for w, v in eig:
        p = np.exp(-beta * (w - e0)) / z
        out.append((v * p) @ v.conj().T)
    return DensityMatrix(out, [None] * len(out), "thermal")


BETA_CAP = 1e6


@dataclass
class BetaMatch:
    beta: float
    capped: bool
    residual: float


def match_beta(h, target: dict, beta_max: float = 1e3, rtol: float = 1e-6) -> BetaMatch:
    """Inverse temperature whose canonical energy or entropy equals the target.

    ``target`` is ``{"energy": E}`` or ``{"entropy": S}``.  Both quantities
    decrease monotonically with beta on ``[0, inf)``; bisection brackets the
    root.  Targets at the ground energy (or zero entropy) return a capped
    sentinel.
    """
    model = h if isinstance(h, ThermalModel) else ThermalModel(np.sort(_spectrum_of(h)))
    if "energy" in target:
        f, goal = model.energy, float(target["energy"])
        floor = float(model.energies.min())
    elif "entropy" in target:
        f, goal = model.entropy, float(target["entropy"])
        floor = 0.0
    else:
        raise ValueError("target needs 'energy' or 'entropy'")
    top = f(0.0)
    scale = max(abs(goal), abs(top - floor), 1e-12)
    if goal > top + rtol * scale:
        raise ValueError(f"target {goal} above the infinite-temperature value {top}; negative beta rejected")
    if goal < floor - rtol * scale:
        raise ValueError(f"target {goal} below the attainable minimum {floor}")
    if abs(goal - top) <= rtol * scale:
        return BetaMatch(0.0, False, abs(goal - top))
    if abs(goal - floor) <= rtol * scale:
        return BetaMatch(BETA_CAP, True, abs(goal - floor))
    lo, hi = 0.0, 1.0
    while f(hi) > goal:
        if hi >= beta_max:
            return BetaMatch(BETA_CAP, True, abs(f(hi) - goal))
        lo, hi = hi, min(2 * hi, beta_max)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if abs(val - goal) <= rtol * scale * 1e-3 or hi - lo < 1e-15 * hi:
            lo = hi = mid
            break
        if val > goal:
            lo = mid
        else:
            hi = mid
    b = 0.5 * (lo + hi)
    return BetaMatch(b, False, abs(f(b) - goal))


def estimate_memory(dim: int, krylov_dim: int = 30, dense_a: int = 0) -> int:
    """Bytes for the basis table, Krylov vectors and dense A-side blocks."""
    return dim * 8 + (krylov_dim + 4) * dim * 16 + dense_a * dense_a * 16


def check_budget(required: int, budget_gb: float):
    avail = budget_gb * 1024 ** 3
    if required > avail:
        raise BudgetExceeded(f"needs {required / 1024 ** 3:.2f} GB, budget {budget_gb:.2f} GB")
