"""Local variational entanglement Hamiltonians by relative-entropy minimization.

The ansatz is ``sigma = exp(-sum_k beta_k h_k) / Z`` with ``h_k`` the energy
terms supported in A.  Its relative entropy to ``rho``,

    S(rho || sigma) = -S(rho) + log Z + sum_k beta_k <h_k>_rho ,

is convex in ``beta`` with gradient ``<h_k>_rho - <h_k>_sigma``.  All operators
are handled as dense blocks over the A-side symmetry sectors, on which both
``rho`` and ``sigma`` are block diagonal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .entanglement import CUTOFF, von_neumann_entropy
from .pauli import PauliString
from .spectra import DensityMatrix

log = logging.getLogger(__name__)


@dataclass
class AnsatzOperator:
    label: str  # 'electric' | 'magnetic'
    location: tuple
    op: PauliString | None
    blocks: list  # dense matrix per sector block


@dataclass
class VariationalAnsatz:
    """Operators, their (tied) inverse temperatures and the block layout.

    ``tie_groups[k]`` is the parameter index used by operator ``k``; operators
    sharing an index share one ``beta``.
    """

    operators: list
    betas: np.ndarray
    tie_groups: list = field(default_factory=list)

    def __post_init__(self):
        if not self.tie_groups:
            self.tie_groups = list(range(len(self.operators)))
        self.betas = np.asarray(self.betas, float)
        if len(self.betas) != self.n_params:
            raise ValueError(f"{len(self.betas)} betas for {self.n_params} parameters")
        nb = {len(o.blocks) for o in self.operators}
        if len(nb) > 1:
            raise ValueError("operators disagree on the block layout")
        self._proj = np.zeros((len(self.operators), self.n_params))
        for k, g in enumerate(self.tie_groups):
            self._proj[k, g] = 1.0

    @property
    def n_params(self) -> int:
        return max(self.tie_groups) + 1 if self.tie_groups else 0

    def operator_betas(self, params: np.ndarray | None = None) -> np.ndarray:
        return self._proj @ (self.betas if params is None else np.asarray(params, float))

    def group_gradient(self, per_op: np.ndarray) -> np.ndarray:
        return self._proj.T @ per_op

    def with_betas(self, params) -> "VariationalAnsatz":
        return VariationalAnsatz(self.operators, np.array(params, float), list(self.tie_groups))

    def generator_blocks(self, params=None) -> list[np.ndarray]:
        b = self.operator_betas(params)
        nblk = len(self.operators[0].blocks)
        out = []
        for s in range(nblk):
            m = sum(bk * o.blocks[s] for bk, o in zip(b, self.operators))
            out.append(np.asarray(m))
        return out

    def density_matrix(self, params=None) -> DensityMatrix:
        eig = [np.linalg.eigh(k) for k in self.generator_blocks(params)]
        logz = logsumexp(np.concatenate([-w for w, _ in eig]))
        return DensityMatrix([(v * np.exp(-w - logz)) @ v.conj().T for w, v in eig], [], "A")

    @classmethod
    def from_paulis(cls, n: int, ops: Sequence[PauliString], betas=None, tie_groups=None, labels=None):
        """Ansatz on a full ``n``-qubit register (single block)."""
        operators = [AnsatzOperator((labels[k] if labels else "term"), (k,), op, [op.to_matrix()])
                     for k, op in enumerate(ops)]
        tg = list(tie_groups) if tie_groups is not None else list(range(len(ops)))
        np_ = max(tg) + 1 if tg else 0
        b = np.full(np_, 0.1) if betas is None else np.asarray(betas, float)
        return cls(operators, b, tg)


def _check_layout(rho: DensityMatrix, ansatz: VariationalAnsatz):
    nb = len(ansatz.operators[0].blocks)
    if nb != len(rho.blocks):
        raise ValueError(f"density matrix has {len(rho.blocks)} blocks, ansatz {nb}")
    for s, b in enumerate(rho.blocks):
        if ansatz.operators[0].blocks[s].shape != b.shape:
            raise ValueError("ansatz operator outside the support of rho")


class _Objective:
    def __init__(self, rho: DensityMatrix, ansatz: VariationalAnsatz):
        _check_layout(rho, ansatz)
        self.rho = rho
        self.ansatz = ansatz
        self.s_rho = von_neumann_entropy(rho, CUTOFF)
        self.h_rho = np.array([sum(np.real(np.sum(b.T * m)) for b, m in zip(rho.blocks, o.blocks))
                               for o in ansatz.operators])
        self.n_eval = 0

    def __call__(self, params):
        self.n_eval += 1
        a = self.ansatz
        eig = [np.linalg.eigh(k) for k in a.generator_blocks(params)]
        logz = float(logsumexp(np.concatenate([-w for w, _ in eig])))
        b = a.operator_betas(params)
        val = -self.s_rho + logz + float(b @ self.h_rho)
        h_sig = np.zeros(len(a.operators))
        for s, (w, v) in enumerate(eig):
            sig = (v * np.exp(-w - logz)) @ v.conj().T
            for k, o in enumerate(a.operators):
                h_sig[k] += np.real(np.sum(sig.T * o.blocks[s]))
        grad = a.group_gradient(self.h_rho - h_sig)
        return val, grad


def relative_entropy(rho: DensityMatrix, ansatz: VariationalAnsatz, params=None) -> float:
    """``S(rho || sigma(beta))`` in nats from the closed form."""
    val, _ = _Objective(rho, ansatz)(ansatz.betas if params is None else params)
    return val


def relative_entropy_gradient(rho: DensityMatrix, ansatz: VariationalAnsatz, params=None) -> np.ndarray:
    _, g = _Objective(rho, ansatz)(ansatz.betas if params is None else params)
    return g


@dataclass
class FitResult:
    betas: np.ndarray  # per parameter (tie group)
    operator_betas: np.ndarray
    relative_entropy: float
    entropy_exact: float
    entropy_variational: float
    trajectory: list
    converged: bool
    gradient_norm: float
    n_evaluations: int
    message: str = ""
    sigma: DensityMatrix | None = None


def fit(rho: DensityMatrix, ansatz: VariationalAnsatz, gtol: float = 1e-8, max_evaluations: int = 2000,
        method: str = "BFGS") -> FitResult:
    """Minimize the relative entropy over the ansatz parameters.

    Quasi-Newton (BFGS with line search) on the exact gradient; stops when the
    gradient infinity norm is below ``gtol`` or after ``max_evaluations``.
    Returns the best iterate, flagged when not converged.
    """
    obj = _Objective(rho, ansatz)
    traj = []
    best = {"x": np.array(ansatz.betas, float), "f": np.inf}

    def f(x):
        v, g = obj(x)
        if v < best["f"]:
            best["x"], best["f"] = np.array(x), v
        return v, g

    def cb(xk, *args):
        traj.append((len(traj) + 1, float(obj(xk)[0])))

    traj.append((0, float(obj(ansatz.betas)[0])))
    opts = {"gtol": gtol, "maxiter": max_evaluations}
    if method.upper() == "L-BFGS-B":
        opts = {"gtol": gtol, "maxfun": max_evaluations, "maxiter": max_evaluations, "ftol": 1e-15}
    else:
        opts["norm"] = np.inf
    res = minimize(f, np.array(ansatz.betas, float), jac=True, method=method, callback=cb, options=opts)
    x = res.x if res.fun <= best["f"] else best["x"]
    val, g = obj(x)
    gn = float(np.max(np.abs(g))) if len(g) else 0.0
    converged = gn < gtol or (bool(res.success) and gn < 1e3 * gtol)
    fitted = ansatz.with_betas(x)
    sigma = fitted.density_matrix()
    return FitResult(
        betas=np.array(x),
        operator_betas=fitted.operator_betas(),
        relative_entropy=float(val),
        entropy_exact=obj.s_rho,
        entropy_variational=von_neumann_entropy(sigma),
        trajectory=traj,
        converged=converged,
        gradient_norm=gn,
        n_evaluations=obj.n_eval,
        message=str(res.message),
        sigma=sigma,
    )


def ansatz_for_system(system, include_boundary: bool = False, tie: str = "column", init: float = 0.1,
                      labels_out: list | None = None) -> VariationalAnsatz:
    """Energy terms fully inside A of a cut system, optionally tied by column.

    ``tie='column'`` shares one beta among terms of the same kind, orientation
    and column (translation invariance parallel to the cut); ``tie='none'``
    keeps one beta per term.
    """
    terms = system.a_terms(include_boundary)
    ops, keys = [], []
    eps = 1.0 if system.electric_limit else system.epsilon
    for t in terms:
        # energy density as it enters H (boundary fluxes weighted like links)
        coeff = -1.0 if (t.kind == "magnetic" and not system.electric_limit) else -eps
        if t.kind == "magnetic" and system.electric_limit:
            coeff = -1.0
        blocks = [coeff * b for b in system.a_block_matrices(t.op)]
        ops.append(AnsatzOperator(t.kind, t.location, t.op, blocks))
        loc = t.location
        if t.kind == "magnetic":
            key = ("magnetic", loc[0])
        elif isinstance(loc[0], str):
            key = ("flux", loc[0])
        else:
            key = ("electric", loc[2], loc[0])
        keys.append(key if tie == "column" else (t.kind, loc))
    index = {}
    groups = [index.setdefault(k, len(index)) for k in keys]
    if labels_out is not None:
        labels_out.extend(sorted(index, key=index.get))
    return VariationalAnsatz(ops, np.full(len(index), init), groups)


def spectrum_match(rho: DensityMatrix, sigma: DensityMatrix, fraction: float = 0.5,
                   cutoff: float = CUTOFF) -> np.ndarray:
    """Relative deviation of the lowest ``fraction`` of sorted ES levels."""
    def xi(d, floor):
        ev = np.concatenate([np.linalg.eigvalsh(b) for b in d.blocks])
        ev = ev[ev > floor]
        return np.sort(-np.log(ev))

    a = xi(rho, cutoff)
    b = xi(sigma, 1e-300)
    k = max(1, int(len(a) * fraction))
    if len(b) < k:
        b = np.concatenate([b, np.full(k - len(b), np.inf)])
    return np.abs(b[:k] - a[:k]) / np.maximum(np.abs(a[:k]), 1e-12)
