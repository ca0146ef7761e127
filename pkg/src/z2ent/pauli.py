"""Signed Pauli strings on a flat qubit register.

A string is stored as two bitmasks and a phase exponent::

    P = i**phase * prod_q sigma(x_q, z_q)

with sigma(0,0)=I, sigma(1,0)=X, sigma(0,1)=Z and sigma(1,1)=Y.  With this
(Y-)convention a string is Hermitian exactly when ``phase`` is 0 or 2.
Qubit ``q`` is bit ``q`` of a computational basis index (little endian).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

_PHASES = (1.0 + 0j, 1j, -1.0 + 0j, -1j)


def _popcount(v: int) -> int:
    return v.bit_count()


@dataclass(frozen=True, slots=True)
class PauliString:
    n: int
    x: int = 0
    z: int = 0
    phase: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("register size must be non-negative")
        if (self.x | self.z) >> self.n:
            raise ValueError("mask exceeds register size")
        object.__setattr__(self, "phase", self.phase % 4)

    # -- construction ---------------------------------------------------
    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls(n)

    @classmethod
    def from_ops(cls, n: int, ops: Mapping[int, str], phase: int = 0) -> "PauliString":
        """Build from ``{qubit: 'X' | 'Y' | 'Z' | 'I'}``."""
        x = z = 0
        for q, c in ops.items():
            if not 0 <= q < n:
                raise IndexError(f"qubit {q} outside register of size {n}")
            c = c.upper()
            if c in "XY":
                x |= 1 << q
            if c in "ZY":
                z |= 1 << q
            if c not in "IXYZ":
                raise ValueError(f"unknown Pauli {c!r}")
        return cls(n, x, z, phase)

    @classmethod
    def xs(cls, n: int, qubits: Iterable[int]) -> "PauliString":
        return cls.from_ops(n, {q: "X" for q in qubits})

    @classmethod
    def zs(cls, n: int, qubits: Iterable[int]) -> "PauliString":
        return cls.from_ops(n, {q: "Z" for q in qubits})

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        """Parse labels like ``'-iXZI'``; the leftmost letter is qubit 0."""
        s = label.strip()
        phase = 0
        if s.startswith("+"):
            s = s[1:]
        elif s.startswith("-"):
            phase = 2
            s = s[1:]
        if s.startswith("i"):
            phase += 1
            s = s[1:]
        return cls.from_ops(len(s), dict(enumerate(s)), phase)

    # -- properties -------------------------------------------------------
    @property
    def coefficient(self) -> complex:
        return _PHASES[self.phase]

    @property
    def support(self) -> int:
        return self.x | self.z

    def qubits(self) -> list[int]:
        s, out, q = self.support, [], 0
        while s:
            if s & 1:
                out.append(q)
            s >>= 1
            q += 1
        return out

    @property
    def weight(self) -> int:
        return _popcount(self.support)

    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def is_hermitian(self) -> bool:
        return self.phase % 2 == 0

    def label(self) -> str:
        chars = "IXZY"
        body = "".join(chars[((self.x >> q) & 1) | (((self.z >> q) & 1) << 1)] for q in range(self.n))
        return ("", "i", "-", "-i")[self.phase] + body

    def __repr__(self) -> str:
        return f"PauliString({self.label()!r})"

    def unsigned(self) -> "PauliString":
        return PauliString(self.n, self.x, self.z, 0)

    # -- algebra ---------------------------------------------------------
    def _check(self, other: "PauliString"):
        if self.n != other.n:
            raise ValueError(f"register size mismatch: {self.n} vs {other.n}")

    def __mul__(self, other: "PauliString") -> "PauliString":
        return multiply(self, other)

    def __neg__(self) -> "PauliString":
        return PauliString(self.n, self.x, self.z, self.phase + 2)

    def commutes(self, other: "PauliString") -> bool:
        return commutes(self, other)

    def hadamard(self) -> "PauliString":
        """Conjugate by a Hadamard on every qubit (X <-> Z, Y -> -Y)."""
        return PauliString(self.n, self.z, self.x, self.phase + 2 * _popcount(self.x & self.z))

    def embed(self, n: int, mapping: Mapping[int, int] | None = None) -> "PauliString":
        """Relabel qubits into a register of size ``n``."""
        if mapping is None:
            return PauliString(n, self.x, self.z, self.phase)
        x = z = 0
        for q in self.qubits():
            t = mapping[q]
            x |= ((self.x >> q) & 1) << t
            z |= ((self.z >> q) & 1) << t
        return PauliString(n, x, z, self.phase)

    def to_matrix(self) -> np.ndarray:
        dim = 1 << self.n
        idx = np.arange(dim, dtype=np.int64)
        out = np.zeros((dim, dim), dtype=complex)
        sgn, tgt = _action(self, idx)
        out[tgt, idx] = sgn
        return out

    def apply(self, state: np.ndarray) -> np.ndarray:
        return apply(self, state)


def multiply(a: PauliString, b: PauliString) -> PauliString:
    a._check(b)
    # X^x Z^z form carries an extra i per Y
    ka = a.phase + _popcount(a.x & a.z)
    kb = b.phase + _popcount(b.x & b.z)
    x, z = a.x ^ b.x, a.z ^ b.z
    k = ka + kb + 2 * _popcount(a.z & b.x) - _popcount(x & z)
    return PauliString(a.n, x, z, k)


def commutes(a: PauliString, b: PauliString) -> bool:
    a._check(b)
    return (_popcount(a.x & b.z) + _popcount(a.z & b.x)) % 2 == 0


def _parity(arr: np.ndarray) -> np.ndarray:
    return np.bitwise_count(arr) & 1


def _action(op: PauliString, idx: np.ndarray):
    """Return (amplitude factor, target index) of ``op`` on basis states ``idx``."""
    k = (op.phase + _popcount(op.x & op.z)) % 4
    base = _PHASES[k] if k % 2 else _PHASES[k].real
    sgn = np.where(_parity(idx & op.z), -base, base)
    return sgn, idx ^ op.x


def apply(op: PauliString, state: np.ndarray) -> np.ndarray:
    """Return ``op |state>`` for a state (or a stack of states along axis 0)."""
    state = np.asarray(state)
    dim = 1 << op.n
    if state.shape[0] != dim:
        raise ValueError(f"state dimension {state.shape[0]} != 2**{op.n}")
    idx = np.arange(dim, dtype=np.int64)
    sgn, tgt = _action(op, idx)
    out = np.empty(state.shape, dtype=np.result_type(state.dtype, sgn.dtype))
    out[tgt] = sgn.reshape((-1,) + (1,) * (state.ndim - 1)) * state
    return out


class OperatorSum:
    """Real linear combination of Hermitian Pauli strings, kept merged.

    Terms with identical masks are combined; a stored term always has
    phase 0, with any sign folded into the real coefficient.
    """

    __slots__ = ("n", "_terms")

    def __init__(self, n: int, terms: Iterable[tuple[float, PauliString]] = ()):
        self.n = n
        self._terms: dict[tuple[int, int], float] = {}
        for c, p in terms:
            self.add(c, p)

    def add(self, coeff: float, op: PauliString) -> "OperatorSum":
        if op.n != self.n:
            raise ValueError(f"register size mismatch: {op.n} vs {self.n}")
        if not op.is_hermitian():
            raise ValueError(f"non-Hermitian string {op.label()} in OperatorSum")
        c = float(coeff) * (1.0 if op.phase == 0 else -1.0)
        key = (op.x, op.z)
        c += self._terms.get(key, 0.0)
        if c == 0.0:
            self._terms.pop(key, None)
        else:
            self._terms[key] = c
        return self

    @property
    def terms(self) -> list[tuple[float, PauliString]]:
        return [(c, PauliString(self.n, x, z)) for (x, z), c in self._terms.items()]

    def __iter__(self) -> Iterator[tuple[float, PauliString]]:
        return iter(self.terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __add__(self, other: "OperatorSum") -> "OperatorSum":
        out = self.copy()
        for c, p in other:
            out.add(c, p)
        return out

    def scaled(self, factor: float) -> "OperatorSum":
        return OperatorSum(self.n, ((factor * c, p) for c, p in self))

    def copy(self) -> "OperatorSum":
        out = OperatorSum(self.n)
        out._terms = dict(self._terms)
        return out

    def map(self, fn) -> "OperatorSum":
        """Apply ``fn`` to every string, keeping coefficients."""
        out = None
        for c, p in self:
            q = fn(p)
            if out is None:
                out = OperatorSum(q.n)
            out.add(c, q)
        return out if out is not None else OperatorSum(self.n)

    def identity_part(self) -> float:
        return self._terms.get((0, 0), 0.0)

    def commutes_with(self, op: PauliString) -> bool:
        return all(commutes(p, op) for _, p in self)

    def to_dense(self) -> np.ndarray:
        dim = 1 << self.n
        idx = np.arange(dim, dtype=np.int64)
        out = np.zeros((dim, dim), dtype=complex)
        for c, p in self:
            sgn, tgt = _action(p, idx)
            out[tgt, idx] += c * sgn
        if not np.any(out.imag):
            return out.real
        return out

    def to_sparse(self):
        import scipy.sparse as sp

        dim = 1 << self.n
        idx = np.arange(dim, dtype=np.int64)
        rows, cols, vals = [], [], []
        for c, p in self:
            sgn, tgt = _action(p, idx)
            rows.append(tgt)
            cols.append(idx)
            vals.append(c * sgn)
        if not rows:
            return sp.csr_matrix((dim, dim))
        v = np.concatenate(vals)
        if not np.any(v.imag):
            v = v.real
        return sp.csr_matrix((v, (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim))

    def __repr__(self) -> str:
        body = " ".join(f"{c:+g}*{p.label()}" for c, p in self)
        return f"OperatorSum(n={self.n}: {body})"
