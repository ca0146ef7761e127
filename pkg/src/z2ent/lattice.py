"""Lattice geometries, the gauge-variant Z2 Hamiltonian and its dual forms.

Links are labelled ``(c, r, d)`` with ``d`` in ``{'x', 'y'}``: the link leaving
site ``(c, r)`` in direction ``d``.  Plaquette ``(c, r)`` has lower-left corner
``(c, r)`` and edges ``(c,r,x)``, ``(c+1,r,y)``, ``(c,r+1,x)``, ``(c,r,y)``.

Every dual form is specified by substitution tables: the image of the electric
operator of each link and of each plaquette operator.  Hamiltonians are built by
inserting the tables into the original Hamiltonian, so the same tables drive
both the construction and the canonical-map check.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import reduce

from .pauli import OperatorSum, PauliString, commutes

Link = tuple  # (c, r, 'x' | 'y')
Site = tuple  # (c, r)


class Kind(str, enum.Enum):
    PERIODIC_TORUS = "PeriodicTorus"
    OPEN_CYLINDER = "OpenCylinder"
    CUT_TORUS = "CutTorus"


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeGeometry:
    kind: Kind
    nx_a: int
    ny: int
    nx_b: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.nx_a < 1 or self.ny < 1 or self.nx_b < 0:
            raise GeometryError(f"invalid lattice extents {self}")
        if self.kind is Kind.CUT_TORUS:
            if self.nx_a < 2 or self.nx_b < 2 or self.ny < 2:
                raise GeometryError("CutTorus needs nx_a >= 2, nx_b >= 2, ny >= 2")
        elif self.nx_b:
            raise GeometryError(f"{self.kind.value} takes nx_b = 0")
        if self.kind is Kind.PERIODIC_TORUS and (self.nx_a < 2 or self.ny < 2):
            raise GeometryError("PeriodicTorus needs nx >= 2 and ny >= 2")
        if self.kind is Kind.OPEN_CYLINDER and self.ny < 2:
            raise GeometryError("OpenCylinder needs ny >= 2")

    @property
    def nx(self) -> int:
        return self.nx_a + self.nx_b

    @classmethod
    def torus(cls, nx: int, ny: int) -> "LatticeGeometry":
        return cls(Kind.PERIODIC_TORUS, nx, ny)

    @classmethod
    def cylinder(cls, nx: int, ny: int) -> "LatticeGeometry":
        return cls(Kind.OPEN_CYLINDER, nx, ny)

    @classmethod
    def cut_torus(cls, nx_a: int, nx_b: int, ny: int) -> "LatticeGeometry":
        return cls(Kind.CUT_TORUS, nx_a, ny, nx_b)

    def describe(self) -> str:
        if self.kind is Kind.CUT_TORUS:
            return f"({self.nx_a}+{self.nx_b})x{self.ny} cut torus"
        return f"{self.nx_a}x{self.ny} {self.kind.value}"


def plaquette_links(c: int, r: int) -> tuple[Link, ...]:
    return ((c, r, "x"), (c + 1, r, "y"), (c, r + 1, "x"), (c, r, "y"))


def site_links(c: int, r: int) -> tuple[Link, ...]:
    return ((c, r, "x"), (c - 1, r, "x"), (c, r, "y"), (c, r - 1, "y"))


# ---------------------------------------------------------------------------
# original gauge-variant formulation (oracle)
# ---------------------------------------------------------------------------
@dataclass
class OriginalModel:
    geometry: LatticeGeometry
    n_qubits: int
    link_qubits: dict
    hamiltonian: OperatorSum
    gauss: list
    plaquettes: dict
    ribbon_x: PauliString
    ribbon_y: PauliString

    def link(self, c: int, r: int, d: str) -> int:
        g = self.geometry
        return self.link_qubits[(c % g.nx, r % g.ny, d)]


def build_original(geometry: LatticeGeometry, epsilon: float, electric_limit: bool = False) -> OriginalModel:
    """Gauge-variant Hamiltonian on every link of a periodic torus.

    Returns the model with its Gauss operators (one per site) and the two
    ribbon operators ``V_x = prod_c X_(c,0,y)`` and ``V_y = prod_r X_(0,r,x)``.
    """
    if geometry.kind is not Kind.PERIODIC_TORUS:
        raise GeometryError("the gauge-variant oracle is built on the periodic torus only")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    nx, ny = geometry.nx, geometry.ny
    n = 2 * nx * ny
    q = {}
    for r in range(ny):
        for c in range(nx):
            q[(c, r, "x")] = 2 * (r * nx + c)
            q[(c, r, "y")] = 2 * (r * nx + c) + 1

    def lq(link):
        c, r, d = link
        return q[(c % nx, r % ny, d)]

    plaqs = {(c, r): PauliString.zs(n, [lq(l) for l in plaquette_links(c, r)]) for r in range(ny) for c in range(nx)}
    h = OperatorSum(n)
    mag, el = (0.0, 1.0) if electric_limit else (1.0, epsilon)
    if mag:
        for p in plaqs.values():
            h.add(-mag, p)
    if el:
        for k in q.values():
            h.add(-el, PauliString.xs(n, [k]))
    gauss = [PauliString.xs(n, [lq(l) for l in site_links(c, r)]) for r in range(ny) for c in range(nx)]
    vx = PauliString.xs(n, [q[(c, 0, "y")] for c in range(nx)])
    vy = PauliString.xs(n, [q[(0, r, "x")] for r in range(ny)])
    return OriginalModel(geometry, n, q, h, gauss, plaqs, vx, vy)


# ---------------------------------------------------------------------------
# dual register and substitution tables
# ---------------------------------------------------------------------------
@dataclass
class DualRegister:
    geometry: LatticeGeometry
    n_qubits: int
    mu_qubits: dict
    sigma_qubits: dict
    winding_qubits: dict
    partition: dict

    def __post_init__(self):
        seen = list(self.mu_qubits.values()) + list(self.sigma_qubits.values()) + list(self.winding_qubits.values())
        if sorted(seen) != list(range(self.n_qubits)):
            raise GeometryError("dual register indices are not a permutation of the register")

    @property
    def a_qubits(self) -> list[int]:
        return sorted(k for k, v in self.partition.items() if v == "A")

    @property
    def b_qubits(self) -> list[int]:
        return sorted(k for k, v in self.partition.items() if v == "B")

    @property
    def n_a(self) -> int:
        return len(self.a_qubits)

    def is_contiguous_split(self) -> bool:
        return self.a_qubits == list(range(self.n_a))

    def mask(self, side: str) -> int:
        return sum(1 << k for k, v in self.partition.items() if v == side)

    def mu(self, c: int, r: int) -> int:
        return self.mu_qubits[(c, r)]


@dataclass
class LocalTerm:
    """One electric or magnetic energy term of the dual Hamiltonian."""

    kind: str  # 'electric' | 'magnetic'
    location: tuple  # link (c, r, d) or plaquette (c, r)
    op: PauliString
    side: str = ""  # 'A', 'B' or 'AB' for cut geometries
    in_hamiltonian: bool = True


@dataclass
class DualMap:
    """Register plus substitution tables of one dual formulation."""

    register: DualRegister
    link_images: dict  # link -> image of the electric operator
    plaquette_images: dict  # plaquette -> image of the plaquette operator
    sigma_z_images: dict  # retained link -> Z on its qubit
    original_links: list
    original_plaquettes: list
    original_sites: list
    hamiltonian_links: list
    hamiltonian_plaquettes: list
    residual_sites: list  # sites whose Gauss law survives the substitution
    ribbons: dict = field(default_factory=dict)  # name -> image

    @property
    def n(self) -> int:
        return self.register.n_qubits

    def gauss_image(self, site: Site) -> PauliString:
        c, r = site
        # links beyond a truncated end are absent
        imgs = [self.link_images[k] for k in map(self.canon, site_links(c, r)) if k in self.link_images]
        return _mul(imgs)

    def canon(self, link: Link) -> Link:
        g = self.register.geometry
        c, r, d = link
        r %= g.ny
        if g.kind is not Kind.OPEN_CYLINDER:
            c %= g.nx
        return (c, r, d)

    def local_terms(self) -> list[LocalTerm]:
        out = []
        a_mask = self.register.mask("A")
        b_mask = self.register.mask("B")
        wind = sum(1 << q for q in self.register.winding_qubits.values())

        def side(op):
            s = op.support & ~wind
            if not a_mask:
                return ""
            on_a, on_b = bool(s & a_mask), bool(s & b_mask)
            return "AB" if on_a and on_b else ("A" if on_a or not on_b else "B")

        for p in self.hamiltonian_plaquettes:
            op = self.plaquette_images[p]
            out.append(LocalTerm("magnetic", p, op, side(op)))
        for l in self.hamiltonian_links:
            op = self.link_images[l]
            out.append(LocalTerm("electric", l, op, side(op)))
        return out

    def hamiltonian(self, epsilon: float, electric_limit: bool = False) -> OperatorSum:
        mag, el = (0.0, 1.0) if electric_limit else (1.0, float(epsilon))
        h = OperatorSum(self.n)
        for t in self.local_terms():
            coeff = mag if t.kind == "magnetic" else el
            if coeff:
                h.add(-coeff, t.op)
        return h


def _mul(ops):
    return reduce(lambda a, b: a * b, ops)


def torus_map(nx: int, ny: int) -> DualMap:
    """Dual of the periodic torus: plaquette spins plus the two windings."""
    geom = LatticeGeometry.torus(nx, ny)
    special = (nx - 1, 0)
    plaqs = [(c, r) for r in range(ny) for c in range(nx)]
    mu = {}
    for p in plaqs:
        if p != special:
            mu[p] = len(mu)
    n = len(mu) + 2
    wind = {"Vy": n - 2, "Vx": n - 1}
    reg = DualRegister(geom, n, mu, {}, wind, {k: "A" for k in range(n)})

    def X(*qs):
        return PauliString.xs(n, qs)

    def mus(*ps):
        return [mu[(c % nx, r % ny)] for c, r in ps if (c % nx, r % ny) != special]

    links = [(c, r, d) for r in range(ny) for c in range(nx) for d in "xy"]
    img = {}
    for c, r, d in links:
        if d == "x":
            qs = mus((c, r), (c, r - 1))
            if r == 0:
                qs.append(wind["Vy"])
            if (c, r) in ((nx - 1, 0), (nx - 1, 1)):
                qs.append(wind["Vx"])
        else:
            qs = mus((c, r), (c - 1, r))
            if (c == 0 and r != 0) or (c, r) == (nx - 1, 0):
                qs.append(wind["Vx"])
        img[(c, r, d)] = X(*qs)
    pimg = {p: PauliString.zs(n, [mu[p]]) for p in plaqs if p != special}
    pimg[special] = _mul(pimg.values())
    sites = [(c, r) for r in range(ny) for c in range(nx)]
    ribbons = {"Vx": X(wind["Vx"]), "Vy": X(wind["Vy"])}
    return DualMap(reg, img, pimg, {}, links, plaqs, sites, links, plaqs, [], ribbons)


def cut_torus_map(na: int, nb: int, ny: int) -> DualMap:
    """Dual of the torus with two entanglement cuts.

    Subsystem A holds columns ``0 .. na-1``.  The y-links on both boundary
    columns of A are kept as gauge-variant qubits (except ``(0,0,y)``, fixed by
    the eliminated plaquette).  Qubits of A occupy the low register bits:
    A plaquette spins, left then right boundary links, ``V_y``; then the plaquette
    spins of B (including the plaquettes straddling the cuts).
    """
    geom = LatticeGeometry.cut_torus(na, nb, ny)
    nx = na + nb
    special = (nx - 1, 0)
    mu, sig = {}, {}
    k = 0
    for r in range(ny):
        for c in range(na - 1):
            mu[(c, r)] = k
            k += 1
    for r in range(1, ny):
        sig[(0, r, "y")] = k
        k += 1
    for r in range(ny):
        sig[(na - 1, r, "y")] = k
        k += 1
    wind = {"Vy": k}
    k += 1
    n_a = k
    for r in range(ny):
        for c in range(na - 1, nx):
            if (c, r) != special:
                mu[(c, r)] = k
                k += 1
    n = k
    part = {q: ("A" if q < n_a else "B") for q in range(n)}
    reg = DualRegister(geom, n, mu, sig, wind, part)

    def mus(*ps):
        return [mu[(c % nx, r % ny)] for c, r in ps if (c % nx, r % ny) != special]

    links = [(c, r, d) for r in range(ny) for c in range(nx) for d in "xy"]
    img = {}
    for c, r, d in links:
        if (c, r, d) in sig:
            qs = [sig[(c, r, d)]]
        elif d == "x":
            qs = mus((c, r), (c, r - 1)) + ([wind["Vy"]] if r == 0 else [])
        else:
            qs = mus((c, r), (c - 1, r))
        img[(c, r, d)] = PauliString.xs(n, qs)
    plaqs = [(c, r) for r in range(ny) for c in range(nx)]
    pimg = {}
    for c, r in plaqs:
        if (c, r) == special:
            continue
        qs = [mu[(c, r)]] + [sig[l] for l in (_canon_t(l, nx, ny) for l in plaquette_links(c, r)) if l in sig]
        pimg[(c, r)] = PauliString.zs(n, qs)
    pimg[special] = _mul(pimg.values())
    szi = {l: PauliString.zs(n, [q]) for l, q in sig.items()}
    sites = [(c, r) for r in range(ny) for c in range(nx)]
    residual = [(0, r) for r in range(ny)] + [(na - 1, r) for r in range(ny)]
    vx = _mul(img[(c, 1, "y")] for c in range(nx))
    vy = _mul(img[(0, r, "x")] for r in range(ny))
    return DualMap(reg, img, pimg, szi, links, plaqs, sites, links, plaqs, residual, {"Vx": vx, "Vy": vy})


def _canon_t(link, nx, ny):
    c, r, d = link
    return (c % nx, r % ny, d)


def cylinder_map(nx: int, ny: int) -> DualMap:
    """Dual of a finite open cylinder of depth ``nx`` with one physical boundary.

    The left boundary keeps its y-links and the dangling boundary links
    ``(-1, r, x)`` (the electric flux into the system) as qubits.  The far end
    is closed: its y-links keep their electric energy and no flux leaves, so
    the magnetic loop along the far edge is not conserved.
    """
    geom = LatticeGeometry.cylinder(nx, ny)
    mu, sig = {}, {}
    k = 0
    for r in range(ny):
        for c in range(nx):
            mu[(c, r)] = k
            k += 1
    for r in range(ny):
        sig[(0, r, "y")] = k
        k += 1
    for r in range(ny):
        sig[(-1, r, "x")] = k
        k += 1
    wind = {"Vy": k}
    n = k + 1
    reg = DualRegister(geom, n, mu, sig, wind, {q: "A" for q in range(n)})

    def mus(*ps):
        return [mu[(c, r % ny)] for c, r in ps if 0 <= c < nx]

    links = [(c, r, "x") for r in range(ny) for c in range(-1, nx)]
    links += [(c, r, "y") for r in range(ny) for c in range(nx + 1)]
    img = {}
    for c, r, d in links:
        if (c, r, d) in sig:
            qs = [sig[(c, r, d)]]
        elif d == "x":
            qs = mus((c, r), (c, r - 1)) + ([wind["Vy"]] if r == 0 else [])
        else:
            qs = mus((c, r), (c - 1, r))
        img[(c, r, d)] = PauliString.xs(n, qs)
    plaqs = [(c, r) for r in range(ny) for c in range(nx)]
    pimg = {}
    for c, r in plaqs:
        qs = [mu[(c, r)]] + ([sig[(0, r, "y")]] if c == 0 else [])
        pimg[(c, r)] = PauliString.zs(n, qs)
    szi = {l: PauliString.zs(n, [q]) for l, q in sig.items()}
    sites = [(c, r) for r in range(ny) for c in range(nx + 1)]
    h_links = list(links)
    residual = [(0, r) for r in range(ny)] + [(nx, r) for r in range(ny)]
    vy = _mul(img[(0, r, "x")] for r in range(ny))
    return DualMap(reg, img, pimg, szi, links, plaqs, sites, h_links, plaqs, residual, {"Vy": vy})


def dual_map(geometry: LatticeGeometry) -> DualMap:
    if geometry.kind is Kind.PERIODIC_TORUS:
        return torus_map(geometry.nx, geometry.ny)
    if geometry.kind is Kind.CUT_TORUS:
        return cut_torus_map(geometry.nx_a, geometry.nx_b, geometry.ny)
    return cylinder_map(geometry.nx_a, geometry.ny)


# ---------------------------------------------------------------------------
# public builders
# ---------------------------------------------------------------------------
def build_dual_torus(geometry: LatticeGeometry, epsilon: float, electric_limit: bool = False) -> OperatorSum:
    if geometry.kind is not Kind.PERIODIC_TORUS:
        raise GeometryError("build_dual_torus needs a PeriodicTorus")
    return torus_map(geometry.nx, geometry.ny).hamiltonian(epsilon, electric_limit)


@dataclass
class CylinderModel:
    hamiltonian: OperatorSum
    gauss: list
    register: DualRegister
    map: DualMap


def boundary_gauss(m: DualMap) -> list[PauliString]:
    """Residual Gauss operators on the left boundary column of A (``G_{n_y}``)."""
    return [m.gauss_image((0, r)) for r in range(m.register.geometry.ny)]


def build_dual_cylinder(geometry: LatticeGeometry, epsilon: float, electric_limit: bool = False) -> CylinderModel:
    if geometry.kind is not Kind.OPEN_CYLINDER:
        raise GeometryError("build_dual_cylinder needs an OpenCylinder")
    m = cylinder_map(geometry.nx_a, geometry.ny)
    return CylinderModel(m.hamiltonian(epsilon, electric_limit), boundary_gauss(m), m.register, m)


@dataclass
class CutTorusModel:
    h_a: OperatorSum
    h_b: OperatorSum
    h_ab: OperatorSum
    register: DualRegister
    map: DualMap

    def __iter__(self):
        return iter((self.h_a, self.h_b, self.h_ab, self.register))

    @property
    def hamiltonian(self) -> OperatorSum:
        return self.h_a + self.h_b + self.h_ab

    @property
    def residual_gauss(self) -> list[PauliString]:
        return [self.map.gauss_image(s) for s in self.map.residual_sites]


def build_dual_cut_torus(geometry: LatticeGeometry, epsilon: float, electric_limit: bool = False) -> CutTorusModel:
    """``H = H_A + H_B + H_AB`` on the cut torus.

    Terms are assigned by support, ignoring the conserved winding qubit ``V_y``
    (which only ever enters as a sign label).
    """
    if geometry.kind is not Kind.CUT_TORUS:
        raise GeometryError("build_dual_cut_torus needs a CutTorus")
    m = cut_torus_map(geometry.nx_a, geometry.nx_b, geometry.ny)
    mag, el = (0.0, 1.0) if electric_limit else (1.0, float(epsilon))
    parts = {s: OperatorSum(m.n) for s in ("A", "B", "AB")}
    for t in m.local_terms():
        coeff = mag if t.kind == "magnetic" else el
        if coeff:
            parts[t.side].add(-coeff, t.op)
    return CutTorusModel(parts["A"], parts["B"], parts["AB"], m.register, m)


# ---------------------------------------------------------------------------
# symmetry sectors
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SymmetrySectorLabel:
    left_flux: tuple
    right_flux: tuple = ()
    vtilde_x: int | None = None

    def __str__(self) -> str:
        s = "".join("u" if f > 0 else "d" for f in self.left_flux + self.right_flux)
        if self.vtilde_x is not None:
            s += "+" if self.vtilde_x > 0 else "-"
        return s

    @classmethod
    def parse(cls, text: str, ny: int) -> "SymmetrySectorLabel":
        sign = {"u": 1, "d": -1}
        v = None
        if text and text[-1] in "+-":
            v = 1 if text[-1] == "+" else -1
            text = text[:-1]
        fl = tuple(sign[ch] for ch in text)
        return cls(fl[:ny], fl[ny:], v)


@dataclass
class FluxOperators:
    left: list
    right: list
    vtilde_x: PauliString | None

    def all(self) -> list[PauliString]:
        return self.left + self.right + ([self.vtilde_x] if self.vtilde_x is not None else [])


def flux_operators(m: DualMap) -> FluxOperators:
    """A-side operators for the electric flux through each boundary and the open string.

    The flux through a cut link is its Gauss-law completion inside A; the open
    electric string runs along row 1 from one boundary of A to the other.
    """
    g = m.register.geometry
    if g.kind is Kind.PERIODIC_TORUS:
        raise GeometryError("sector projectors need a geometry with a boundary")
    ny = g.ny
    if g.kind is Kind.OPEN_CYLINDER:
        left = [PauliString.xs(m.n, [m.register.sigma_qubits[(-1, r, "x")]]) for r in range(ny)]
        return FluxOperators(left, [], None)
    na = g.nx_a
    left = [_mul(m.link_images[m.canon(l)] for l in site_links(0, r) if l[:2] != (-1, r)) for r in range(ny)]
    right = [_mul(m.link_images[m.canon(l)] for l in site_links(na - 1, r) if l[:2] != (na - 1, r) or l[2] != "x")
             for r in range(ny)]
    vt = _mul(m.link_images[(c, 1, "y")] for c in range(na))
    return FluxOperators(left, right, vt)


def sector_projectors(register_or_map) -> list[tuple[SymmetrySectorLabel, list[PauliString]]]:
    """Enumerate sector labels with the signed flux strings fixing each sector.

    The sector projector is ``prod_k (1 + P_k) / 2`` over the listed strings.
    """
    m = register_or_map if isinstance(register_or_map, DualMap) else dual_map(register_or_map.geometry)
    f = flux_operators(m)
    ny = m.register.geometry.ny
    out = []
    nv = 1 if f.vtilde_x is not None else 0
    ops = f.all()
    for signs in itertools.product((1, -1), repeat=len(ops)):
        strings = [op if s > 0 else -op for s, op in zip(signs, ops)]
        lf = signs[:ny]
        rf = signs[ny:len(f.left) + len(f.right)]
        v = signs[-1] if nv else None
        out.append((SymmetrySectorLabel(tuple(lf), tuple(rf), v), strings))
    return out


# ---------------------------------------------------------------------------
# canonical-map verification
# ---------------------------------------------------------------------------
@dataclass
class CanonicalReport:
    geometry: LatticeGeometry
    checked_pairs: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _original_lattice(m: DualMap):
    """Qubit layout of the gauge-variant lattice matching the map's link set."""
    links = m.original_links
    n = len(links)
    q = {l: i for i, l in enumerate(links)}
    return n, q


def verify_canonical_map(geometry_or_map) -> CanonicalReport:
    """Check that the substitution tables preserve the gauge-invariant algebra.

    Compared against the gauge-variant lattice: all pairwise (anti)commutation
    relations among link electric operators, plaquette operators and retained
    link Z operators; bulk Gauss laws map to the identity; the product of all
    plaquettes is the identity on closed geometries; ribbon images commute with
    every image.
    """
    m = geometry_or_map if isinstance(geometry_or_map, DualMap) else dual_map(geometry_or_map)
    g = m.register.geometry
    rep = CanonicalReport(g)
    n0, q0 = _original_lattice(m)

    def oq(link):
        return q0[m.canon(link)]

    items = []
    for l in m.original_links:
        items.append((f"X{l}", PauliString.xs(n0, [oq(l)]), m.link_images[l]))
    for p in m.original_plaquettes:
        orig = PauliString.zs(n0, [oq(l) for l in plaquette_links(*p) if m.canon(l) in q0])
        items.append((f"W{p}", orig, m.plaquette_images[p]))
    for l, img in m.sigma_z_images.items():
        items.append((f"Z{l}", PauliString.zs(n0, [oq(l)]), img))
    for (na, oa, ia), (nb, ob, ib) in itertools.combinations(items, 2):
        rep.checked_pairs += 1
        if commutes(oa, ob) != commutes(ia, ib):
            rep.violations.append(f"{na} vs {nb}: commutation pattern not preserved")
    for (na, oa, ia) in items:
        if not ia.is_hermitian():
            rep.violations.append(f"{na}: image is not Hermitian")
    residual = set(m.residual_sites)
    for s in m.original_sites:
        if s in residual:
            continue
        gi = m.gauss_image(s)
        if not gi.is_identity() or gi.phase:
            rep.violations.append(f"Gauss law at {s} maps to {gi.label()} instead of the identity")
    if g.kind is not Kind.OPEN_CYLINDER:
        prod = _mul(m.plaquette_images.values())
        if not prod.is_identity() or prod.phase:
            rep.violations.append("product of all plaquette images is not the identity")
    images = [it[2] for it in items]
    for name, rib in m.ribbons.items():
        for (nm, _, img) in items:
            if nm.startswith("Z"):
                continue
            if not commutes(rib, img):
                rep.violations.append(f"ribbon {name} fails to commute with {nm}")
    for s in residual:
        gi = m.gauss_image(s)
        for nm, _, img in items:
            if not nm.startswith("Z") and not commutes(gi, img):
                rep.violations.append(f"residual Gauss at {s} fails to commute with {nm}")
    del images
    return rep
