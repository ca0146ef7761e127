import dataclasses
import itertools
from collections import Counter
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from z2ent.lattice import (
    GeometryError,
    Kind,
    LatticeGeometry,
    SymmetrySectorLabel,
    build_dual_cut_torus,
    build_dual_cylinder,
    build_dual_torus,
    build_original,
    cut_torus_map,
    flux_operators,
    sector_projectors,
    torus_map,
    verify_canonical_map,
)
from z2ent.pauli import PauliString, commutes
from z2ent.spectra import Constraint, SectorSpace
from z2ent.systems import boundary_levels, build_system, dual_spectrum, physical_spectrum


def projector_spectrum(geom, eps):
    """Gauss-projected spectrum via the explicit dense projector product."""
    o = build_original(geom, eps)
    dim = 1 << o.n_qubits
    P = np.eye(dim)
    for g in o.gauss:
        P = P @ (np.eye(dim) + g.to_matrix().real) / 2
    w, v = np.linalg.eigh(P)
    V = v[:, w > 0.5]
    return np.linalg.eigvalsh(V.T @ o.hamiltonian.to_dense() @ V)


# -- geometry -----------------------------------------------------------------
@pytest.mark.parametrize("args", [(1, 3, 2), (3, 1, 2), (2, 2, 1)])
def test_cut_torus_too_small(args):
    with pytest.raises(GeometryError):
        LatticeGeometry.cut_torus(*args)


def test_geometry_totals():
    g = LatticeGeometry.cut_torus(3, 2, 4)
    assert g.nx == 5 and g.kind is Kind.CUT_TORUS
    with pytest.raises(GeometryError):
        LatticeGeometry(Kind.PERIODIC_TORUS, 2, 2, 3)


# -- original model -------------------------------------------------------------
def test_original_term_count():
    o = build_original(LatticeGeometry.torus(2, 2), 0.0)
    assert o.n_qubits == 8
    terms = list(o.hamiltonian)
    assert len(terms) == 4 and all(c == -1.0 for c, _ in terms)
    assert all(p.x == 0 for _, p in terms)


@pytest.mark.parametrize("nx,ny", [(2, 2), (3, 2), (2, 3), (4, 2)])
def test_original_gauge_invariance(nx, ny):
    o = build_original(LatticeGeometry.torus(nx, ny), 0.7)
    assert len(o.gauss) == nx * ny
    for (_, p), g in itertools.product(o.hamiltonian, o.gauss):
        assert commutes(p, g)


def test_original_rejects_open_geometry():
    with pytest.raises(GeometryError):
        build_original(LatticeGeometry.cylinder(2, 3), 0.1)


def test_oracle_routes_agree():
    # explicit projector vs enumerated electric-basis subspace
    for eps in (0.0, 0.5, 1.0):
        a = projector_spectrum(LatticeGeometry.torus(2, 2), eps)
        b = physical_spectrum(LatticeGeometry.torus(2, 2), eps)
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_physical_ground_energy_2x2():
    e = physical_spectrum(LatticeGeometry.torus(2, 2), 1.0)[0]
    assert e == pytest.approx(projector_spectrum(LatticeGeometry.torus(2, 2), 1.0)[0], abs=1e-12)


# -- dual torus -------------------------------------------------------------------
def test_dual_torus_register():
    h = build_dual_torus(LatticeGeometry.torus(2, 2), 0.3)
    assert h.n == 5
    m = torus_map(2, 2)
    assert len(m.register.mu_qubits) == 3 and len(m.register.winding_qubits) == 2


@pytest.mark.parametrize("nx,ny", [(2, 2), (3, 2), (2, 3)])
def test_dual_torus_magnetic_spectrum(nx, ny):
    n = nx * ny
    ev = np.round(dual_spectrum(LatticeGeometry.torus(nx, ny), 0.0)).astype(int)
    expect = Counter()
    for k in range(0, n + 1, 2):
        expect[-n + 2 * k] = comb(n, k) * 4  # plaquette product fixed, two free windings
    assert Counter(ev.tolist()) == expect


@pytest.mark.parametrize("geom", [LatticeGeometry.torus(2, 2), LatticeGeometry.torus(3, 2),
                                  LatticeGeometry.cut_torus(2, 2, 2)])
@pytest.mark.parametrize("eps", [0.0, 0.3, 0.5, 1.0])
def test_dual_equals_projected_original(geom, eps):
    a = physical_spectrum(geom, eps)
    b = dual_spectrum(geom, eps)
    assert a.shape == b.shape
    assert np.max(np.abs(a - b)) < 1e-10


def test_electric_limit_flag():
    geom = LatticeGeometry.torus(2, 2)
    a = physical_spectrum(geom, 0.0, electric_limit=True)
    b = dual_spectrum(geom, 0.0, electric_limit=True)
    np.testing.assert_allclose(a, b, atol=1e-10)
    # pure electric model: integer levels
    np.testing.assert_allclose(a, np.round(a), atol=1e-12)


def test_dual_torus_ribbons_commute():
    m = torus_map(3, 2)
    h = m.hamiltonian(0.4)
    for name in ("Vx", "Vy"):
        assert h.commutes_with(m.ribbons[name])


# -- cut torus -------------------------------------------------------------------------
@pytest.mark.parametrize("na,nb,ny", [(2, 2, 2), (3, 3, 2), (2, 3, 3)])
def test_cut_torus_decomposition(na, nb, ny):
    model = build_dual_cut_torus(LatticeGeometry.cut_torus(na, nb, ny), 0.2)
    reg = model.register
    a, b = reg.mask("A"), reg.mask("B")
    wind = sum(1 << q for q in reg.winding_qubits.values())
    assert reg.is_contiguous_split()
    for _, p in model.h_a:
        assert p.support & ~a == 0
    for _, p in model.h_b:
        assert p.support & ~(b | wind) == 0
    for _, p in model.h_ab:
        s = p.support & ~wind
        assert s & a and s & b


def test_cut_torus_sector_splitting():
    geom = LatticeGeometry.cut_torus(2, 2, 2)
    model = build_dual_cut_torus(geom, 0.35)
    m = model.map
    parts = []
    for vx, vy in itertools.product((1, -1), repeat=2):
        cons = [Constraint(g) for g in model.residual_gauss]
        cons += [Constraint(m.ribbons["Vx"], vx), Constraint(m.ribbons["Vy"], vy)]
        sp_ = SectorSpace(m.n, model.register.n_a, cons)
        parts.append(np.linalg.eigvalsh(sp_.compile(model.hamiltonian).to_dense()))
    joined = np.sort(np.concatenate(parts))
    np.testing.assert_allclose(joined, physical_spectrum(geom, 0.35), atol=1e-10)


# -- canonical map ---------------------------------------------------------------------
@pytest.mark.parametrize("geom", [LatticeGeometry.torus(2, 2), LatticeGeometry.torus(3, 2),
                                  LatticeGeometry.cut_torus(2, 2, 2), LatticeGeometry.cut_torus(3, 3, 3),
                                  LatticeGeometry.cylinder(2, 3), LatticeGeometry.cylinder(3, 2)])
def test_canonical_map_clean(geom):
    rep = verify_canonical_map(geom)
    assert rep.ok, rep.violations[:3]
    assert rep.checked_pairs > 0


def corrupted_map():
    m = cut_torus_map(2, 2, 2)
    links = dict(m.link_images)
    k = next(iter(links))
    img = links[k]
    links[k] = PauliString(img.n, 0, img.x | img.z, 0)  # electric image replaced by a Z string
    return dataclasses.replace(m, link_images=links)


def test_canonical_map_detects_corruption():
    rep = verify_canonical_map(corrupted_map())
    assert not rep.ok


def test_anticommuting_pair_preserved():
    m = cut_torus_map(3, 3, 2)
    for link, z in m.sigma_z_images.items():
        assert not commutes(m.link_images[link], z)


# -- sectors -----------------------------------------------------------------------------
def test_sector_count_ny3():
    secs = sector_projectors(cut_torus_map(3, 3, 3))
    assert len(secs) == 2 ** (2 * 3 + 1)
    assert len({s for s, _ in secs}) == len(secs)


def test_flux_operators_commute():
    m = cut_torus_map(3, 3, 3)
    model = build_dual_cut_torus(LatticeGeometry.cut_torus(3, 3, 3), 0.3)
    ops = flux_operators(m).all()
    for a, b in itertools.combinations(ops, 2):
        assert commutes(a, b)
    for op in ops:
        assert model.h_a.commutes_with(op)
        assert op.support & ~m.register.mask("A") == 0


def test_projector_completeness():
    m = cut_torus_map(2, 2, 2)
    n_a = m.register.n_a
    total = np.zeros((1 << n_a, 1 << n_a))
    for _, strings in sector_projectors(m):
        P = np.eye(1 << n_a)
        for s in strings:
            P = P @ (np.eye(1 << n_a) + PauliString(n_a, s.x, s.z, s.phase).to_matrix().real) / 2
        total += P
    np.testing.assert_allclose(total, np.eye(1 << n_a), atol=1e-12)


@given(st.integers(2, 4), st.data())
def test_label_roundtrip(ny, data):
    lf = tuple(data.draw(st.lists(st.sampled_from([1, -1]), min_size=ny, max_size=ny)))
    rf = tuple(data.draw(st.lists(st.sampled_from([1, -1]), min_size=ny, max_size=ny)))
    v = data.draw(st.sampled_from([1, -1]))
    lab = SymmetrySectorLabel(lf, rf, v)
    assert SymmetrySectorLabel.parse(str(lab), ny) == lab
    assert len(str(lab)) == 2 * ny + 1


def test_label_string_format():
    assert str(SymmetrySectorLabel((-1, 1, 1), (1, -1, 1), 1)) == "duuudu+"


# -- cylinder ---------------------------------------------------------------------------
def test_cylinder_boundary_gauss_commutes():
    cyl = build_dual_cylinder(LatticeGeometry.cylinder(3, 3), 0.2)
    for g in cyl.gauss:
        assert cyl.hamiltonian.commutes_with(g)


def test_cylinder_stabilizer_ground_state():
    sysm = build_system(LatticeGeometry.cylinder(2, 3), 0.0, vy=None)
    from z2ent.spectra import ground_state

    _, st_ = ground_state(sysm.op)
    plaq = [p for c, p in sysm.hamiltonian]
    for p in plaq:
        val = sysm.space.compile(type(sysm.hamiltonian)(p.n, [(1.0, p)])).expectation(st_.amplitudes)
        assert val == pytest.approx(1.0, abs=1e-9)


def test_cylinder_boundary_levels_first_order():
    eps = 0.1
    lev = boundary_levels(3, 3, eps)
    e0 = min(lev.values())
    for s, e in lev.items():
        pred = -eps * sum(s) + 3 * eps  # relative to the all-up configuration
        assert e - e0 == pytest.approx(pred, abs=2 * eps ** 2)


def test_hamiltonian_terms_real():
    model = build_dual_cut_torus(LatticeGeometry.cut_torus(3, 3, 2), 0.3)
    for c, p in model.hamiltonian:
        assert isinstance(c, float) and p.phase == 0
