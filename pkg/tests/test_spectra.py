import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from z2ent.lattice import LatticeGeometry
from z2ent.pauli import OperatorSum, PauliString
from z2ent.spectra import (
    BETA_CAP,
    BudgetExceeded,
    Constraint,
    DensityMatrix,
    KrylovPropagator,
    SectorSpace,
    StateVector,
    ThermalModel,
    check_budget,
    dense_evolve,
    draw_middle_index,
    eigenstate_near,
    estimate_memory,
    evolve,
    full_space,
    ground_state,
    hadamard_all,
    match_beta,
    middle_window,
    residual,
    thermal_density_matrix,
)
from z2ent.systems import build_system


def random_hamiltonian(n, n_terms, rng):
    h = OperatorSum(n)
    for _ in range(n_terms):
        x, z = int(rng.integers(1 << n)), int(rng.integers(1 << n))
        h.add(float(rng.normal()), PauliString(n, x, z))
    return h


@st.composite
def seeds(draw):
    return draw(st.integers(0, 2 ** 31))


@given(seeds(), st.integers(2, 6))
def test_full_space_matches_dense(seed, n):
    rng = np.random.default_rng(seed)
    h = random_hamiltonian(n, 6, rng)
    op = full_space(n).compile(h)
    psi = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    np.testing.assert_allclose(op.matvec(psi), h.to_dense() @ psi, atol=1e-10)
    np.testing.assert_allclose(op.to_dense(), h.to_dense(), atol=1e-12)


@given(seeds())
def test_constrained_space_is_invariant_block(seed):
    """The compiled sector operator equals V^T H V for the embedded basis."""
    rng = np.random.default_rng(seed)
    n = 5
    cons = [Constraint(PauliString.xs(n, [0, 1]), 1), Constraint(PauliString.xs(n, [2, 3, 4]), -1)]
    # terms commuting with the constraints: X strings and ZZ on constrained pairs
    terms = [PauliString.xs(n, [q]) for q in range(n)] + [PauliString.zs(n, [0, 1]), PauliString.zs(n, [2, 3]),
                                                          PauliString.zs(n, [3, 4])]
    h = OperatorSum(n, [(float(rng.normal()), p) for p in terms])
    sp_ = SectorSpace(n, 2, cons)
    V = np.stack([sp_.embed(np.eye(sp_.dim)[k]) for k in range(sp_.dim)], axis=1)
    np.testing.assert_allclose(V.T @ V, np.eye(sp_.dim), atol=1e-12)
    np.testing.assert_allclose(sp_.compile(h).to_dense(), V.T @ h.to_dense() @ V, atol=1e-12)
    assert sp_.dim == 8


def test_space_index_roundtrip():
    sysm = build_system(LatticeGeometry.cut_torus(2, 2, 2), 0.3)
    sp_ = sysm.space
    idx = sp_.index(sp_.states)
    np.testing.assert_array_equal(idx, np.arange(sp_.dim))
    assert sp_.contains(sp_.states).all()
    with pytest.raises(ValueError):
        sp_.index([_outside(sp_)])


def _outside(sp_):
    for v in range(1 << sp_.n):
        if not sp_.contains([v])[0]:
            return v
    raise AssertionError


def test_embed_project_roundtrip(rng):
    sysm = build_system(LatticeGeometry.cut_torus(2, 2, 2), 0.3)
    sp_ = sysm.space
    psi = rng.normal(size=sp_.dim)
    np.testing.assert_allclose(sp_.project(sp_.embed(psi)), psi, atol=1e-12)


def test_hadamard_involution(rng):
    v = rng.normal(size=32)
    np.testing.assert_allclose(hadamard_all(hadamard_all(v, 5), 5), v, atol=1e-12)


def test_kernel_ignores_output_buffer():
    sysm = build_system(LatticeGeometry.cut_torus(2, 2, 2), 0.4)
    psi = np.ones(sysm.space.dim, complex)
    out = np.full(sysm.space.dim, np.nan + 0j)
    np.testing.assert_allclose(sysm.op.matvec(psi, out), sysm.op.to_sparse() @ psi, atol=1e-12)


# -- eigenpairs ------------------------------------------------------------------
def test_ground_state_dense_and_lanczos_agree():
    sysm = build_system(LatticeGeometry.cut_torus(2, 3, 3), 0.3)
    e, st_ = ground_state(sysm.op)
    assert sysm.space.dim > 4096
    assert residual(sysm.op, e, st_.amplitudes) < 1e-9
    small = build_system(LatticeGeometry.cut_torus(3, 3, 2), 0.3)
    e1, s1 = ground_state(small.op)
    w = np.linalg.eigvalsh(small.op.to_dense())
    assert e1 == pytest.approx(w[0], abs=1e-10)


def test_ground_state_empty_sector():
    sp_ = SectorSpace(2, None, [Constraint(PauliString.xs(2, [0]), 1), Constraint(PauliString.xs(2, [0]), -1)])
    with pytest.raises(ValueError):
        ground_state(OperatorSum(2, [(1.0, PauliString.xs(2, [1]))]), sp_)


def test_ground_state_deterministic():
    sysm = build_system(LatticeGeometry.cut_torus(2, 3, 3), 0.2)
    a = ground_state(sysm.op)[1].amplitudes
    b = ground_state(sysm.op)[1].amplitudes
    np.testing.assert_array_equal(a, b)


def test_eigenstate_near_index_and_seed():
    sysm = build_system(LatticeGeometry.cut_torus(3, 3, 2), 0.5)
    w = np.linalg.eigvalsh(sysm.op.to_dense())
    e, st_, k = eigenstate_near(sysm.op, 17)
    assert k == 17 and e == pytest.approx(w[17], abs=1e-10)
    assert residual(sysm.op, e, st_.amplitudes) < 1e-9
    e2, _, k2 = eigenstate_near(sysm.op, {"seed": 4})
    lo, hi = middle_window(sysm.space.dim)
    assert lo <= k2 < hi and k2 == draw_middle_index(sysm.space.dim, 4)
    assert eigenstate_near(sysm.op, {"seed": 4})[2] == k2
    with pytest.raises(IndexError):
        eigenstate_near(sysm.op, sysm.space.dim)


def test_middle_window():
    assert middle_window(100) == (25, 75)
    assert middle_window(1) == (0, 1)


# -- time evolution ----------------------------------------------------------------
def test_krylov_matches_dense(rng):
    sysm = build_system(LatticeGeometry.cut_torus(3, 3, 2), 1.0)
    psi = rng.normal(size=sysm.space.dim) + 1j * rng.normal(size=sysm.space.dim)
    psi /= np.linalg.norm(psi)
    times = [0.0, 0.3, 1.7, 5.0]
    states = evolve(sysm.op, StateVector(psi, sysm.space), times)
    for t, s in zip(times, states):
        ref = dense_evolve(sysm.op, psi, t)
        assert abs(np.vdot(ref, s.amplitudes)) > 1 - 1e-8


def test_eigenstate_is_stationary():
    sysm = build_system(LatticeGeometry.cut_torus(3, 3, 2), 0.7)
    e, st_, _ = eigenstate_near(sysm.op, 40)
    for s in evolve(sysm.op, st_, [0.0, 1.0, 4.0]):
        assert abs(np.vdot(st_.amplitudes, s.amplitudes)) == pytest.approx(1.0, abs=1e-10)


def test_energy_conserved(rng):
    sysm = build_system(LatticeGeometry.cut_torus(2, 3, 3), 1.0)
    psi = rng.normal(size=sysm.space.dim).astype(complex)
    psi /= np.linalg.norm(psi)
    e0 = sysm.op.expectation(psi)
    out = evolve(sysm.op, psi, [0, 2.0, 6.0], space=sysm.space)
    for s in out:
        assert sysm.op.expectation(s.amplitudes) == pytest.approx(e0, rel=1e-8)
    assert evolve.last_stats.max_norm_drift < 1e-10


def test_time_grid_must_be_monotone(rng):
    sysm = build_system(LatticeGeometry.cut_torus(2, 2, 2), 1.0)
    psi = np.ones(sysm.space.dim) / np.sqrt(sysm.space.dim)
    with pytest.raises(ValueError):
        evolve(sysm.op, StateVector(psi, sysm.space), [0.0, 2.0, 1.0])


def test_krylov_small_space_is_exact():
    sysm = build_system(LatticeGeometry.cut_torus(2, 2, 2), 1.0)
    prop = KrylovPropagator(sysm.op, m=60)
    psi = np.zeros(sysm.space.dim, complex)
    psi[0] = 1
    out = prop.propagate(psi, 3.0)
    assert abs(np.vdot(dense_evolve(sysm.op, psi, 3.0), out)) > 1 - 1e-10


# -- density matrices and thermal states -----------------------------------------------
def test_density_matrix_check():
    assert DensityMatrix([np.eye(2) / 2]).check() == []
    assert DensityMatrix([np.array([[0.5, 0.1], [0.0, 0.5]])]).check()
    assert DensityMatrix([np.diag([1.2, -0.2])]).check()
    assert DensityMatrix([np.eye(2)]).check()


def test_thermal_limits():
    sysm = build_system(LatticeGeometry.cut_torus(2, 2, 2), 0.5)
    h = sysm.op
    rho0 = thermal_density_matrix(h, 0.0)
    d = sysm.space.dim
    np.testing.assert_allclose(rho0.matrix, np.eye(d) / d, atol=1e-12)
    e, gs = ground_state(h)
    rho = thermal_density_matrix(h, 1e3)
    assert np.real(np.vdot(gs.amplitudes, rho.matrix @ gs.amplitudes)) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        thermal_density_matrix(h, -1.0)


@given(st.floats(0, 50))
def test_thermal_invariants(beta):
    sysm = build_system(LatticeGeometry.cut_torus(2, 2, 2), 0.5)
    assert thermal_density_matrix(sysm.op, beta).check() == []


def test_thermal_entropy_infinite_temperature():
    n = 4
    h = OperatorSum(n, [(1.0, PauliString.zs(n, [q])) for q in range(n)])
    m = ThermalModel(np.linalg.eigvalsh(h.to_dense()))
    assert m.entropy(0.0) == pytest.approx(n * np.log(2))


def test_match_beta():
    sysm = build_system(LatticeGeometry.cut_torus(2, 2, 2), 0.5)
    w = np.linalg.eigvalsh(sysm.op.to_dense())
    m = ThermalModel(w)
    assert match_beta(m, {"energy": w.mean()}).beta == 0.0
    r = match_beta(m, {"energy": w.min()})
    assert r.capped and r.beta == BETA_CAP
    target = m.energy(0.37)
    r = match_beta(m, {"energy": target})
    assert abs(m.energy(r.beta) - target) < 1e-6 * abs(target)
    s = m.entropy(1.3)
    r = match_beta(m, {"entropy": s})
    assert abs(m.entropy(r.beta) - s) < 1e-6 * s
    with pytest.raises(ValueError):
        match_beta(m, {"energy": w.mean() + 1.0})
    with pytest.raises(ValueError):
        match_beta(m, {"energy": w.min() - 1.0})


def test_budget():
    need = estimate_memory(1 << 20, 30)
    check_budget(need, 1.0)
    with pytest.raises(BudgetExceeded):
        check_budget(need, 1e-3)
    sysm = build_system(LatticeGeometry.cut_torus(3, 3, 3), 0.5)
    with pytest.raises(BudgetExceeded):
        sysm.op.to_dense()
