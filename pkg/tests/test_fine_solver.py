import numpy as np
import pytest

from crmsfem import linsys
from crmsfem.fine_solver import (DofMap, FineProblem, InconsistentBC, apply_dirichlet, assemble_fine,
                                 cell_data, fluid_mean_weights, solve_reference)
from crmsfem.geometry import (CAVITY_DOMAIN, CHANNEL_DOMAIN, DomainSpec, ObstacleSet, PenalizedCoefficients,
                              cavity_lid, channel_parabolic, custom_dirichlet, generate_obstacles)
from crmsfem.mesh import build_fine
from crmsfem.q1 import quadrature_points, ref_cell

from oracles import l2_error_vs_exact, poiseuille, strictly_inside

UNIT = DomainSpec(0.0, 1.0, 0.0, 1.0)
NO_OBS = ObstacleSet()


def _problem(domain, my, mx, obstacles=NO_OBS, preset=None, **kw):
    g = build_fine(domain, my, mx)
    preset = preset or (cavity_lid(domain) if domain == CAVITY_DOMAIN else channel_parabolic(domain))
    return FineProblem(g, obstacles, PenalizedCoefficients(g.h), preset, **kw)


def test_theta_must_be_positive():
    with pytest.raises(ValueError):
        _problem(UNIT, 1, 1, preset=cavity_lid(UNIT), theta=0.0)


def test_single_cell_assembly():
    buf, rhs, dm = assemble_fine(_problem(UNIT, 1, 1, preset=cavity_lid(UNIT)))
    A = linsys.compress(buf, symmetric=True).toarray()
    assert A.shape == (12, 12) and rhs.shape == (12,)
    v = np.r_[dm.velocity(range(4), 0), dm.velocity(range(4), 1)]
    Av = A[np.ix_(v, v)]
    np.testing.assert_array_equal(Av, Av.T)
    assert np.linalg.eigvalsh(Av).min() >= -1e-12
    # constant velocities lie in the kernel of the viscous block
    np.testing.assert_allclose(Av @ np.ones(8), 0.0, atol=1e-14)


def test_assembled_symmetry():
    obs = generate_obstacles(5, 0.08, CAVITY_DOMAIN, 0.05, 1)
    buf, _, _ = assemble_fine(_problem(CAVITY_DOMAIN, 16, 32, obs))
    A = linsys.compress(buf).matrix
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()


def test_penalty_on_diagonal():
    # unit cells; penalty h is independent of the grid so sigma = 1e6, nu = 100
    g = build_fine(DomainSpec(0.0, 3.0, 0.0, 3.0), 3, 3)
    coeffs = PenalizedCoefficients(0.01)
    obs = ObstacleSet(((1.5, 1.5, 1.0),), 1.0)
    bc = cavity_lid(DomainSpec(0.0, 3.0, 0.0, 3.0))
    free = FineProblem(g, NO_OBS, coeffs, bc)
    pen = FineProblem(g, obs, coeffs, bc)
    d0 = linsys.compress(assemble_fine(free)[0]).matrix.diagonal()
    d1 = linsys.compress(assemble_fine(pen)[0]).matrix.diagonal()
    nodes = g.cell_nodes[4]
    dofs = np.r_[3 * nodes, 3 * nodes + 1]
    # hand value per node: sigma |cell| / 9 from the Q1 mass diagonal, plus (nu_obs - 1) * 2/3
    expected = 1e6 / 9 + (100 - 1) * 2 / 3
    np.testing.assert_allclose(d1[dofs] - d0[dofs], expected, rtol=1e-12)
    assert np.all(d1[dofs] - d0[dofs] >= 1e5)


def test_cavity_dirichlet_values():
    p = _problem(CAVITY_DOMAIN, 4, 8)
    f = solve_reference(p)
    g = p.grid
    xy = g.node_coords
    top = g.side_nodes("top")[1:-1]
    np.testing.assert_array_equal(f.u[top], np.tile([1.0, 0.0], (len(top), 1)))
    walls = np.r_[g.side_nodes("bottom"), g.side_nodes("left"), g.side_nodes("right")]
    np.testing.assert_array_equal(f.u[walls], 0.0)
    assert np.all(xy[top, 1] == 1.0)


def test_channel_inflow_and_natural_outflow():
    p = _problem(CHANNEL_DOMAIN, 8, 16)
    buf, rhs, dm = assemble_fine(p)
    A0 = linsys.compress(buf, symmetric=True)
    A1, rhs1 = apply_dirichlet((A0, rhs), dm, p.preset)
    g = p.grid
    left = g.side_nodes("left")
    y = g.node_coords[left, 1]
    np.testing.assert_array_equal(rhs1[dm.velocity(left, 0)], 1 - y**2)
    np.testing.assert_array_equal(rhs1[dm.velocity(left, 1)], 0.0)
    # right-side interior rows keep their coupling to other unknowns
    right = g.side_nodes("right")[1:-1]
    rows = dm.velocity(right, 0)
    M0, M1 = A0.matrix.tocsr(), A1.matrix.tocsr()
    for r in rows:
        assert M1[r].nnz > 1
        assert M1[r, r] == M0[r, r]
    f = solve_reference(p)
    np.testing.assert_allclose(f.u[left, 0], 1 - y**2)


def test_all_natural_rejected():
    preset = custom_dirichlet(lambda x, y: (0 * x, 0 * y), {s: "natural" for s in ("bottom", "right", "top", "left")})
    with pytest.raises(InconsistentBC):
        solve_reference(_problem(UNIT, 2, 2, preset=preset))


def test_poiseuille_32x64():
    f = solve_reference(_problem(CHANNEL_DOMAIN, 32, 64))
    assert l2_error_vs_exact(f.grid, f.cell_velocity(), poiseuille) <= 0.05
    assert f.report.residual_norm <= 1e-8


def test_poiseuille_refinement_order():
    errs = [l2_error_vs_exact(f.grid, f.cell_velocity(), poiseuille)
            for f in (solve_reference(_problem(CHANNEL_DOMAIN, n, 2 * n)) for n in (8, 16, 32))]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders >= 1.5), (errs, orders)


def test_cavity_matches_dense_oracle():
    p = _problem(CAVITY_DOMAIN, 16, 32)
    buf, rhs, dm = assemble_fine(p)
    A, b = apply_dirichlet((linsys.compress(buf, symmetric=True), rhs), dm, p.preset)
    assert A.shape[0] <= 2000
    x, _ = linsys.solve_direct(A, b)
    xo = linsys.dense_oracle_solve(A.toarray(), b)
    assert np.abs(x - xo).max() <= 1e-10 * np.abs(xo).max()


@pytest.fixture(scope="module")
def obstacle_cavity():
    obs = generate_obstacles(49, 0.0285, CAVITY_DOMAIN, 0.05, 7)
    return obs, solve_reference(_problem(CAVITY_DOMAIN, 160, 320, obs))


def test_pressure_mean_zero(obstacle_cavity):
    obs, f = obstacle_cavity
    data = cell_data(f.grid, obs, PenalizedCoefficients(f.grid.h))
    w = fluid_mean_weights(f.grid, data)
    assert abs(w @ f.p) <= 1e-10 * (w @ np.abs(f.p))


def test_penalization_decay(obstacle_cavity):
    obs, f = obstacle_cavity
    xy = f.grid.node_coords
    inside = strictly_inside(obs, xy[:, 0], xy[:, 1])
    assert inside.any()
    speed = np.linalg.norm(f.u, axis=1)
    assert speed[inside].max() <= 1e-2 * speed.max()


def test_pressure_gauge_invariance():
    obs = generate_obstacles(6, 0.1, CAVITY_DOMAIN, 0.05, 2)
    a = solve_reference(_problem(CAVITY_DOMAIN, 16, 32, obs, pin_node=0))
    b = solve_reference(_problem(CAVITY_DOMAIN, 16, 32, obs, pin_node=300))
    assert np.abs(a.u - b.u).max() <= 1e-8 * np.abs(a.u).max()
    dp = a.p - b.p
    assert np.ptp(dp) <= 1e-8 * np.abs(a.p).max()


def test_penalization_monotone_in_h():
    obs = ObstacleSet(((-0.4, 0.5, 0.2), (0.3, 0.4, 0.2)), 0.2)
    coarse = solve_reference(_problem(CAVITY_DOMAIN, 20, 40, obs))
    fine = solve_reference(_problem(CAVITY_DOMAIN, 40, 80, obs))
    xc = coarse.grid.node_coords
    inside = strictly_inside(obs, xc[:, 0], xc[:, 1])
    # node (i, j) of the coarse grid is node (2i, 2j) of the fine grid
    j, i = np.divmod(np.arange(coarse.grid.n_nodes), coarse.grid.mx + 1)
    shared = 2 * j * (fine.grid.mx + 1) + 2 * i
    np.testing.assert_allclose(fine.grid.node_coords[shared], xc, atol=1e-14)
    m_coarse = np.linalg.norm(coarse.u[inside], axis=1).max()
    m_fine = np.linalg.norm(fine.u[shared[inside]], axis=1).max()
    assert m_fine < m_coarse


def _div_ratio(f, obstacles):
    g = f.grid
    rc = ref_cell(g.hx, g.hy)
    u = f.cell_velocity()
    div = np.einsum("qa,ca->cq", rc.Gx, u[..., 0]) + np.einsum("qa,ca->cq", rc.Gy, u[..., 1])
    grad2 = sum(np.einsum("qa,ca->cq", G, u[..., k]) ** 2 for G in (rc.Gx, rc.Gy) for k in range(2))
    qx, qy = quadrature_points(g)
    fluid = ~obstacles.contains(qx, qy)
    return np.sqrt((div[fluid] ** 2).sum() / grad2[fluid].sum())


def test_divergence_decreases_under_refinement():
    obs = ObstacleSet(((-0.4, 0.5, 0.2), (0.3, 0.4, 0.2)), 0.2)
    ratios = [_div_ratio(solve_reference(_problem(CAVITY_DOMAIN, n, 2 * n, obs)), obs) for n in (10, 20, 40)]
    assert ratios[0] > ratios[1] > ratios[2], ratios


def test_dof_map_layout():
    dm = DofMap(build_fine(UNIT, 2, 2))
    assert dm.n_dofs == 27
    np.testing.assert_array_equal(dm.velocity([0, 4], 1), [1, 13])
    np.testing.assert_array_equal(dm.pressure([0, 4]), [2, 14])
