"""Penalized, stabilized Q1-Q1 Stokes solver on a uniform grid.

Unknowns are interleaved per node as ``(u_x, u_y, p)``: dof ``3*n + k``.
The assembled operator is symmetric indefinite::

    [ A   B^T ] [u]   [f]
    [ B  -S   ] [p] = [0]

with ``A`` the penalized viscous + reaction block, ``B`` the discrete
``-div`` and ``S = theta h^2`` times the pressure Laplacian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import linsys
from .geometry import (BodyForce, BoundaryPreset, ObstacleSet, PenalizedCoefficients,
                       coefficient_fields)
from .mesh import FineGrid
from .q1 import quadrature_points, ref_cell

log = logging.getLogger(__name__)

DEFAULT_THETA = 0.05


class InconsistentBC(ValueError):
    """Every side natural: velocity is not anchored anywhere."""


@dataclass(frozen=True)
class CellData:
    """Coefficients at the 2x2 Gauss points of every cell, shape ``(n_cells, 4)``."""

    nu: np.ndarray
    sigma: np.ndarray
    f: np.ndarray  # (n_cells, 4, 2)
    fluid: np.ndarray  # bool


def cell_data(grid: FineGrid, obstacles: ObstacleSet, coeffs: PenalizedCoefficients,
              body_force: BodyForce | None = None) -> CellData:
    x, y = quadrature_points(grid)
    nu, sigma, f, inside = coefficient_fields(coeffs, obstacles, x, y, body_force)
    return CellData(nu, sigma, f, ~inside)


def velocity_cell_matrices(grid: FineGrid, data: CellData) -> np.ndarray:
    """Per-cell scalar blocks ``int nu grad.grad + int sigma N N``, shape ``(n_cells, 4, 4)``."""
    rc = ref_cell(grid.hx, grid.hy)
    return np.einsum("cq,qab->cab", data.nu, rc.stiff_q) + np.einsum("cq,qab->cab", data.sigma, rc.mass_q)


def load_cell_vectors(grid: FineGrid, data: CellData) -> np.ndarray:
    """Per-cell load ``int f N_a``, shape ``(n_cells, 4, 2)``."""
    rc = ref_cell(grid.hx, grid.hy)
    return rc.w * np.einsum("cqk,qa->cak", data.f, rc.N)


def cell_dofs(grid: FineGrid) -> np.ndarray:
    """Global dofs of each cell in local order ``[ux x4, uy x4, p x4]``."""
    n = grid.cell_nodes
    return np.concatenate([3 * n, 3 * n + 1, 3 * n + 2], axis=1)


def stokes_cell_matrices(grid: FineGrid, data: CellData, theta: float) -> np.ndarray:
    rc = ref_cell(grid.hx, grid.hy)
    kv = velocity_cell_matrices(grid, data)
    nc = grid.n_cells
    loc = np.zeros((nc, 12, 12))
    loc[:, 0:4, 0:4] = kv
    loc[:, 4:8, 4:8] = kv
    loc[:, 8:12, 0:4] = rc.div_x
    loc[:, 8:12, 4:8] = rc.div_y
    loc[:, 0:4, 8:12] = rc.div_x.T
    loc[:, 4:8, 8:12] = rc.div_y.T
    loc[:, 8:12, 8:12] = -theta * grid.h**2 * rc.laplace
    return loc


def assemble_stokes(grid: FineGrid, data: CellData, theta: float, n_extra: int = 0):
    """Triplets and load vector of the stabilized system on ``grid``.

    ``n_extra`` reserves trailing rows/columns for constraint multipliers.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    n = 3 * grid.n_nodes + n_extra
    loc = stokes_cell_matrices(grid, data, theta)
    dofs = cell_dofs(grid)
    buf = linsys.TripletBuffer(n, n)
    buf.add(np.repeat(dofs, 12, axis=1), np.tile(dofs, (1, 12)), loc)
    rhs = np.zeros(n)
    fl = load_cell_vectors(grid, data)
    nodes = grid.cell_nodes
    np.add.at(rhs, 3 * nodes, fl[:, :, 0])
    np.add.at(rhs, 3 * nodes + 1, fl[:, :, 1])
    return buf, rhs


def fluid_mean_weights(grid: FineGrid, data: CellData) -> np.ndarray:
    """Nodal weights ``w_n`` with ``sum_n w_n p_n = int_fluid p_h``."""
    rc = ref_cell(grid.hx, grid.hy)
    wc = rc.w * np.einsum("cq,qa->ca", data.fluid.astype(float), rc.N)
    out = np.zeros(grid.n_nodes)
    np.add.at(out, grid.cell_nodes, wc)
    return out


@dataclass(frozen=True)
class DofMap:
    grid: FineGrid

    @property
    def n_dofs(self) -> int:
        return 3 * self.grid.n_nodes

    def velocity(self, nodes, comp: int):
        return 3 * np.asarray(nodes) + comp

    def pressure(self, nodes):
        return 3 * np.asarray(nodes) + 2


@dataclass(frozen=True)
class FineProblem:
    grid: FineGrid
    obstacles: ObstacleSet
    coeffs: PenalizedCoefficients
    preset: BoundaryPreset
    body_force: BodyForce | None = None
    theta: float = DEFAULT_THETA
    pin_node: int = 0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")


@dataclass(frozen=True)
class StokesField:
    grid: FineGrid
    u: np.ndarray  # (n_nodes, 2)
    p: np.ndarray  # (n_nodes,)
    report: linsys.SolveReport | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.u.shape != (self.grid.n_nodes, 2) or self.p.shape != (self.grid.n_nodes,):
            raise ValueError("field arrays do not match the grid")

    def cell_velocity(self) -> np.ndarray:
        return self.u[self.grid.cell_nodes]


def assemble_fine(problem: FineProblem):
    """Return ``(TripletBuffer, rhs, DofMap)`` before boundary conditions."""
    data = cell_data(problem.grid, problem.obstacles, problem.coeffs, problem.body_force)
    buf, rhs = assemble_stokes(problem.grid, data, problem.theta)
    return buf, rhs, DofMap(problem.grid)


def dirichlet_nodes(grid: FineGrid, preset: BoundaryPreset) -> np.ndarray:
    sides = preset.dirichlet_sides()
    if not sides:
        raise InconsistentBC("all boundary sides are natural")
    return np.unique(np.concatenate([grid.side_nodes(s) for s in sides]))


def apply_dirichlet(system, dof_map: DofMap, preset: BoundaryPreset, pin_node: int = 0):
    """Impose boundary velocities and, for enclosed flow, pin one pressure to 0."""
    A, rhs = system
    grid = dof_map.grid
    nodes = dirichlet_nodes(grid, preset)
    xy = grid.node_coords[nodes]
    w = preset.velocity(xy[:, 0], xy[:, 1])
    dofs = [dof_map.velocity(nodes, 0), dof_map.velocity(nodes, 1)]
    vals = [w[:, 0], w[:, 1]]
    if preset.enclosed:
        dofs.append(dof_map.pressure([pin_node]))
        vals.append(np.zeros(1))
    return linsys.constrain(A, rhs, np.concatenate(dofs), np.concatenate(vals))


def solve_reference(problem: FineProblem) -> StokesField:
    grid = problem.grid
    data = cell_data(grid, problem.obstacles, problem.coeffs, problem.body_force)
    buf, rhs = assemble_stokes(grid, data, problem.theta)
    A = linsys.compress(buf, symmetric=True)
    A, rhs = apply_dirichlet((A, rhs), DofMap(grid), problem.preset, problem.pin_node)
    log.info("fine solve: %d unknowns, %d nonzeros", A.shape[0], A.matrix.nnz)
    x, report = linsys.solve_direct(A, rhs)
    x = x.reshape(-1, 3)
    p = x[:, 2].copy()
    w = fluid_mean_weights(grid, data)
    if w.sum() > 0:
        p -= (w @ p) / w.sum()
    return StokesField(grid, x[:, :2].copy(), p, report)
