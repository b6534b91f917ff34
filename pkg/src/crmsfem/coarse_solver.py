"""Coarse MsFEM saddle-point system in the multiscale basis.

Velocity unknown ``2*E + i`` is the coefficient of ``Phi_{E,i}``; because the
basis is normalized by ``int_E Phi_{E,i} = e_i`` it equals ``int_E u_H``.
Pressure unknown ``2*n_edges + T`` is the constant pressure on element ``T``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import linsys
from .basis import BasisSet
from .fine_solver import InconsistentBC, cell_data, load_cell_vectors, \
    velocity_cell_matrices
from .geometry import BodyForce, BoundaryPreset
from .q1 import ref_cell


class ProvenanceMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CoarseSystem:
    matrix: linsys.CompressedMatrix
    rhs: np.ndarray
    n_edges: int
    n_elements: int
    fluid_measure: np.ndarray  # per element
    provenance_hash: str
    fixed: dict = field(default_factory=dict)  # dof -> value
    pinned: int | None = None

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_edges

    def velocity_dof(self, edge: int, comp: int) -> int:
        return 2 * edge + comp

    def pressure_dof(self, element: int) -> int:
        return 2 * self.n_edges + element

    @property
    def A(self):
        n = self.n_velocity
        return self.matrix.matrix[:n, :n]

    @property
    def B(self):
        n = self.n_velocity
        return self.matrix.matrix[n:, :n]


def element_contributions(eb, bset: BasisSet, body_force: BodyForce | None = None,
                          form: str = "penalized"):
    """Local ``(A_T 8x8, B_T 8, F_T 8)`` ordered ``[f * 2 + i]``.

    ``form="fluid"`` drops the penalization and integrates over fluid points only.
    """
    grid = eb.sub.grid
    data = cell_data(grid, bset.obstacles, bset.coeffs, body_force)
    if form == "fluid":
        nu = np.where(data.fluid, bset.coeffs.nu_fluid, 0.0)
        data = replace(data, nu=nu, sigma=np.zeros_like(data.sigma))
    elif form != "penalized":
        raise ValueError(f"unknown coarse form {form!r}")
    kv = velocity_cell_matrices(grid, data)
    U = eb.velocity.reshape(8, grid.n_nodes, 2)[:, grid.cell_nodes]  # (8, nc, 4, 2)
    KU = np.einsum("cab,kcbd->kcad", kv, U)
    A_T = np.einsum("kcad,lcad->kl", U, KU)
    A_T = 0.5 * (A_T + A_T.T)
    rc = ref_cell(grid.hx, grid.hy)
    # -int_T div Phi; div of Q1 integrates exactly with the cell gradient sums
    gx = rc.w * rc.Gx.sum(axis=0)
    gy = rc.w * rc.Gy.sum(axis=0)
    B_T = -(np.einsum("a,kca->k", gx, U[..., 0]) + np.einsum("a,kca->k", gy, U[..., 1]))
    fl = load_cell_vectors(grid, data)
    F_T = np.einsum("cak,lcak->l", fl, U)
    return A_T, B_T, F_T


def assemble_coarse(bset: BasisSet, body_force: BodyForce | None = None, form: str = "penalized",
                    expected: str | None = None) -> CoarseSystem:
    if expected is not None and expected != bset.provenance_hash:
        raise ProvenanceMismatch("basis set was built for a different mesh/obstacle configuration")
    coarse = bset.coarse
    ne, nt = coarse.n_edges, coarse.n_elements
    n = 2 * ne + nt
    buf = linsys.TripletBuffer(n, n)
    rhs = np.zeros(n)
    fluid = np.zeros(nt)
    for eb in bset.elements:
        T = eb.element
        edges = np.array(coarse.element_edges(T))
        dofs = (2 * edges[:, None] + np.arange(2)).ravel()
        A_T, B_T, F_T = element_contributions(eb, bset, body_force, form)
        buf.add(np.repeat(dofs, 8), np.tile(dofs, 8), A_T)
        pdof = np.full(8, 2 * ne + T)
        buf.add(pdof, dofs, B_T)
        buf.add(dofs, pdof, B_T)
        np.add.at(rhs, dofs, F_T)
        fluid[T] = eb.fluid_measure
    return CoarseSystem(linsys.compress(buf, symmetric=True), rhs, ne, nt, fluid, bset.provenance_hash)


_GL_X, _GL_W = leggauss(5)


def edge_average(preset: BoundaryPreset, endpoints) -> np.ndarray:
    """``(1/|e|) int_e w`` by 5-point Gauss-Legendre."""
    x0, y0, x1, y1 = endpoints
    t = 0.5 * (_GL_X + 1.0)
    w = preset.velocity(x0 + t * (x1 - x0), y0 + t * (y1 - y0))
    return 0.5 * _GL_W @ w


def apply_coarse_bc(system: CoarseSystem, coarse, preset: BoundaryPreset, pin_element: int = 0) -> CoarseSystem:
    """Fix boundary-edge coefficients to ``int_e w`` on Dirichlet sides."""
    if not preset.dirichlet_sides():
        raise InconsistentBC("all boundary sides are natural")
    fixed = {}
    table = coarse.edge_table
    for eid in range(coarse.n_edges):
        side = table["side"][eid]
        if side is None or preset.sides[side] != "dirichlet":
            continue
        avg = edge_average(preset, table["endpoints"][eid])
        length = coarse.edge_length(eid)
        for k in range(2):
            fixed[2 * eid + k] = length * avg[k]
    pinned = None
    if preset.enclosed:
        pinned = system.pressure_dof(pin_element)
        fixed[pinned] = 0.0
    dofs = np.fromiter(fixed.keys(), dtype=np.int64)
    vals = np.fromiter(fixed.values(), dtype=float)
    M, rhs = linsys.constrain(system.matrix, system.rhs, dofs, vals)
    return replace(system, matrix=M, rhs=rhs, fixed=fixed, pinned=pinned)


@dataclass(frozen=True)
class CoarseSolution:
    velocity: np.ndarray  # (n_edges, 2) coefficients, = int_E u_H
    pressure: np.ndarray  # (n_elements,)
    edge_lengths: np.ndarray
    provenance_hash: str
    report: linsys.SolveReport | None = field(default=None, compare=False)

    @property
    def edge_average(self) -> np.ndarray:
        """Mean of ``u_H`` over each edge."""
        return self.velocity / self.edge_lengths[:, None]

    def to_json(self) -> str:
        return json.dumps({
            "provenance": self.provenance_hash,
            "edge_velocity": self.velocity.tolist(),
            "element_pressure": self.pressure.tolist(),
        })

    @classmethod
    def from_json(cls, text: str, edge_lengths) -> "CoarseSolution":
        d = json.loads(text)
        return cls(np.array(d["edge_velocity"], dtype=float), np.array(d["element_pressure"], dtype=float),
                   np.asarray(edge_lengths, dtype=float), d["provenance"])


def solve_coarse(system: CoarseSystem, coarse) -> CoarseSolution:
    x, report = linsys.solve_direct(system.matrix, system.rhs)
    nv = system.n_velocity
    u = x[:nv].reshape(-1, 2)
    p = x[nv:].copy()
    if system.pinned is not None:
        m = system.fluid_measure
        p -= (m @ p) / m.sum()
    lengths = np.array([coarse.edge_length(e) for e in range(coarse.n_edges)])
    return CoarseSolution(u, p, lengths, system.provenance_hash, report)
