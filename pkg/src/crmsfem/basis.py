"""Crouzeix-Raviart multiscale basis functions.

On every coarse element ``T`` one local saddle-point system is factored and
solved for the 8 right-hand sides ``(F, i)``: a penalized, stabilized Q1-Q1
Stokes operator bordered by

* two edge-integral constraints per element edge, ``int_F Phi = delta_FE e_i``
  (multipliers ``lambda_F``), evaluated by the trapezoid rule on fine nodes;
* a zero-mean constraint on the pressure over the fluid part of ``T``, whose
  multiplier is the constant divergence of ``Phi``.

The basis function of edge ``E`` and component ``i`` is the concatenation of
the matching columns of the (one or two) elements adjacent to ``E``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import linsys
from .fine_solver import assemble_stokes, cell_data, fluid_mean_weights
from .geometry import ObstacleSet, PenalizedCoefficients
from .mesh import LOCAL_EDGES, CoarseMesh, ElementSubgrid, FineGrid, element_subgrid
from .q1 import quadrature_points, ref_cell, shape

log = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-8
PRESSURE_MEAN_TOL = 1e-8
# empirical: obstacle-free elements show 1-4% spread for the stabilized pair
DIV_CONSTANCY_TOL = 0.1


class BasisError(RuntimeError):
    """One or more local problems failed; ``failures`` maps edge id to message."""

    def __init__(self, failures: dict):
        self.failures = failures
        super().__init__(f"basis computation failed on edges {sorted(failures)}")


def edge_weights(grid: FineGrid, side: str) -> tuple[np.ndarray, np.ndarray]:
    """Nodes of ``side`` and their composite trapezoid weights."""
    nodes = grid.side_nodes(side)
    h = grid.hx if side in ("bottom", "top") else grid.hy
    w = np.full(len(nodes), h)
    w[[0, -1]] = h / 2
    return nodes, w


def edge_integrals(grid: FineGrid, velocity: np.ndarray) -> np.ndarray:
    """``int_F u`` for the four sides of ``grid``; shape ``(4, 2)``."""
    out = np.zeros((4, 2))
    for f, side in enumerate(LOCAL_EDGES):
        nodes, w = edge_weights(grid, side)
        out[f] = w @ velocity[nodes]
    return out


@dataclass(frozen=True)
class ElementBasis:
    """All 8 local solutions of one coarse element.

    Arrays are indexed ``[f, i, ...]`` with ``f`` the element-local edge and
    ``i`` the velocity component whose edge integral is prescribed.
    """

    element: int
    sub: ElementSubgrid
    velocity: np.ndarray  # (4, 2, nn, 2)
    pressure: np.ndarray  # (4, 2, nn)
    multipliers: np.ndarray  # (4, 2, 4, 2)
    divergence: np.ndarray  # (4, 2) constant-divergence multiplier
    fluid_measure: float
    report: linsys.SolveReport | None = field(default=None, compare=False)


def local_system(sub: ElementSubgrid, obstacles: ObstacleSet, coeffs: PenalizedCoefficients,
                 theta: float):
    """Bordered local matrix and the 8 right-hand sides."""
    grid = sub.grid
    data = cell_data(grid, obstacles, coeffs)
    nn = grid.n_nodes
    buf, _ = assemble_stokes(grid, data, theta, n_extra=9)
    base = 3 * nn
    for f, side in enumerate(LOCAL_EDGES):
        nodes, w = edge_weights(grid, side)
        for k in range(2):
            row = np.full(len(nodes), base + 2 * f + k)
            buf.add(row, 3 * nodes + k, w)
            buf.add(3 * nodes + k, row, w)
    wm = fluid_mean_weights(grid, data)
    nz = np.flatnonzero(wm)
    row = np.full(len(nz), base + 8)
    buf.add(row, 3 * nz + 2, wm[nz])
    buf.add(3 * nz + 2, row, wm[nz])
    A = linsys.compress(buf, symmetric=True)
    rhs = np.zeros((base + 9, 8))
    rhs[base + np.arange(8), np.arange(8)] = 1.0
    return A, rhs, float(wm.sum())


def solve_element(e: int, coarse: CoarseMesh, fine: FineGrid, obstacles: ObstacleSet,
                  coeffs: PenalizedCoefficients, theta: float) -> ElementBasis:
    sub = element_subgrid(coarse, fine, e)
    A, rhs, fluid = local_system(sub, obstacles, coeffs, theta)
    if fluid <= 0:
        raise linsys.SingularMatrix(f"coarse element {e} is fully covered by obstacles")
    x, report = linsys.solve_direct(A, rhs)
    nn = sub.grid.n_nodes
    fields = x[:3 * nn].T.reshape(4, 2, nn, 3)
    lam = x[3 * nn:3 * nn + 8].T.reshape(4, 2, 4, 2)
    return ElementBasis(e, sub, np.ascontiguousarray(fields[..., :2]),
                        np.ascontiguousarray(fields[..., 2]), lam,
                        x[3 * nn + 8].reshape(4, 2), fluid, report)


@dataclass(frozen=True)
class BasisPiece:
    element: int
    local_edge: int
    sub: ElementSubgrid
    velocity: np.ndarray  # (nn, 2)
    pressure: np.ndarray  # (nn,)
    multipliers: np.ndarray  # (4, 2)


@dataclass(frozen=True)
class BasisFunction:
    edge: int
    component: int
    pieces: tuple[BasisPiece, ...]

    def constraint_targets(self, piece: BasisPiece) -> np.ndarray:
        t = np.zeros((4, 2))
        t[piece.local_edge, self.component] = 1.0
        return t

    def constraint_residuals(self) -> list[np.ndarray]:
        return [edge_integrals(p.sub.grid, p.velocity) - self.constraint_targets(p) for p in self.pieces]

    def evaluate(self, x: float, y: float) -> np.ndarray:
        """Point value; zero outside the patch, averaged on the shared edge."""
        vals = []
        for p in self.pieces:
            x0, x1, y0, y1 = p.sub.grid.bounds
            if x0 <= x <= x1 and y0 <= y <= y1:
                vals.append(_interpolate(p.sub.grid, p.velocity, x, y))
        return np.mean(vals, axis=0) if vals else np.zeros(2)


def _interpolate(grid: FineGrid, nodal: np.ndarray, x: float, y: float) -> np.ndarray:
    i = min(int((x - grid.x_nodes[0]) / grid.hx), grid.mx - 1)
    j = min(int((y - grid.y_nodes[0]) / grid.hy), grid.my - 1)
    s = (x - grid.x_nodes[i]) / grid.hx
    t = (y - grid.y_nodes[j]) / grid.hy
    c = grid.cell_nodes[j * grid.mx + i]
    return shape(s, t) @ nodal[c]


def _solve_many(args):
    elements, coarse, fine, obstacles, coeffs, theta = args
    out = []
    for e in elements:
        try:
            out.append(solve_element(e, coarse, fine, obstacles, coeffs, theta))
        except linsys.LinearSolveError as exc:
            out.append(exc)
    return out


def provenance(coarse: CoarseMesh, fine: FineGrid, obstacles: ObstacleSet, theta: float) -> dict:
    d = coarse.domain
    return {
        "domain": [d.x_min, d.x_max, d.y_min, d.y_max],
        "coarse": [coarse.ny, coarse.nx],
        "fine": [fine.my, fine.mx],
        "h": fine.h,
        "theta": theta,
        "obstacles": obstacles.digest(),
    }


def provenance_hash(prov: dict) -> str:
    return hashlib.sha256(json.dumps(prov, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class BasisSet:
    coarse: CoarseMesh
    fine: FineGrid
    obstacles: ObstacleSet
    coeffs: PenalizedCoefficients
    theta: float
    elements: tuple[ElementBasis, ...]

    @property
    def provenance(self) -> dict:
        return provenance(self.coarse, self.fine, self.obstacles, self.theta)

    @property
    def provenance_hash(self) -> str:
        return provenance_hash(self.provenance)

    def function(self, edge: int, component: int) -> BasisFunction:
        pieces = []
        for e in self.coarse.edge_elements(edge):
            f = self.coarse.element_edges(e).index(edge)
            eb = self.elements[e]
            pieces.append(BasisPiece(e, f, eb.sub, eb.velocity[f, component],
                                     eb.pressure[f, component], eb.multipliers[f, component]))
        return BasisFunction(edge, component, tuple(pieces))

    def functions(self):
        for edge in range(self.coarse.n_edges):
            for i in range(2):
                yield self.function(edge, i)

    def __len__(self):
        return 2 * self.coarse.n_edges


def compute_basis_for_edge(edge_id: int, component: int, coarse: CoarseMesh, fine: FineGrid,
                           obstacles: ObstacleSet, coeffs: PenalizedCoefficients,
                           theta: float) -> BasisFunction:
    pieces = []
    for e in coarse.edge_elements(edge_id):
        eb = solve_element(e, coarse, fine, obstacles, coeffs, theta)
        f = coarse.element_edges(e).index(edge_id)
        pieces.append(BasisPiece(e, f, eb.sub, eb.velocity[f, component],
                                 eb.pressure[f, component], eb.multipliers[f, component]))
    return BasisFunction(edge_id, component, tuple(pieces))


def compute_basis_set(coarse: CoarseMesh, fine: FineGrid, obstacles: ObstacleSet,
                      coeffs: PenalizedCoefficients, theta: float, parallelism: int = 1) -> BasisSet:
    """Solve every element's local problems, optionally in worker processes.

    Each element is solved by the same code path whatever the worker count,
    so the result does not depend on ``parallelism``.
    """
    ids = list(range(coarse.n_elements))
    if parallelism <= 1:
        results = _solve_many((ids, coarse, fine, obstacles, coeffs, theta))
    else:
        chunks = [ids[k::parallelism] for k in range(parallelism)]
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            parts = list(pool.map(_solve_many, [(c, coarse, fine, obstacles, coeffs, theta) for c in chunks]))
        results = [None] * len(ids)
        for chunk, part in zip(chunks, parts):
            for e, r in zip(chunk, part):
                results[e] = r
    failures = {}
    for e, r in enumerate(results):
        if isinstance(r, Exception):
            for edge in coarse.element_edges(e):
                failures.setdefault(edge, f"element {e}: {r}")
    if failures:
        raise BasisError(failures)
    return BasisSet(coarse, fine, obstacles, coeffs, theta, tuple(results))


def divergence_deviation(piece: BasisPiece, obstacles: ObstacleSet) -> float:
    """Spread of ``div Phi`` at fluid Gauss points, relative to the gradient scale."""
    grid = piece.sub.grid
    rc = ref_cell(grid.hx, grid.hy)
    x, y = quadrature_points(grid)
    fluid = ~obstacles.contains(x, y)
    u = piece.velocity[grid.cell_nodes]  # (nc, 4, 2)
    div = np.einsum("qa,ca->cq", rc.Gx, u[..., 0]) + np.einsum("qa,ca->cq", rc.Gy, u[..., 1])
    if not fluid.any():
        return 0.0
    grad = np.sqrt(sum(np.einsum("qa,ca->cq", G, u[..., k]) ** 2
                       for G in (rc.Gx, rc.Gy) for k in range(2)))
    d = div[fluid]
    mean = d.mean()
    scale = max(abs(mean), grad[fluid].max(), 1e-300)
    return float(np.abs(d - mean).max() / scale)


@dataclass
class BasisAudit:
    constraint: dict = field(default_factory=dict)  # (edge, comp) -> max residual
    pressure_mean: dict = field(default_factory=dict)
    divergence: dict = field(default_factory=dict)
    flagged: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flagged


def audit_basis(bset: BasisSet, constraint_tol: float = CONSTRAINT_TOL,
                pressure_tol: float = PRESSURE_MEAN_TOL, div_tol: float = DIV_CONSTANCY_TOL) -> BasisAudit:
    """Recheck every basis function from its stored fields.

    Constraint and pressure-mean violations flag the function; divergence
    spread above ``div_tol`` only warns.
    """
    audit = BasisAudit()
    weights = {}
    for eb in bset.elements:
        data = cell_data(eb.sub.grid, bset.obstacles, bset.coeffs)
        weights[eb.element] = fluid_mean_weights(eb.sub.grid, data)
    for bf in bset.functions():
        key = (bf.edge, bf.component)
        audit.constraint[key] = max(float(np.abs(r).max()) for r in bf.constraint_residuals())
        pm = 0.0
        dv = 0.0
        for p in bf.pieces:
            w = weights[p.element]
            pm = max(pm, abs(w @ p.pressure) / max(w @ np.abs(p.pressure), 1e-300))
            dv = max(dv, divergence_deviation(p, bset.obstacles))
        audit.pressure_mean[key] = pm
        audit.divergence[key] = dv
        if audit.constraint[key] > constraint_tol or pm > pressure_tol:
            audit.flagged.append(key)
        if dv > div_tol:
            audit.warnings.append(key)
    if audit.warnings:
        warnings.warn(f"{len(audit.warnings)} basis functions exceed the divergence-constancy threshold")
    return audit
