"""Fine-scale reconstruction, relative error norms and file output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .basis import BasisSet
from .coarse_solver import CoarseSolution, ProvenanceMismatch
from .fine_solver import StokesField
from .geometry import ObstacleSet
from .mesh import CoarseMesh, FineGrid, element_subgrid
from .q1 import quadrature_points, ref_cell


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ReconstructedField:
    """Broken (per coarse element) fine velocity plus element pressures.

    ``u`` is the nodal field with one-sided values averaged on coarse edges;
    norms use the broken per-element values instead.
    """

    grid: FineGrid
    coarse: CoarseMesh
    element_velocity: np.ndarray  # (n_elements, nn_element, 2)
    pressure: np.ndarray  # (n_elements,)
    provenance_hash: str = ""

    @property
    def u(self) -> np.ndarray:
        acc = np.zeros((self.grid.n_nodes, 2))
        cnt = np.zeros(self.grid.n_nodes)
        for e in range(self.coarse.n_elements):
            nm = element_subgrid(self.coarse, self.grid, e).node_map
            acc[nm] += self.element_velocity[e]
            cnt[nm] += 1
        return acc / cnt[:, None]

    @property
    def nodal_pressure(self) -> np.ndarray:
        acc = np.zeros(self.grid.n_nodes)
        cnt = np.zeros(self.grid.n_nodes)
        for e in range(self.coarse.n_elements):
            nm = element_subgrid(self.coarse, self.grid, e).node_map
            acc[nm] += self.pressure[e]
            cnt[nm] += 1
        return acc / cnt

    def cell_velocity(self) -> np.ndarray:
        out = np.empty((self.grid.n_cells, 4, 2))
        for e in range(self.coarse.n_elements):
            sub = element_subgrid(self.coarse, self.grid, e)
            out[sub.cell_map] = self.element_velocity[e][sub.grid.cell_nodes]
        return out

    @classmethod
    def from_stokes(cls, field: StokesField, coarse: CoarseMesh, obstacles: ObstacleSet) -> "ReconstructedField":
        """Restrict a nodal fine field to broken form with element-averaged pressure."""
        vel = np.stack([field.u[element_subgrid(coarse, field.grid, e).node_map]
                        for e in range(coarse.n_elements)])
        return cls(field.grid, coarse, vel, element_pressure_average(field, coarse, obstacles))


def reconstruct(sol: CoarseSolution, bset: BasisSet) -> ReconstructedField:
    if sol.provenance_hash != bset.provenance_hash:
        raise ProvenanceMismatch("coarse solution and basis set come from different configurations")
    coarse = bset.coarse
    vel = []
    for eb in bset.elements:
        edges = coarse.element_edges(eb.element)
        coef = sol.velocity[list(edges)]  # (4, 2) indexed [f, i]
        vel.append(np.einsum("fi,fink->nk", coef, eb.velocity))
    return ReconstructedField(bset.fine, coarse, np.stack(vel), sol.pressure.copy(), sol.provenance_hash)


def fluid_quadrature(grid: FineGrid, obstacles: ObstacleSet) -> np.ndarray:
    x, y = quadrature_points(grid)
    return ~obstacles.contains(x, y)


def element_pressure_average(field: StokesField, coarse: CoarseMesh, obstacles: ObstacleSet) -> np.ndarray:
    """Mean of the nodal pressure over ``T`` intersected with the fluid."""
    grid = field.grid
    rc = ref_cell(grid.hx, grid.hy)
    fluid = fluid_quadrature(grid, obstacles)
    pq = field.p[grid.cell_nodes] @ rc.N.T  # (nc, 4)
    out = np.zeros(coarse.n_elements)
    for e in range(coarse.n_elements):
        cm = element_subgrid(coarse, grid, e).cell_map
        m = fluid[cm]
        out[e] = pq[cm][m].sum() / m.sum() if m.any() else 0.0
    return out


def element_fluid_measure(grid: FineGrid, coarse: CoarseMesh, obstacles: ObstacleSet) -> np.ndarray:
    rc = ref_cell(grid.hx, grid.hy)
    fluid = fluid_quadrature(grid, obstacles)
    return np.array([rc.w * fluid[element_subgrid(coarse, grid, e).cell_map].sum()
                     for e in range(coarse.n_elements)])


def _psum(a) -> float:
    # pairwise summation, order fixed by the array layout
    return float(np.sum(np.asarray(a, dtype=float).ravel()))


@dataclass(frozen=True)
class ErrorReport:
    config: str
    h_over_eps: float
    l1_rel: float
    l2_rel: float
    h1_rel: float
    l2_p_rel: float


CSV_COLUMNS = ("config", "H_over_eps", "L1_rel", "L2_rel", "H1_rel", "L2_P_rel")


def h_over_eps(coarse: CoarseMesh, obstacles: ObstacleSet) -> float:
    if not math.isclose(coarse.H_x, coarse.H_y, rel_tol=1e-12):
        raise ValueError("H/eps needs square coarse cells")
    if obstacles.epsilon <= 0:
        return math.inf
    return coarse.H_x / obstacles.epsilon


def error_norms(test: ReconstructedField, reference: StokesField, obstacles: ObstacleSet) -> ErrorReport:
    """Relative L1/L2/H1 velocity and element-pressure errors over fluid Gauss points."""
    grid = reference.grid
    if (test.grid.mx, test.grid.my, test.grid.hx, test.grid.hy, test.grid.x0, test.grid.y0) != \
            (grid.mx, grid.my, grid.hx, grid.hy, grid.x0, grid.y0):
        raise GridMismatch("test and reference live on different fine grids")
    rc = ref_cell(grid.hx, grid.hy)
    fluid = fluid_quadrature(grid, obstacles)
    ut = test.cell_velocity()
    ur = reference.cell_velocity()

    def at_points(u):
        val = np.einsum("qa,cak->cqk", rc.N, u)
        grad = np.stack([np.einsum("qa,cak->cqk", rc.Gx, u), np.einsum("qa,cak->cqk", rc.Gy, u)], axis=-1)
        return val[fluid], grad[fluid]

    vt, gt = at_points(ut)
    vr, gr = at_points(ur)
    ev = vt - vr
    eg = gt - gr
    w = rc.w
    l1 = _psum(w * np.sqrt((ev**2).sum(-1))) / _psum(w * np.sqrt((vr**2).sum(-1)))
    l2 = math.sqrt(_psum(w * (ev**2).sum(-1))) / math.sqrt(_psum(w * (vr**2).sum(-1)))
    h1 = math.sqrt(_psum(w * (eg**2).sum((-1, -2)))) / math.sqrt(_psum(w * (gr**2).sum((-1, -2))))

    coarse = test.coarse
    meas = element_fluid_measure(grid, coarse, obstacles)
    pr = element_pressure_average(reference, coarse, obstacles)
    pt = np.asarray(test.pressure, dtype=float)
    pr = pr - _psum(meas * pr) / _psum(meas)
    pt = pt - _psum(meas * pt) / _psum(meas)
    den = _psum(meas * pr**2)
    lp = math.sqrt(_psum(meas * (pt - pr) ** 2) / den) if den > 0 else 0.0
    try:
        ratio = h_over_eps(coarse, obstacles)
    except ValueError:
        ratio = math.nan
    return ErrorReport(coarse.label, ratio, l1, l2, h1, lp)


def _fmt(v: float) -> str:
    return format(v, ".17g")


def write_convergence_csv(reports, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS)
        for r in reports:
            wr.writerow([r.config] + [_fmt(getattr(r, f.name)) for f in fields(r)[1:]])
    return path


def read_convergence_csv(path) -> list[ErrorReport]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected header")
    return [ErrorReport(r[0], *map(float, r[1:])) for r in rows[1:]]


def write_field_csv(grid: FineGrid, u, p, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xy = grid.node_coords
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "u_x", "u_y", "p"])
        for k in range(grid.n_nodes):
            wr.writerow([_fmt(xy[k, 0]), _fmt(xy[k, 1]), _fmt(u[k, 0]), _fmt(u[k, 1]), _fmt(p[k])])
    return path


def write_vtk(path, dims, origin, spacing, name, values, cell_data: bool = False) -> Path:
    """Legacy ASCII STRUCTURED_POINTS file holding one scalar or vector field."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype=float)
    nx, ny = dims
    lines = [
        "# vtk DataFile Version 3.0",
        name,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1",
        f"ORIGIN {_fmt(origin[0])} {_fmt(origin[1])} 0",
        f"SPACING {_fmt(spacing[0])} {_fmt(spacing[1])} 1",
    ]
    count = (nx - 1) * (ny - 1) if cell_data else nx * ny
    lines.append(f"{'CELL_DATA' if cell_data else 'POINT_DATA'} {count}")
    if values.ndim == 2:
        lines.append(f"VECTORS {name} double")
        lines += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in values]
    else:
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in values]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_fine_field(field, out_dir, scenario: str, config: str) -> list[Path]:
    """VTK (velocity, pressure) and CSV files of a nodal fine field."""
    out_dir = Path(out_dir)
    grid = field.grid
    dims = (grid.mx + 1, grid.my + 1)
    origin = (grid.x_nodes[0], grid.y_nodes[0])
    u = field.u
    p = field.p if isinstance(field, StokesField) else field.nodal_pressure
    stem = f"{scenario}_{config}"
    paths = [write_vtk(out_dir / f"{stem}_velocity.vtk", dims, origin, (grid.hx, grid.hy), "velocity", u)]
    if isinstance(field, ReconstructedField):
        c = field.coarse
        paths.append(write_vtk(out_dir / f"{stem}_pressure.vtk", (c.nx + 1, c.ny + 1),
                               (c.domain.x_min, c.domain.y_min), (c.H_x, c.H_y), "pressure",
                               field.pressure, cell_data=True))
    else:
        paths.append(write_vtk(out_dir / f"{stem}_pressure.vtk", dims, origin, (grid.hx, grid.hy), "pressure", p))
    paths.append(write_field_csv(grid, u, p, out_dir / f"{stem}_fields.csv"))
    return paths


def write_outputs(fields_, reports, out_dir, scenario: str) -> list[Path]:
    """Write every ``(config, field)`` pair and the convergence table."""
    paths = []
    for config, fld in fields_:
        paths += write_fine_field(fld, out_dir, scenario, config)
    paths.append(write_convergence_csv(reports, Path(out_dir) / f"{scenario}_convergence.csv"))
    return paths
