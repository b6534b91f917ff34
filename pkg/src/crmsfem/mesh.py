"""Coarse Cartesian partition, nested fine grid and edge patches.

Enumeration conventions (all row-major, x fastest):

* coarse element ``e = j * nx + i``;
* horizontal edges first, ``id = j * nx + i`` for ``j in 0..ny``; vertical
  edges follow, ``id = nx * (ny + 1) + j * (nx + 1) + i`` for ``i in 0..nx``;
* element-local edge order is bottom, right, top, left;
* fine node ``n = j * (mx + 1) + i``, fine cell ``c = j * mx + i``; cell nodes
  run counter-clockwise from the lower-left corner.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import DomainSpec

LOCAL_EDGES = ("bottom", "right", "top", "left")


class NestingError(ValueError):
    """The fine grid does not subdivide the coarse mesh."""


@dataclass(frozen=True)
class CoarseMesh:
    domain: DomainSpec
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be >= 1")

    @property
    def label(self) -> str:
        return f"{self.ny}x{self.nx}"

    @property
    def H_x(self) -> float:
        return self.domain.width / self.nx

    @property
    def H_y(self) -> float:
        return self.domain.height / self.ny

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_horizontal(self) -> int:
        return self.nx * (self.ny + 1)

    @property
    def n_edges(self) -> int:
        return self.nx * (self.ny + 1) + self.ny * (self.nx + 1)

    def element_ij(self, e: int) -> tuple[int, int]:
        return e % self.nx, e // self.nx

    def element_bounds(self, e: int) -> tuple[float, float, float, float]:
        i, j = self.element_ij(e)
        d = self.domain
        return (d.x_min + i * self.H_x, d.x_min + (i + 1) * self.H_x,
                d.y_min + j * self.H_y, d.y_min + (j + 1) * self.H_y)

    def element_edges(self, e: int) -> tuple[int, int, int, int]:
        i, j = self.element_ij(e)
        nh = self.n_horizontal
        bottom = j * self.nx + i
        top = (j + 1) * self.nx + i
        left = nh + j * (self.nx + 1) + i
        return bottom, left + 1, top, left

    @cached_property
    def edge_table(self) -> dict:
        """Per-edge arrays: orientation, endpoints, boundary side, adjacent elements."""
        n = self.n_edges
        horizontal = np.zeros(n, dtype=bool)
        endpoints = np.zeros((n, 4))
        side = [None] * n
        elements = [[] for _ in range(n)]
        d = self.domain
        for eid in range(n):
            if eid < self.n_horizontal:
                j, i = divmod(eid, self.nx)
                horizontal[eid] = True
                y = d.y_min + j * self.H_y
                endpoints[eid] = (d.x_min + i * self.H_x, y, d.x_min + (i + 1) * self.H_x, y)
                if j == 0:
                    side[eid] = "bottom"
                elif j == self.ny:
                    side[eid] = "top"
            else:
                j, i = divmod(eid - self.n_horizontal, self.nx + 1)
                x = d.x_min + i * self.H_x
                endpoints[eid] = (x, d.y_min + j * self.H_y, x, d.y_min + (j + 1) * self.H_y)
                if i == 0:
                    side[eid] = "left"
                elif i == self.nx:
                    side[eid] = "right"
        for e in range(self.n_elements):
            for eid in self.element_edges(e):
                elements[eid].append(e)
        return {
            "horizontal": horizontal,
            "endpoints": endpoints,
            "side": side,
            "elements": [tuple(sorted(v)) for v in elements],
        }

    def edge_elements(self, eid: int) -> tuple[int, ...]:
        return self.edge_table["elements"][eid]

    def edge_side(self, eid: int) -> str | None:
        return self.edge_table["side"][eid]

    def is_boundary_edge(self, eid: int) -> bool:
        return self.edge_side(eid) is not None

    def edge_length(self, eid: int) -> float:
        return self.H_x if self.edge_table["horizontal"][eid] else self.H_y


def build_coarse(domain: DomainSpec, ny: int, nx: int) -> CoarseMesh:
    return CoarseMesh(domain, nx, ny)


@dataclass(frozen=True)
class FineGrid:
    """Uniform grid of ``mx x my`` cells.

    Sub-grids keep the parent's origin and spacing and record their index
    offset, so node coordinates are bit-identical to the parent's.
    """

    x0: float
    y0: float
    hx: float
    hy: float
    mx: int
    my: int
    i0: int = 0
    j0: int = 0

    def __post_init__(self):
        if self.mx < 1 or self.my < 1:
            raise ValueError("mx and my must be >= 1")

    @property
    def h(self) -> float:
        return min(self.hx, self.hy)

    @property
    def n_nodes(self) -> int:
        return (self.mx + 1) * (self.my + 1)

    @property
    def n_cells(self) -> int:
        return self.mx * self.my

    @property
    def shape(self) -> tuple[int, int]:
        """Node array shape ``(my + 1, mx + 1)``."""
        return self.my + 1, self.mx + 1

    @cached_property
    def x_nodes(self) -> np.ndarray:
        return self.x0 + (self.i0 + np.arange(self.mx + 1)) * self.hx

    @cached_property
    def y_nodes(self) -> np.ndarray:
        return self.y0 + (self.j0 + np.arange(self.my + 1)) * self.hy

    @cached_property
    def node_coords(self) -> np.ndarray:
        X, Y = np.meshgrid(self.x_nodes, self.y_nodes)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.mx), np.arange(self.my))
        n0 = (j * (self.mx + 1) + i).ravel()
        return np.column_stack([n0, n0 + 1, n0 + self.mx + 2, n0 + self.mx + 1])

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return self.x_nodes[0], self.x_nodes[-1], self.y_nodes[0], self.y_nodes[-1]

    def side_nodes(self, side: str) -> np.ndarray:
        """Node ids along one side, ordered by increasing coordinate."""
        nxn, nyn = self.mx + 1, self.my + 1
        if side == "bottom":
            return np.arange(nxn)
        if side == "top":
            return (nyn - 1) * nxn + np.arange(nxn)
        if side == "left":
            return np.arange(nyn) * nxn
        if side == "right":
            return np.arange(nyn) * nxn + nxn - 1
        raise ValueError(side)

    def subgrid(self, i0: int, j0: int, mx: int, my: int) -> "FineGrid":
        return FineGrid(self.x0, self.y0, self.hx, self.hy, mx, my, self.i0 + i0, self.j0 + j0)


def build_fine(domain: DomainSpec, my: int, mx: int) -> FineGrid:
    return FineGrid(domain.x_min, domain.y_min, domain.width / mx, domain.height / my, mx, my)


def check_nesting(coarse: CoarseMesh, fine: FineGrid):
    if fine.mx % coarse.nx or fine.my % coarse.ny:
        raise NestingError(f"fine grid {fine.my}x{fine.mx} does not nest in coarse {coarse.label}")


@dataclass(frozen=True)
class ElementSubgrid:
    """Fine sub-grid owned by one coarse element, with its index maps."""

    element: int
    grid: FineGrid
    node_map: np.ndarray  # local node -> global node
    cell_map: np.ndarray  # local cell -> global cell
    parent_cols: int  # node row stride of the global grid

    def to_local_nodes(self, global_nodes) -> np.ndarray:
        g = np.asarray(global_nodes)
        gi, gj = g % self.parent_cols, g // self.parent_cols
        li, lj = gi - self.grid.i0, gj - self.grid.j0
        if np.any((li < 0) | (li > self.grid.mx) | (lj < 0) | (lj > self.grid.my)):
            raise KeyError("node outside the element")
        return lj * (self.grid.mx + 1) + li


def element_subgrid(coarse: CoarseMesh, fine: FineGrid, e: int) -> ElementSubgrid:
    check_nesting(coarse, fine)
    sx, sy = fine.mx // coarse.nx, fine.my // coarse.ny
    i, j = coarse.element_ij(e)
    sub = fine.subgrid(i * sx, j * sy, sx, sy)
    li, lj = np.meshgrid(np.arange(sx + 1), np.arange(sy + 1))
    node_map = ((j * sy + lj) * (fine.mx + 1) + i * sx + li).ravel()
    ci, cj = np.meshgrid(np.arange(sx), np.arange(sy))
    cell_map = ((j * sy + cj) * fine.mx + i * sx + ci).ravel()
    return ElementSubgrid(e, sub, node_map, cell_map, fine.mx + 1)


@dataclass(frozen=True)
class Patch:
    edge: int
    elements: tuple[int, ...]
    subgrids: tuple[ElementSubgrid, ...]


def patch_of_edge(coarse: CoarseMesh, fine: FineGrid, edge_id: int) -> Patch:
    check_nesting(coarse, fine)
    elems = coarse.edge_elements(edge_id)
    return Patch(edge_id, elems, tuple(element_subgrid(coarse, fine, e) for e in elems))
