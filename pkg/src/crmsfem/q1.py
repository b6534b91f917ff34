"""Bilinear (Q1) reference cell with the 2x2 Gauss rule.

Local node order: (0,0), (1,0), (1,1), (0,1) in unit cell coordinates.
Quadrature points are ordered the same way.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_g = 0.5 / np.sqrt(3.0)
GAUSS_1D = np.array([0.5 - _g, 0.5 + _g])
QPTS = np.array([(GAUSS_1D[0], GAUSS_1D[0]), (GAUSS_1D[1], GAUSS_1D[0]),
                 (GAUSS_1D[1], GAUSS_1D[1]), (GAUSS_1D[0], GAUSS_1D[1])])
_CORNERS = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)


def shape(s, t):
    s, t = np.asarray(s, float), np.asarray(t, float)
    return np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=-1)


def shape_ds(s, t):
    s, t = np.asarray(s, float), np.asarray(t, float)
    return np.stack([-(1 - t), 1 - t, t, -t], axis=-1)


def shape_dt(s, t):
    s, t = np.asarray(s, float), np.asarray(t, float)
    return np.stack([-(1 - s), -s, s, 1 - s], axis=-1)


class RefCell:
    """Quadrature tables for a ``hx x hy`` cell.

    ``N[q, a]`` shape values, ``Gx[q, a]``/``Gy[q, a]`` physical derivatives,
    ``w`` the (uniform) point weight.
    """

    def __init__(self, hx: float, hy: float):
        self.hx, self.hy = hx, hy
        s, t = QPTS[:, 0], QPTS[:, 1]
        self.N = shape(s, t)
        self.Gx = shape_ds(s, t) / hx
        self.Gy = shape_dt(s, t) / hy
        self.w = hx * hy / 4.0
        # per-point outer products, summed against per-point coefficients
        self.stiff_q = self.w * (np.einsum("qa,qb->qab", self.Gx, self.Gx)
                                 + np.einsum("qa,qb->qab", self.Gy, self.Gy))
        self.mass_q = self.w * np.einsum("qa,qb->qab", self.N, self.N)
        # -int q d(v)/dx : rows pressure node, cols velocity node
        self.div_x = -self.w * np.einsum("qa,qb->ab", self.N, self.Gx)
        self.div_y = -self.w * np.einsum("qa,qb->ab", self.N, self.Gy)
        self.laplace = self.stiff_q.sum(axis=0)

    def points(self, x0, y0):
        """Physical quadrature points of cells with lower-left corners ``(x0, y0)``."""
        x0 = np.asarray(x0, float)[:, None]
        y0 = np.asarray(y0, float)[:, None]
        return x0 + QPTS[:, 0] * self.hx, y0 + QPTS[:, 1] * self.hy


@lru_cache(maxsize=16)
def ref_cell(hx: float, hy: float) -> RefCell:
    return RefCell(hx, hy)


def cell_corners(grid):
    """Lower-left corner coordinates of every cell of ``grid``."""
    xy = grid.node_coords[grid.cell_nodes[:, 0]]
    return xy[:, 0], xy[:, 1]


def quadrature_points(grid):
    """Arrays ``(x, y)`` of shape ``(n_cells, 4)``."""
    x0, y0 = cell_corners(grid)
    return ref_cell(grid.hx, grid.hy).points(x0, y0)
