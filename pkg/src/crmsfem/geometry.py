"""Domain, obstacle set, boundary presets and penalized coefficient fields."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SIDES = ("bottom", "right", "top", "left")


class PackingFailure(RuntimeError):
    """Rejection sampling could not place the requested obstacles."""


@dataclass(frozen=True)
class DomainSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate domain {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


CAVITY_DOMAIN = DomainSpec(-1.0, 1.0, 0.0, 1.0)
CHANNEL_DOMAIN = DomainSpec(0.0, 4.0, -1.0, 1.0)


@dataclass(frozen=True)
class ObstacleSet:
    """Axis-aligned closed squares of common side ``epsilon``.

    ``squares`` holds ``(center_x, center_y, side)`` triples.
    """

    squares: tuple = ()
    epsilon: float = 0.0

    def __post_init__(self):
        sq = tuple(tuple(float(v) for v in s) for s in self.squares)
        object.__setattr__(self, "squares", sq)
        if sq:
            if self.epsilon <= 0:
                raise ValueError("epsilon must be positive")
            for _, _, side in sq:
                if side != self.epsilon:
                    raise ValueError("all obstacle sides must equal epsilon")
            for a in range(len(sq)):
                for b in range(a + 1, len(sq)):
                    if _squares_touch(sq[a], sq[b]):
                        raise ValueError(f"obstacles {a} and {b} overlap")

    def __len__(self):
        return len(self.squares)

    def __iter__(self):
        return iter(self.squares)

    def check_inside(self, domain: DomainSpec, margin: float = 0.0):
        """Raise if a square is not strictly inside ``domain`` by ``margin``."""
        for cx, cy, s in self.squares:
            r = s / 2
            gap = min(cx - r - domain.x_min, domain.x_max - cx - r,
                      cy - r - domain.y_min, domain.y_max - cy - r)
            if gap <= 0 or gap < margin:
                raise ValueError(f"obstacle at ({cx}, {cy}) too close to the boundary")

    def contains(self, x, y) -> np.ndarray:
        """Vectorized closed-square membership of points ``(x, y)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for cx, cy, s in self.squares:
            r = s / 2
            inside |= (np.abs(x - cx) <= r) & (np.abs(y - cy) <= r)
        return inside

    def to_json(self) -> str:
        return json.dumps([{"cx": cx, "cy": cy, "side": s} for cx, cy, s in self.squares])

    @classmethod
    def from_json(cls, text: str) -> "ObstacleSet":
        items = json.loads(text)
        squares = tuple((d["cx"], d["cy"], d["side"]) for d in items)
        eps = squares[0][2] if squares else 0.0
        return cls(squares, eps)

    def digest(self) -> str:
        payload = json.dumps({"eps": self.epsilon, "squares": [list(map(float.hex, s)) for s in self.squares]})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _squares_touch(a, b) -> bool:
    # closed squares intersect iff both center gaps are within the sum of half sides
    return abs(a[0] - b[0]) <= (a[2] + b[2]) / 2 and abs(a[1] - b[1]) <= (a[2] + b[2]) / 2


def generate_obstacles(count: int, epsilon: float, domain: DomainSpec, margin: float,
                       seed: int) -> ObstacleSet:
    """Place ``count`` disjoint squares by seeded rejection sampling.

    Centers are uniform on the domain shrunk by ``margin + epsilon/2``.
    Raises PackingFailure after ``10000 * count`` rejected draws.
    """
    if count < 0 or margin < 0:
        raise ValueError("count and margin must be non-negative")
    if count == 0:
        return ObstacleSet((), float(epsilon) if epsilon > 0 else 0.0)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    pad = margin + epsilon / 2
    lo = np.array([domain.x_min + pad, domain.y_min + pad])
    hi = np.array([domain.x_max - pad, domain.y_max - pad])
    if np.any(hi <= lo):
        raise PackingFailure("margin leaves no room for obstacles")
    rng = np.random.default_rng(seed)
    centers = np.empty((0, 2))
    budget = 10_000 * count
    attempts = 0
    while len(centers) < count:
        if attempts >= budget:
            raise PackingFailure(f"placed {len(centers)} of {count} obstacles in {budget} attempts")
        attempts += 1
        c = lo + (hi - lo) * rng.random(2)
        if len(centers):
            d = np.abs(centers - c)
            if np.any((d[:, 0] <= epsilon) & (d[:, 1] <= epsilon)):
                continue
        centers = np.vstack([centers, c])
    return ObstacleSet(tuple((float(cx), float(cy), float(epsilon)) for cx, cy in centers),
                       float(epsilon))


def is_inside_obstacle(obstacles: ObstacleSet, point) -> bool:
    return bool(obstacles.contains(point[0], point[1]))


class BCKind(enum.Enum):
    CAVITY_LID = "CavityLid"
    CHANNEL_PARABOLIC = "ChannelParabolic"
    CUSTOM_DIRICHLET = "CustomDirichlet"


VelocityFn = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True)
class BoundaryPreset:
    """Boundary velocity ``w`` and per-side Dirichlet/natural flags.

    ``w`` is vectorized: ``w(x, y) -> (ux, uy)`` for arrays of points.
    """

    kind: BCKind
    w: VelocityFn
    sides: dict = field(default_factory=lambda: {s: "dirichlet" for s in SIDES})

    def __post_init__(self):
        for s in SIDES:
            if self.sides.get(s) not in ("dirichlet", "natural"):
                raise ValueError(f"side {s!r} must be 'dirichlet' or 'natural'")

    @property
    def enclosed(self) -> bool:
        return all(self.sides[s] == "dirichlet" for s in SIDES)

    def dirichlet_sides(self) -> list[str]:
        return [s for s in SIDES if self.sides[s] == "dirichlet"]

    def velocity(self, x, y) -> np.ndarray:
        ux, uy = self.w(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        x = np.asarray(x, dtype=float)
        return np.stack([np.broadcast_to(ux, x.shape), np.broadcast_to(uy, x.shape)], axis=-1).astype(float)


def cavity_lid(domain: DomainSpec = CAVITY_DOMAIN, speed: float = 1.0) -> BoundaryPreset:
    """Lid velocity ``(speed, 0)`` on the open top side, no-slip elsewhere.

    The two top corners belong to the side walls and get zero velocity.
    """
    def w(x, y):
        on_lid = (y >= domain.y_max) & (x > domain.x_min) & (x < domain.x_max)
        return np.where(on_lid, speed, 0.0), np.zeros_like(x)

    return BoundaryPreset(BCKind.CAVITY_LID, w)


def channel_parabolic(domain: DomainSpec = CHANNEL_DOMAIN) -> BoundaryPreset:
    """Inflow ``(1 - y^2, 0)`` on the left, no-slip top/bottom, do-nothing on the right."""
    def w(x, y):
        inflow = x <= domain.x_min
        return np.where(inflow, 1.0 - y**2, 0.0), np.zeros_like(x)

    sides = {"bottom": "dirichlet", "right": "natural", "top": "dirichlet", "left": "dirichlet"}
    return BoundaryPreset(BCKind.CHANNEL_PARABOLIC, w, sides)


def custom_dirichlet(w: VelocityFn, sides: dict | None = None) -> BoundaryPreset:
    return BoundaryPreset(BCKind.CUSTOM_DIRICHLET, w, dict(sides or {s: "dirichlet" for s in SIDES}))


@dataclass(frozen=True)
class PenalizedCoefficients:
    """Viscosity inside obstacles is ``1/h`` and the reaction ``1/h^3``."""

    h: float
    nu_fluid: float = 1.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")

    @property
    def nu_obstacle(self) -> float:
        return 1.0 / self.h

    @property
    def sigma_obstacle(self) -> float:
        return 1.0 / self.h**3


BodyForce = Callable[[np.ndarray, np.ndarray], tuple]


def zero_force(x, y):
    return np.zeros_like(x), np.zeros_like(x)


def coefficient_fields(coeffs: PenalizedCoefficients, obstacles: ObstacleSet, x, y,
                       body_force: BodyForce | None = None):
    """Arrays ``(nu, sigma, f, inside)`` at points; ``f`` has a trailing axis of 2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = obstacles.contains(x, y)
    nu = np.where(inside, coeffs.nu_obstacle, coeffs.nu_fluid)
    sigma = np.where(inside, coeffs.sigma_obstacle, 0.0)
    fx, fy = (body_force or zero_force)(x, y)
    f = np.stack([np.broadcast_to(fx, x.shape), np.broadcast_to(fy, x.shape)], axis=-1).astype(float)
    f[inside] = 0.0
    return nu, sigma, f, inside


def coefficients_at(coeffs: PenalizedCoefficients, obstacles: ObstacleSet, point,
                    body_force: BodyForce | None = None):
    nu, sigma, f, _ = coefficient_fields(coeffs, obstacles, np.array([point[0]]),
                                         np.array([point[1]]), body_force)
    return float(nu[0]), float(sigma[0]), (float(f[0, 0]), float(f[0, 1]))
