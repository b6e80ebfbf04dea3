"""Hexagonal reflector array: layout, agent assignment and focal-point steering.

Tile angles live in the panel frame: local z is the flat-panel normal, local
x is horizontal in the panel plane and local y points up along the panel.
``theta`` is the polar tilt from the panel normal and ``phi`` the azimuth of
that tilt.  They are stored in signed form (``phi`` folded into
``[-pi/2, pi/2]`` by negating ``theta``) so that the symmetric servo limits
apply directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .raytracer import SurfaceArrays, polygon_arrays
from .scene import METAL, Box, Surface
from .vectormath import ContractError, bisector_normals, normalize, vec3

SERVO_LIMIT = math.pi / 6


@dataclass
class ReflectorArray:
    rows: int
    cols: int
    pitch: float
    center: np.ndarray
    frame: np.ndarray  # rows: local x, local y, local z (= base normal) in world coords
    positions: np.ndarray  # (rows*cols, 3) tile pivots, row-major
    theta: np.ndarray
    phi: np.ndarray
    tile_fill: float = 0.9

    @property
    def base_normal(self) -> np.ndarray:
        return self.frame[2]

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    def row_col(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.arange(self.n_tiles)
        return idx // self.cols, idx % self.cols

    def copy(self) -> "ReflectorArray":
        return ReflectorArray(self.rows, self.cols, self.pitch, self.center.copy(), self.frame.copy(),
                              self.positions.copy(), self.theta.copy(), self.phi.copy(), self.tile_fill)

    def set_flat(self) -> None:
        self.theta[:] = 0.0
        self.phi[:] = 0.0

    def local_normals(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.stack([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)], axis=1)

    def normals(self) -> np.ndarray:
        return self.local_normals() @ self.frame

    def tile_polygons(self) -> np.ndarray:
        """Hexagon vertices ``(N, 6, 3)`` of every tile in its current orientation."""
        n = self.local_normals()
        a, b, c = n[:, 0], n[:, 1], n[:, 2]
        k = 1.0 / (1.0 + c)
        # Minimal rotation taking local z onto n, applied to local x and y.
        u = np.stack([1 - a * a * k, -a * b * k, -a], axis=1) @ self.frame
        v = np.stack([-a * b * k, 1 - b * b * k, -b], axis=1) @ self.frame
        radius = self.tile_fill * self.pitch / math.sqrt(3.0)
        ang = np.radians(30.0 + 60.0 * np.arange(6))
        return (self.positions[:, None, :]
                + radius * (np.cos(ang)[None, :, None] * u[:, None, :]
                            + np.sin(ang)[None, :, None] * v[:, None, :]))

    def surface_arrays(self) -> SurfaceArrays:
        polys = self.tile_polygons()
        normals, offsets, en, eo = polygon_arrays(polys)
        count = len(polys)
        return SurfaceArrays(normals, offsets, en, eo, np.ones(count, complex), np.ones(count, bool), [])

    def surfaces(self) -> list[Surface]:
        rr, cc = self.row_col()
        return [Surface(p, METAL, "tile", f"tile_{r}_{c}") for p, r, c in zip(self.tile_polygons(), rr, cc)]

    def dump(self) -> str:
        """Per-tile angle state as JSON text (sorted, fixed precision)."""
        rr, cc = self.row_col()
        tiles = [{"row": int(r), "col": int(c), "theta": round(float(t), 12), "phi": round(float(p), 12)}
                 for r, c, t, p in zip(rr, cc, self.theta, self.phi)]
        return json.dumps({"rows": self.rows, "cols": self.cols, "tiles": tiles}, indent=1, sort_keys=True)


def panel_frame(base_normal: np.ndarray) -> np.ndarray:
    """Local axes (x horizontal in-plane, y up in-plane, z = base normal)."""
    z = normalize(vec3(base_normal))
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    x = normalize(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def hex_offsets(rows: int, cols: int, pitch: float) -> np.ndarray:
    """In-plane (horizontal, vertical) offsets relative to tile (0, 0)."""
    r, c = np.divmod(np.arange(rows * cols), cols)
    h = c * pitch + (r % 2) * pitch / 2.0
    v = r * pitch * math.sqrt(3.0) / 2.0
    return np.stack([h, v], axis=1)


def hex_layout(rows: int, cols: int, pitch: float, center, base_normal) -> ReflectorArray:
    """Pointy-top hexagonal packing centred on ``center``; tiles start flat."""
    if rows < 1 or cols < 1:
        raise ContractError("rows and cols must be >= 1")
    if not pitch > 0:
        raise ContractError("pitch must be positive")
    center = vec3(center)
    frame = panel_frame(base_normal)
    off = hex_offsets(rows, cols, pitch)
    off = off - 0.5 * (off.min(axis=0) + off.max(axis=0))
    positions = center + off[:, :1] * frame[0] + off[:, 1:] * frame[1]
    n = rows * cols
    return ReflectorArray(rows, cols, pitch, center, frame, positions, np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class Assignment:
    """Tile-to-agent map, stored row-major with 1-based agent ids."""

    rows: int
    cols: int
    agents: int
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=int).reshape(self.rows, self.cols)
        if t.min() < 1 or t.max() > self.agents or len(np.unique(t)) != self.agents:
            raise ContractError("assignment must map onto every agent 1..L")
        object.__setattr__(self, "table", t)

    def __call__(self, row: int, col: int) -> int:
        return int(self.table[row, col])

    def flat(self) -> np.ndarray:
        return self.table.ravel()

    def tiles_of(self, agent: int) -> np.ndarray:
        return np.flatnonzero(self.flat() == agent)


def _check_agents(cols: int, agents: int) -> None:
    if agents < 1:
        raise ContractError("need at least one agent")
    if agents > cols:
        raise ContractError(f"{agents} agents cannot share {cols} columns")


def assign_columns(rows: int, cols: int, agents: int) -> Assignment:
    _check_agents(cols, agents)
    col = np.arange(cols)
    return Assignment(rows, cols, agents, np.tile(col % agents + 1, (rows, 1)))


def shifted_groups(rows: int, cols: int, groups: int | None = None, shift: int = 4) -> np.ndarray:
    """Raw 1-based group labels: row 0 is 1..G, each next row left-shifted by ``shift``."""
    groups = cols if groups is None else groups
    r, c = np.divmod(np.arange(rows * cols), cols)
    return ((c + shift * r) % groups + 1).reshape(rows, cols)


def assign_shifted(rows: int, cols: int, agents: int, shift: int = 4) -> Assignment:
    """Shifted groups folded onto agents with the column rule ``(g - 1) mod L + 1``."""
    _check_agents(cols, agents)
    raw = shifted_groups(rows, cols, cols, shift)
    return Assignment(rows, cols, agents, (raw - 1) % agents + 1)


def hex_manhattan(r0, c0, r1, c1):
    """Row distance plus half-pitch column distance (odd rows sit half a pitch right)."""
    return abs(r1 - r0) + abs((2 * c1 + r1 % 2) - (2 * c0 + r0 % 2))


@dataclass(frozen=True)
class FocalConstraints:
    boxes: tuple  # one Box per agent
    delta_max: float = 0.5
    theta_limits: tuple = (-SERVO_LIMIT, SERVO_LIMIT)
    phi_limits: tuple = (-SERVO_LIMIT, SERVO_LIMIT)

    def __post_init__(self):
        if not self.delta_max > 0:
            raise ContractError("delta_max must be positive")
        if self.theta_limits[0] > self.theta_limits[1] or self.phi_limits[0] > self.phi_limits[1]:
            raise ContractError("angle limits inverted")

    @classmethod
    def around(cls, region: Box, agents: int, margin_xy: float = 2.0, z_range=(0.5, 2.5), **kw):
        lo = region.lo.copy()
        hi = region.hi.copy()
        lo[:2] -= margin_xy
        hi[:2] += margin_xy
        lo[2], hi[2] = z_range
        return cls(tuple(Box(lo, hi) for _ in range(agents)), **kw)

    @property
    def lo(self) -> np.ndarray:
        return np.stack([b.lo for b in self.boxes])

    @property
    def hi(self) -> np.ndarray:
        return np.stack([b.hi for b in self.boxes])

    def unconstrained_angles(self) -> "FocalConstraints":
        return FocalConstraints(self.boxes, self.delta_max, (-math.pi, math.pi), (-math.pi, math.pi))


def clamp_focal(f, box: Box) -> np.ndarray:
    return np.minimum(np.maximum(np.asarray(f, dtype=float), box.lo), box.hi)


def signed_angles(local_normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Polar/azimuth of local normals, folded so that ``|phi| <= pi/2``."""
    theta = np.arctan2(np.hypot(local_normals[:, 0], local_normals[:, 1]), local_normals[:, 2])
    phi = np.arctan2(local_normals[:, 1], local_normals[:, 0])
    flip = np.abs(phi) > math.pi / 2
    theta = np.where(flip, -theta, theta)
    phi = np.where(flip, phi - np.pi * np.sign(phi), phi)
    return theta, phi


def target_angles(array: ReflectorArray, focals: np.ndarray, assignment: Assignment, ap) -> tuple:
    """Unclamped signed angles that aim every tile at its agent's focal point."""
    agent_of = assignment.flat() - 1
    normals = bisector_normals(array.positions, np.asarray(focals, float)[agent_of], vec3(ap))
    return signed_angles(normals @ array.frame.T)


def apply_focal_points(array: ReflectorArray, focals, assignment: Assignment, ap,
                       constraints: FocalConstraints, mode: str = "per_tile") -> ReflectorArray:
    """Orient every tile toward its agent's focal point within the servo limits.

    ``column_azimuth`` shares one azimuth per column: the mean of the
    column's unclamped per-tile azimuths, clamped afterwards.
    """
    focals = np.asarray(focals, dtype=float)
    if focals.shape != (assignment.agents, 3):
        raise ContractError(f"expected {assignment.agents} focal points")
    if (assignment.rows, assignment.cols) != (array.rows, array.cols):
        raise ContractError("assignment shape does not match the array")
    focals = np.minimum(np.maximum(focals, constraints.lo), constraints.hi)
    theta, phi = target_angles(array, focals, assignment, ap)
    if mode == "column_azimuth":
        col_phi = phi.reshape(array.rows, array.cols).mean(axis=0)
        phi = np.tile(col_phi, array.rows)
    elif mode != "per_tile":
        raise ContractError(f"unknown control mode {mode!r}")
    out = array.copy()
    out.theta = np.clip(theta, *constraints.theta_limits)
    out.phi = np.clip(phi, *constraints.phi_limits)
    return out


def complexity_reduction(rows: int, cols: int, agents: int) -> float:
    """Ratio of per-tile angle parameters to focal-point coordinates."""
    if rows < 1 or cols < 1 or agents < 1:
        raise ContractError("all sizes must be positive")
    return 2.0 * rows * cols / (3.0 * agents)


def segment_centroids(array: ReflectorArray, assignment: Assignment) -> np.ndarray:
    return np.stack([array.positions[assignment.tiles_of(l + 1)].mean(axis=0)
                     for l in range(assignment.agents)])
