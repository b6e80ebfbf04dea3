"""Scene description: planar facets, ITU-R P.2040 materials, L-shaped hallway."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .vectormath import ContractError, normalize, vec3

EPS0 = 8.8541878128e-12
SPEED_OF_LIGHT = 299_792_458.0

SURFACE_KINDS = ("wall", "floor", "ceiling", "obstacle", "tile")


@dataclass(frozen=True)
class Material:
    """ITU power-law material: ``eta' = a f^b``, ``sigma = c f^d`` with f in GHz.

    ``pec`` marks a perfect electric conductor; its reflection coefficient is
    -1 regardless of the power-law constants.
    """

    name: str
    a: float
    b: float
    c: float
    d: float
    pec: bool = False

    def __post_init__(self):
        if not self.a > 0:
            raise ContractError(f"material {self.name}: a must be > 0")
        if self.c < 0:
            raise ContractError(f"material {self.name}: c must be >= 0")


# ITU-R P.2040-3 Table 3 constants (valid 1-100 GHz for these entries).
CONCRETE = Material("concrete", 5.24, 0.0, 0.0462, 0.7822)
PLASTERBOARD = Material("plasterboard", 2.73, 0.0, 0.0085, 0.9395)
CEILING_BOARD = Material("ceiling_board", 1.48, 0.0, 0.0011, 1.0750)
WOOD = Material("wood", 1.99, 0.0, 0.0047, 1.0718)
METAL = Material("metal", 1.0, 0.0, 1e7, 0.0, pec=True)

MATERIALS = {m.name: m for m in (CONCRETE, PLASTERBOARD, CEILING_BOARD, WOOD, METAL)}


def material_properties(m: Material, f_ghz: float) -> tuple[float, float]:
    """Relative permittivity and conductivity (S/m) at ``f_ghz``."""
    if not f_ghz > 0:
        raise ContractError("frequency must be positive")
    return m.a * f_ghz**m.b, m.c * f_ghz**m.d


def complex_permittivity(eta_prime: float, sigma: float, f_hz: float) -> complex:
    """Complex relative permittivity ``eta' - j sigma / (2 pi f eps0)``."""
    if not f_hz > 0:
        raise ContractError("frequency must be positive")
    return complex(eta_prime, -sigma / (2.0 * math.pi * f_hz * EPS0))


def fresnel_reflection(eta: complex | None, cos_theta_i: float) -> complex:
    """Perpendicular-polarization Fresnel coefficient.

    ``eta=None`` is the perfect-conductor limit and returns -1.
    """
    if not cos_theta_i > 0:
        raise ContractError("grazing or back-side incidence (cos_theta_i <= 0)")
    if cos_theta_i > 1.0:
        cos_theta_i = 1.0
    if eta is None:
        return complex(-1.0)
    root = np.sqrt(complex(eta) - (1.0 - cos_theta_i**2))
    return complex((cos_theta_i - root) / (cos_theta_i + root))


def fresnel_reflection_array(eta: complex, cos_theta_i: np.ndarray) -> np.ndarray:
    c = np.clip(cos_theta_i, 1e-12, 1.0)
    root = np.sqrt(complex(eta) - (1.0 - c**2))
    return (c - root) / (c + root)


@dataclass(frozen=True)
class Surface:
    """Planar convex polygon with a material.

    Vertices are ordered around the boundary; the stored normal follows the
    right-hand rule over that ordering.
    """

    polygon: np.ndarray
    material: Material
    kind: str
    name: str = ""

    def __post_init__(self):
        poly = np.asarray(self.polygon, dtype=float)
        if poly.ndim != 2 or poly.shape[1] != 3 or poly.shape[0] < 3:
            raise ContractError("surface polygon needs >= 3 vertices in 3D")
        if self.kind not in SURFACE_KINDS:
            raise ContractError(f"unknown surface kind {self.kind!r}")
        object.__setattr__(self, "polygon", poly)
        n = polygon_normal(poly)
        if not polygon_is_planar(poly, n) or not polygon_is_convex(poly, n):
            raise ContractError(f"surface {self.name!r} is not a planar convex polygon")

    @property
    def normal(self) -> np.ndarray:
        return polygon_normal(self.polygon)

    @property
    def centroid(self) -> np.ndarray:
        return self.polygon.mean(axis=0)


def polygon_normal(poly: np.ndarray) -> np.ndarray:
    """Newell's method; raises for zero-area polygons."""
    nxt = np.roll(poly, -1, axis=0)
    n = np.array(
        [
            np.sum((poly[:, 1] - nxt[:, 1]) * (poly[:, 2] + nxt[:, 2])),
            np.sum((poly[:, 2] - nxt[:, 2]) * (poly[:, 0] + nxt[:, 0])),
            np.sum((poly[:, 0] - nxt[:, 0]) * (poly[:, 1] + nxt[:, 1])),
        ]
    )
    if np.linalg.norm(n) < 1e-12:
        raise ContractError("polygon has zero area")
    return normalize(n)


def polygon_is_planar(poly: np.ndarray, n: np.ndarray | None = None, tol: float = 1e-9) -> bool:
    n = polygon_normal(poly) if n is None else n
    off = (poly - poly[0]) @ n
    return bool(np.all(np.abs(off) <= tol))


def polygon_is_convex(poly: np.ndarray, n: np.ndarray | None = None) -> bool:
    n = polygon_normal(poly) if n is None else n
    e = np.roll(poly, -1, axis=0) - poly
    turns = np.cross(e, np.roll(e, -1, axis=0)) @ n
    return bool(np.all(turns >= -1e-12))


def rectangle(p0, p1, p2, p3, material, kind, name="") -> Surface:
    return Surface(np.array([p0, p1, p2, p3], dtype=float), material, kind, name)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = vec3(self.lo), vec3(self.hi)
        if np.any(lo > hi):
            raise ContractError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, p, tol: float = 1e-12) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + rng.random((n, 3)) * (self.hi - self.lo)

    def clamp(self, p: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(p, self.lo), self.hi)


@dataclass(frozen=True)
class Scene:
    surfaces: tuple
    ap_position: np.ndarray
    ap_power_dbm: float
    frequency_hz: float
    user_region: Box
    users: tuple = ()
    bounds: Box | None = None
    config: "SceneConfig | None" = None

    def __post_init__(self):
        if not self.frequency_hz > 0:
            raise ContractError("frequency must be positive")
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "ap_position", vec3(self.ap_position))
        object.__setattr__(self, "users", tuple(vec3(u) for u in self.users))

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency_hz

    def with_surfaces(self, surfaces) -> "Scene":
        return replace(self, surfaces=tuple(surfaces))

    def without_kind(self, kind: str) -> "Scene":
        return self.with_surfaces(s for s in self.surfaces if s.kind != kind)

    def surfaces_of(self, kind: str) -> list[Surface]:
        return [s for s in self.surfaces if s.kind == kind]


@dataclass(frozen=True)
class SceneConfig:
    """Hallway and reflector parameters; every field is a config-file key."""

    hall_width_m: float = 3.0
    ceiling_m: float = 3.0
    ue_height_m: float = 1.5
    frequency_ghz: float = 60.0
    tx_power_dbm: float = 5.0
    ap_x: float = 9.5
    ap_y: float = -1.5
    ap_z: float = 2.5
    horizontal_leg_m: float = 20.0
    vertical_leg_m: float = 15.0
    ue_x_min: float = -6.0
    ue_y_min: float = -6.2
    ue_x_max: float = 2.0
    ue_y_max: float = -4.25
    obstacle_x: float = 3.0
    obstacle_y: float = -5.5
    obstacle_height_m: float = 1.8
    obstacle_semi_x_m: float = 0.6
    obstacle_semi_y_m: float = 0.4
    obstacle_facets: int = 16
    reflector_x: float = 11.2
    reflector_y: float = -5.7
    reflector_z: float = 2.3
    reflector_wall_gap_m: float = 0.2
    reflector_rows: int = 7
    reflector_cols: int = 9
    reflector_pitch_m: float = 0.10
    # Mount azimuth offset (deg) from the normal that points the flat panel
    # at the UE-region centre; keeps the required tilts inside the servo cone.
    reflector_yaw_offset_deg: float = 12.0

    def __post_init__(self):
        for name in ("hall_width_m", "ceiling_m", "ue_height_m", "frequency_ghz",
                     "horizontal_leg_m", "vertical_leg_m", "obstacle_height_m",
                     "obstacle_semi_x_m", "obstacle_semi_y_m", "reflector_pitch_m"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.reflector_rows < 1 or self.reflector_cols < 1 or self.obstacle_facets < 3:
            raise ContractError("reflector rows/cols >= 1 and obstacle facets >= 3 required")

    @property
    def frequency_hz(self) -> float:
        return self.frequency_ghz * 1e9

    @property
    def user_region(self) -> Box:
        h = self.ue_height_m
        return Box((self.ue_x_min, self.ue_y_min, h), (self.ue_x_max, self.ue_y_max, h))

    @property
    def ap_position(self) -> np.ndarray:
        return np.array([self.ap_x, self.ap_y, self.ap_z])

    @property
    def reflector_center(self) -> np.ndarray:
        return np.array([self.reflector_x, self.reflector_y, self.reflector_z])

    def hallway_extent(self) -> dict:
        """Corner coordinates of the L: horizontal leg along -x, vertical leg along +y."""
        y_mid = 0.5 * (self.ue_y_min + self.ue_y_max)
        y_lo = y_mid - 0.5 * self.hall_width_m
        y_hi = y_mid + 0.5 * self.hall_width_m
        x_outer = self.reflector_x + self.reflector_wall_gap_m
        x_inner = x_outer - self.hall_width_m
        return {
            "x_outer": x_outer,
            "x_inner": x_inner,
            "x_end": x_outer - self.horizontal_leg_m,
            "y_lo": y_lo,
            "y_hi": y_hi,
            "y_end": y_lo + self.vertical_leg_m,
        }

    def panel_base_normal(self) -> np.ndarray:
        """Horizontal flat-panel normal: bisector toward AP and UE centre, yawed by the offset."""
        c = self.reflector_center
        ue_c = 0.5 * (self.user_region.lo + self.user_region.hi)
        to_ap = normalize(self.ap_position - c)
        to_ue = normalize(ue_c - c)
        b = to_ap + to_ue
        az = math.atan2(b[1], b[0]) + math.radians(self.reflector_yaw_offset_deg)
        return np.array([math.cos(az), math.sin(az), 0.0])

    @classmethod
    def desk(cls, **overrides) -> "SceneConfig":
        return cls(**{"reflector_rows": 5, "reflector_cols": 5, **overrides})


def load_scene_config(path: str | Path, section: str = "scene") -> SceneConfig:
    """Read ``key = value`` pairs from the ``[scene]`` section of an INI file."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    if not parser.has_section(section):
        return SceneConfig()
    return scene_config_from_mapping(dict(parser.items(section)))


def scene_config_from_mapping(values: dict) -> SceneConfig:
    types = {f.name: f.type for f in fields(SceneConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in types:
            raise ContractError(f"unknown scene key {key!r}")
        kwargs[key] = int(raw) if types[key] in (int, "int") else float(raw)
    return SceneConfig(**kwargs)


def _check_l_topology(cfg: SceneConfig, ext: dict) -> None:
    ap = cfg.ap_position
    if not (ext["x_inner"] < ap[0] < ext["x_outer"] and ext["y_lo"] < ap[1] < ext["y_end"]):
        raise ContractError("access point must lie inside the vertical leg")
    if not 0 < ap[2] < cfg.ceiling_m:
        raise ContractError("access point height must be below the ceiling")
    region = cfg.user_region
    if not (region.lo[0] > ext["x_end"] and region.hi[0] < ext["x_outer"]
            and region.lo[1] > ext["y_lo"] and region.hi[1] < ext["y_hi"]):
        raise ContractError("UE region must lie inside the horizontal leg")
    if not cfg.ue_height_m < cfg.ceiling_m:
        raise ContractError("UE height must be below the ceiling")
    if not (ext["y_lo"] < cfg.reflector_y < ext["y_hi"]):
        raise ContractError("reflector must sit at the corner of the horizontal leg")
    half_height = 0.5 * cfg.reflector_pitch_m * (cfg.reflector_rows + 1)
    if cfg.reflector_z - half_height <= 0 or cfg.reflector_z + half_height >= cfg.ceiling_m:
        raise ContractError("reflector array does not fit between floor and ceiling")


def _obstacle(cfg: SceneConfig) -> list[Surface]:
    n = cfg.obstacle_facets
    ang = 2.0 * np.pi * np.arange(n) / n
    ring = np.stack(
        [cfg.obstacle_x + cfg.obstacle_semi_x_m * np.cos(ang),
         cfg.obstacle_y + cfg.obstacle_semi_y_m * np.sin(ang),
         np.zeros(n)], axis=1)
    h = cfg.obstacle_height_m
    out = []
    for k in range(n):
        a, b = ring[k], ring[(k + 1) % n]
        out.append(rectangle(a, b, b + [0, 0, h], a + [0, 0, h], WOOD, "obstacle", f"obstacle_side_{k}"))
    top = ring + np.array([0.0, 0.0, h])
    out.append(Surface(top, WOOD, "obstacle", "obstacle_top"))
    return out


def build_l_hallway(cfg: SceneConfig | None = None, users=()) -> Scene:
    """Static L-shaped hallway (walls, floor, ceiling, obstacle); no reflector tiles.

    The horizontal leg runs along -x from the outer corner wall behind the
    reflector; the vertical leg runs along +y and holds the access point.
    Both hallway ends are open.
    """
    cfg = cfg or SceneConfig()
    ext = hallway = cfg.hallway_extent()
    _check_l_topology(cfg, ext)
    xo, xi, xe = hallway["x_outer"], hallway["x_inner"], hallway["x_end"]
    ylo, yhi, ye = hallway["y_lo"], hallway["y_hi"], hallway["y_end"]
    H = cfg.ceiling_m

    def wall_x(x, y0, y1, name):
        return rectangle((x, y0, 0), (x, y1, 0), (x, y1, H), (x, y0, H), PLASTERBOARD, "wall", name)

    def wall_y(y, x0, x1, name):
        return rectangle((x0, y, 0), (x1, y, 0), (x1, y, H), (x0, y, H), PLASTERBOARD, "wall", name)

    def slab(z, x0, x1, y0, y1, material, kind, name):
        return rectangle((x0, y0, z), (x1, y0, z), (x1, y1, z), (x0, y1, z), material, kind, name)

    surfaces = [
        wall_x(xo, ylo, ye, "outer_wall_x"),
        wall_y(ylo, xe, xo, "outer_wall_y"),
        wall_x(xi, yhi, ye, "inner_wall_x"),
        wall_y(yhi, xe, xi, "inner_wall_y"),
        slab(0.0, xe, xo, ylo, yhi, CONCRETE, "floor", "floor_horizontal"),
        slab(0.0, xi, xo, yhi, ye, CONCRETE, "floor", "floor_vertical"),
        slab(H, xe, xo, ylo, yhi, CEILING_BOARD, "ceiling", "ceiling_horizontal"),
        slab(H, xi, xo, yhi, ye, CEILING_BOARD, "ceiling", "ceiling_vertical"),
    ]
    surfaces += _obstacle(cfg)
    bounds = Box((xe, ylo, 0.0), (xo, ye, H))
    for u in users:
        if not bounds.contains(u):
            raise ContractError(f"user {u} outside hallway volume")
    return Scene(
        surfaces=tuple(surfaces),
        ap_position=cfg.ap_position,
        ap_power_dbm=cfg.tx_power_dbm,
        frequency_hz=cfg.frequency_hz,
        user_region=cfg.user_region,
        users=tuple(users),
        bounds=bounds,
        config=cfg,
    )
