"""3D geometry primitives shared by the tracer and the reflector model.

Points and directions are plain ``numpy`` arrays of shape ``(3,)``.  The
functions validate their contracts (finite input, unit-length directions)
and raise :class:`ContractError` on violation.
"""

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-9
DEGENERATE_TOL = 1e-9

X_AXIS = np.array([1.0, 0.0, 0.0])
Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])


class ContractError(ValueError):
    """An input violated a documented precondition."""


class DegenerateGeometryError(ContractError):
    """The requested construction has no unique answer (e.g. zero bisector)."""


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a finite float64 3-vector from three scalars or one sequence."""
    if y is None and z is None:
        v = np.asarray(x, dtype=float).reshape(-1)
    else:
        v = np.array([x, y, z], dtype=float)
    if v.shape != (3,):
        raise ContractError(f"expected 3 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractError(f"non-finite vector {v}")
    return v


def norm(v: np.ndarray) -> float:
    return float(np.sqrt(np.dot(v, v)))


def normalize(v: np.ndarray) -> np.ndarray:
    n = norm(v)
    if n < DEGENERATE_TOL:
        raise DegenerateGeometryError(f"cannot normalize near-zero vector {v}")
    return v / n


def _require_unit(v: np.ndarray, name: str) -> None:
    if abs(norm(v) - 1.0) > UNIT_TOL:
        raise ContractError(f"{name} must be unit length, |{name}|={norm(v)!r}")


@dataclass(frozen=True)
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", vec3(self.point))
        object.__setattr__(self, "normal", vec3(self.normal))
        _require_unit(self.normal, "normal")

    def signed_distance(self, p: np.ndarray) -> float:
        return float(np.dot(p - self.point, self.normal))


def reflect_direction(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Specular reflection ``d - 2 (d.n) n`` of a unit direction about a unit normal."""
    d = vec3(d)
    n = vec3(n)
    _require_unit(d, "d")
    _require_unit(n, "n")
    return d - 2.0 * np.dot(d, n) * n


def bisector_normal(tile: np.ndarray, focal: np.ndarray, ap: np.ndarray) -> np.ndarray:
    """Tile normal that reflects the ray arriving from ``ap`` through ``focal``.

    The half-sum of the unit vectors tile->focal and tile->ap is normalized
    before use; its raw length is ``cos`` of half the opening angle and is
    below one whenever focal and ap are not collinear with the tile.
    """
    tile, focal, ap = vec3(tile), vec3(focal), vec3(ap)
    to_focal = focal - tile
    to_ap = ap - tile
    if norm(to_focal) < DEGENERATE_TOL or norm(to_ap) < DEGENERATE_TOL:
        raise DegenerateGeometryError("focal or access point coincides with tile")
    half_sum = 0.5 * (to_focal / norm(to_focal) + to_ap / norm(to_ap))
    if norm(half_sum) < DEGENERATE_TOL:
        raise DegenerateGeometryError("focal and access point are antipodal about the tile")
    return half_sum / norm(half_sum)


def bisector_normals(tiles: np.ndarray, focals: np.ndarray, ap: np.ndarray) -> np.ndarray:
    """Row-wise :func:`bisector_normal` for ``(N, 3)`` tiles and focals."""
    to_focal = focals - tiles
    to_ap = ap[None, :] - tiles
    lf = np.linalg.norm(to_focal, axis=1)
    la = np.linalg.norm(to_ap, axis=1)
    if np.any(lf < DEGENERATE_TOL) or np.any(la < DEGENERATE_TOL):
        raise DegenerateGeometryError("focal or access point coincides with a tile")
    half_sum = 0.5 * (to_focal / lf[:, None] + to_ap / la[:, None])
    hn = np.linalg.norm(half_sum, axis=1)
    if np.any(hn < DEGENERATE_TOL):
        raise DegenerateGeometryError("focal and access point are antipodal about a tile")
    return half_sum / hn[:, None]


def normal_to_angles(n: np.ndarray) -> tuple[float, float]:
    """Polar angle from +z and azimuth from +x of a unit normal."""
    n = vec3(n)
    _require_unit(n, "n")
    theta = float(np.arctan2(np.hypot(n[0], n[1]), n[2]))
    phi = float(np.arctan2(n[1], n[0]))
    return theta, phi


def angles_to_normal(theta: float, phi: float) -> np.ndarray:
    st = np.sin(theta)
    return np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


def mirror_point(p: np.ndarray, plane: Plane) -> np.ndarray:
    p = vec3(p)
    return p - 2.0 * plane.signed_distance(p) * plane.normal


def angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Angle in radians between two non-zero vectors, accurate near zero."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.arctan2(norm(np.cross(a, b)), np.dot(a, b)))
