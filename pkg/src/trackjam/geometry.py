"""3D vector algebra, spherical conversions, and conic sensing-volume tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateGeometryError(ValueError):
    """Raised when two points that must differ coincide."""


def wrap_angle(theta):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    if np.ndim(theta) == 0:
        return float(w)
    return w


def wrap_inclination(phi):
    """Fold angle(s) into [0, pi] by reflection at the poles."""
    p = np.mod(np.asarray(phi, dtype=float), 2.0 * np.pi)
    p = np.where(p > np.pi, 2.0 * np.pi - p, p)
    if np.ndim(phi) == 0:
        return float(p)
    return p


def as_vec3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector components must be finite")
    return v


def measurement_fn(target_pos, agent_pos) -> tuple[float, float, float]:
    """Range/azimuth/inclination of target_pos as seen from agent_pos.

    rho is Euclidean distance, theta = atan2(dy, dx) in (-pi, pi], and phi is
    measured from the +z axis as atan2(hypot(dx, dy), dz) in [0, pi].
    """
    d = as_vec3(target_pos) - as_vec3(agent_pos)
    rho = float(np.linalg.norm(d))
    if rho == 0.0:
        raise DegenerateGeometryError("degenerate geometry: coincident points")
    theta = float(np.arctan2(d[1], d[0]))
    phi = float(np.arctan2(np.hypot(d[0], d[1]), d[2]))
    return rho, wrap_angle(theta), phi


def measurement_fn_many(positions: np.ndarray, agent_pos) -> np.ndarray:
    """Vectorized measurement_fn over an (n, 3) position array -> (n, 3)."""
    d = np.asarray(positions, dtype=float) - as_vec3(agent_pos)
    rho = np.linalg.norm(d, axis=1)
    theta = wrap_angle(np.arctan2(d[:, 1], d[:, 0]))
    phi = np.arctan2(np.hypot(d[:, 0], d[:, 1]), d[:, 2])
    return np.column_stack([rho, theta, phi])


def spherical_to_cartesian(rho: float, theta: float, phi: float) -> np.ndarray:
    """Inverse of measurement_fn: displacement vector for (rho, theta, phi)."""
    s = np.sin(phi)
    return np.array([rho * s * np.cos(theta), rho * s * np.sin(theta), rho * np.cos(phi)])


def aim_axis(agent_pos, aim_point) -> np.ndarray:
    """Unit vector from agent_pos toward aim_point."""
    d = as_vec3(aim_point) - as_vec3(agent_pos)
    n = float(np.linalg.norm(d))
    if n == 0.0:
        raise DegenerateGeometryError("degenerate geometry: coincident points")
    return d / n


@dataclass
class SensingCone:
    """Right circular cone: apex at the sensor, axis a unit vector, axial
    extent `height`, full opening angle `opening_angle` (radians)."""

    apex: np.ndarray
    axis: np.ndarray
    height: float
    opening_angle: float

    def __post_init__(self):
        self.apex = as_vec3(self.apex)
        self.axis = as_vec3(self.axis)
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise ValueError("cone axis must be a unit vector")
        if not self.height > 0.0:
            raise ValueError("cone height must be positive")
        if not 0.0 < self.opening_angle < np.pi:
            raise ValueError("opening angle must lie in (0, pi)")


def cone_contains(cone: SensingCone, point) -> bool:
    """True iff point lies inside the cone (apex included, base at axial
    distance `height`)."""
    d = as_vec3(point) - cone.apex
    r = float(np.linalg.norm(d))
    if r == 0.0:
        return True
    a = float(d @ cone.axis)
    if a < 0.0 or a > cone.height:
        return False
    return a >= r * np.cos(cone.opening_angle / 2.0)


def cone_contains_many(cone: SensingCone, points: np.ndarray) -> np.ndarray:
    """Vectorized cone_contains over an (n, 3) array -> boolean (n,)."""
    d = np.asarray(points, dtype=float) - cone.apex
    r = np.linalg.norm(d, axis=1)
    a = d @ cone.axis
    inside = (a >= 0.0) & (a <= cone.height) & (a >= r * np.cos(cone.opening_angle / 2.0))
    return inside | (r == 0.0)
