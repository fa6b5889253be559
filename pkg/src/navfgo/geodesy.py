"""
Earth model and local world frame.

The world frame is a fixed north-east-down frame anchored at the first GNSS
fix. Gravity and the Earth rotation rate are evaluated once at the origin
and treated as constant over the local frame. WGS-84 constants throughout.
"""

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from .errors import ValidationError

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
WGS84_OMEGA = 7.292115e-5
WGS84_GM = 3.986004418e14

# Somigliana normal gravity
GRAVITY_EQUATOR = 9.7803253359
SOMIGLIANA_K = 0.00193185265241

_M = WGS84_OMEGA**2 * WGS84_A**2 * WGS84_B / WGS84_GM


@dataclass(frozen=True)
class GeodeticPosition:
    """Latitude/longitude in radians, height in meters above the ellipsoid."""

    latitude: float
    longitude: float
    height: float = 0.0

    def __post_init__(self) -> None:
        bad = []
        if not np.isfinite(self.latitude) or abs(self.latitude) > np.pi / 2:
            bad.append("latitude")
        if not np.isfinite(self.longitude) or abs(self.longitude) > np.pi:
            bad.append("longitude")
        if not np.isfinite(self.height):
            bad.append("height")
        if bad:
            raise ValidationError(
                f"Invalid geodetic position: {', '.join(bad)} out of range",
                fields=bad,
            )

    @classmethod
    def from_degrees(
        cls, lat_deg: float, lon_deg: float, height: float = 0.0
    ) -> "GeodeticPosition":
        return cls(float(np.radians(lat_deg)), float(np.radians(lon_deg)), float(height))

    def to_degrees(self) -> Tuple[float, float, float]:
        return (
            float(np.degrees(self.latitude)),
            float(np.degrees(self.longitude)),
            self.height,
        )


def local_gravity(lat: float, height: float = 0.0) -> np.ndarray:
    """
    Normal gravity vector in the NED world frame.

    Somigliana's closed form on the ellipsoid with a linear free-air height
    correction.

    Args:
        lat: Geodetic latitude in radians
        height: Height above the ellipsoid in meters

    Returns:
        [0, 0, g] in m/s²
    """
    s2 = np.sin(lat) ** 2
    g0 = GRAVITY_EQUATOR * (1.0 + SOMIGLIANA_K * s2) / np.sqrt(1.0 - WGS84_E2 * s2)
    g = g0 * (1.0 - 2.0 / WGS84_A * (1.0 + WGS84_F + _M - 2.0 * WGS84_F * s2) * height)
    return np.array([0.0, 0.0, g])


def earth_rate_world(lat: float) -> np.ndarray:
    """Earth rotation rate ω_ie expressed in the NED frame at latitude lat."""
    return WGS84_OMEGA * np.array([np.cos(lat), 0.0, -np.sin(lat)])


def ned_rotation(origin: GeodeticPosition) -> np.ndarray:
    """Rotation from ECEF to the NED frame at origin."""
    sl, cl = np.sin(origin.latitude), np.cos(origin.latitude)
    so, co = np.sin(origin.longitude), np.cos(origin.longitude)
    return np.array(
        [
            [-sl * co, -sl * so, cl],
            [-so, co, 0.0],
            [-cl * co, -cl * so, -sl],
        ]
    )


def geodetic_to_ecef(p: GeodeticPosition) -> np.ndarray:
    """ECEF coordinates in extended precision."""
    lat = np.longdouble(p.latitude)
    lon = np.longdouble(p.longitude)
    h = np.longdouble(p.height)
    sl = np.sin(lat)
    n = np.longdouble(WGS84_A) / np.sqrt(1 - np.longdouble(WGS84_E2) * sl * sl)
    return np.array(
        [
            (n + h) * np.cos(lat) * np.cos(lon),
            (n + h) * np.cos(lat) * np.sin(lon),
            (n * (1 - np.longdouble(WGS84_E2)) + h) * sl,
        ],
        dtype=np.longdouble,
    )


def ecef_to_geodetic(xyz: np.ndarray, iterations: int = 8) -> GeodeticPosition:
    """Iterative inverse of geodetic_to_ecef."""
    x, y, z = (np.longdouble(c) for c in xyz)
    a = np.longdouble(WGS84_A)
    e2 = np.longdouble(WGS84_E2)
    p = np.sqrt(x * x + y * y)
    lon = np.arctan2(y, x)
    lat = np.arctan2(z, p * (1 - e2))
    h = np.longdouble(0.0)
    for _ in range(iterations):
        sl = np.sin(lat)
        w = np.sqrt(1 - e2 * sl * sl)
        n = a / w
        h = p * np.cos(lat) + z * sl - a * w
        lat = np.arctan2(z, p * (1 - e2 * n / (n + h)))
    return GeodeticPosition(float(lat), float(lon), float(h))


def geodetic_to_world(origin: GeodeticPosition, p: GeodeticPosition) -> np.ndarray:
    """NED offset of p from origin via the exact ECEF difference."""
    delta = geodetic_to_ecef(p) - geodetic_to_ecef(origin)
    rot = ned_rotation(origin).astype(np.longdouble)
    return np.asarray(rot @ delta, dtype=float)


def world_to_geodetic(origin: GeodeticPosition, p_w: np.ndarray) -> GeodeticPosition:
    """Geodetic position of a world-frame point (inverse of geodetic_to_world)."""
    rot = ned_rotation(origin).astype(np.longdouble)
    xyz = geodetic_to_ecef(origin) + rot.T @ np.asarray(p_w, dtype=np.longdouble)
    return ecef_to_geodetic(xyz)


@dataclass(frozen=True)
class WorldFrame:
    """Gravity-aligned NED frame anchored at origin."""

    origin: GeodeticPosition
    gravity: np.ndarray = field(repr=False, compare=False)
    earth_rate: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def at(cls, origin: GeodeticPosition) -> "WorldFrame":
        return cls(
            origin=origin,
            gravity=local_gravity(origin.latitude, origin.height),
            earth_rate=earth_rate_world(origin.latitude),
        )

    def without_earth_rate(self) -> "WorldFrame":
        """Same frame with Earth rotation compensation switched off."""
        return replace(self, earth_rate=np.zeros(3))

    def to_world(self, p: GeodeticPosition) -> np.ndarray:
        return geodetic_to_world(self.origin, p)

    def to_geodetic(self, p_w: np.ndarray) -> GeodeticPosition:
        return world_to_geodetic(self.origin, p_w)
