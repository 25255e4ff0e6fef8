"""Earth rate, normal gravity and curvature radii for a fixed site.

WGS-84 constants. Navigation axes are (North, Up, East).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OMEGA_WGS84 = 7.2921151467e-5  # rad/s
SEMI_MAJOR = 6378137.0  # m
ECC2 = 6.69437999014e-3
GAMMA_EQUATOR = 9.7803253359  # m/s^2
SOMIGLIANA_K = 1.93185265241e-3
FREE_AIR = 3.086e-6  # 1/s^2
G0 = 9.80665  # standard gravity, used only for micro-g conversions

DEG = np.pi / 180.0
DEG_PER_HOUR = DEG / 3600.0
MICRO_G = 1e-6 * G0

DEFAULT_LATITUDE_DEG = 28.2204
DEFAULT_ALTITUDE_M = 60.0


def gravity_magnitude(lat: float, h: float) -> float:
    """Somigliana normal gravity at latitude `lat` (rad) with free-air term for altitude `h` (m)."""
    s2 = np.sin(lat) ** 2
    gamma = GAMMA_EQUATOR * (1.0 + SOMIGLIANA_K * s2) / np.sqrt(1.0 - ECC2 * s2)
    return float(gamma - FREE_AIR * h)


def curvature_radii(lat: float) -> tuple[float, float]:
    """Transverse (prime vertical) and meridian radii of curvature, in metres."""
    w2 = 1.0 - ECC2 * np.sin(lat) ** 2
    r_e = SEMI_MAJOR / np.sqrt(w2)
    r_n = SEMI_MAJOR * (1.0 - ECC2) / w2**1.5
    return float(r_e), float(r_n)


@dataclass(frozen=True)
class EarthParams:
    """Site parameters. Angles in radians, lengths in metres."""

    lat: float
    h: float = 0.0
    omega: float = OMEGA_WGS84
    g: float | None = None

    def __post_init__(self):
        if not abs(self.lat) < np.pi / 2:
            raise ValueError("latitude must lie strictly between the poles")
        if self.omega <= 0:
            raise ValueError("earth rate must be positive")
        if self.g is None:
            object.__setattr__(self, "g", gravity_magnitude(self.lat, self.h))
        if self.g <= 0:
            raise ValueError("gravity must be positive")

    @classmethod
    def from_degrees(cls, lat_deg: float = DEFAULT_LATITUDE_DEG, h: float = DEFAULT_ALTITUDE_M) -> "EarthParams":
        return cls(lat=lat_deg * DEG, h=h)

    @property
    def radii(self) -> tuple[float, float]:
        return curvature_radii(self.lat)

    @property
    def gravity_n(self) -> np.ndarray:
        return np.array([0.0, -self.g, 0.0])

    @property
    def omega_ie_n(self) -> np.ndarray:
        return earth_rate_n(self)

    @property
    def g_omega_sin_lat(self) -> float:
        """Right-hand side of the static dot-product constraint."""
        return self.g * self.omega * np.sin(self.lat)


def earth_rate(lat: float, omega: float = OMEGA_WGS84) -> np.ndarray:
    """Earth rate in (North, Up, East) axes; valid for any latitude including the poles."""
    return np.array([omega * np.cos(lat), omega * np.sin(lat), 0.0])


def earth_rate_n(p: EarthParams) -> np.ndarray:
    return earth_rate(p.lat, p.omega)


def transport_rate_n(p: EarthParams, v_n) -> np.ndarray:
    """Rate of the navigation frame relative to the Earth for ground velocity `v_n` (N, U, E)."""
    r_e, r_n = curvature_radii(p.lat)
    v_n = np.asarray(v_n, dtype=float)
    vn, ve = v_n[..., 0], v_n[..., 2]
    return np.stack(
        [ve / (r_e + p.h), ve * np.tan(p.lat) / (r_e + p.h), -vn / (r_n + p.h)],
        axis=-1,
    )
