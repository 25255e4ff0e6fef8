import numpy as np
import pytest

from insalign.earth import (
    DEFAULT_ALTITUDE_M,
    DEFAULT_LATITUDE_DEG,
    DEG,
    DEG_PER_HOUR,
    ECC2,
    OMEGA_WGS84,
    SEMI_MAJOR,
    EarthParams,
    curvature_radii,
    earth_rate,
    gravity_magnitude,
    transport_rate_n,
)


def test_defaults():
    e = EarthParams.from_degrees()
    assert e.lat == pytest.approx(28.2204 * DEG)
    assert e.h == 60.0
    assert DEFAULT_LATITUDE_DEG == 28.2204 and DEFAULT_ALTITUDE_M == 60.0


@pytest.mark.parametrize("lat_deg", [0.0, 15.0, 28.2204, 45.0, 60.0, 89.0])
def test_gravity_against_series(lat_deg):
    # closed-form series for normal gravity plus the linear free-air term
    s = np.sin(lat_deg * DEG)
    s2 = np.sin(2 * lat_deg * DEG)
    series = 9.780327 * (1 + 0.0053024 * s**2 - 0.0000058 * s2**2) - 3.086e-6 * 60.0
    assert gravity_magnitude(lat_deg * DEG, 60.0) == pytest.approx(series, abs=2e-5)


def test_gravity_poles_and_equator():
    assert gravity_magnitude(0.0, 0.0) == pytest.approx(9.7803253359, abs=1e-10)
    assert gravity_magnitude(np.pi / 2, 0.0) == pytest.approx(9.8321849378, abs=1e-6)


def test_curvature_radii_limits():
    re, rn = curvature_radii(0.0)
    assert re == pytest.approx(SEMI_MAJOR)
    assert rn == pytest.approx(SEMI_MAJOR * (1 - ECC2))
    re, rn = curvature_radii(np.pi / 2)
    assert re == pytest.approx(rn, rel=1e-12)


def test_meridian_radius_is_arc_length_derivative():
    # meridian arc length of the ellipse, differentiated numerically
    b = SEMI_MAJOR * np.sqrt(1 - ECC2)

    def point(lat):
        # reduced latitude parameterization of the meridian ellipse
        beta = np.arctan(np.sqrt(1 - ECC2) * np.tan(lat))
        return np.array([SEMI_MAJOR * np.cos(beta), b * np.sin(beta)])

    lat, h = 0.7, 1e-6
    ds = np.linalg.norm(point(lat + h) - point(lat - h)) / (2 * h)
    assert curvature_radii(lat)[1] == pytest.approx(ds, rel=1e-7)


def test_earth_rate_components():
    e = EarthParams.from_degrees()
    w = e.omega_ie_n
    np.testing.assert_allclose(w, [OMEGA_WGS84 * np.cos(e.lat), OMEGA_WGS84 * np.sin(e.lat), 0.0])
    assert np.linalg.norm(w) == pytest.approx(OMEGA_WGS84, rel=1e-15)
    np.testing.assert_allclose(earth_rate(np.pi / 2), [0, OMEGA_WGS84, 0], atol=1e-20)


def test_separation_constants():
    e = EarthParams.from_degrees()
    assert 2 * e.omega * np.sin(e.lat) / DEG_PER_HOUR == pytest.approx(14.2248, abs=1e-3)
    assert 2 * e.omega * np.cos(e.lat) / DEG_PER_HOUR == pytest.approx(26.5064, abs=1e-3)
    assert 2 * e.g == pytest.approx(19.5834, abs=5e-4)


def test_transport_rate_zero_at_rest_and_batched():
    e = EarthParams.from_degrees()
    np.testing.assert_array_equal(transport_rate_n(e, np.zeros(3)), np.zeros(3))
    v = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
    r = transport_rate_n(e, v)
    re, rn = e.radii
    np.testing.assert_allclose(r[0], [0, 0, -1.0 / (rn + e.h)])
    np.testing.assert_allclose(r[1], [2.0 / (re + e.h), 2.0 * np.tan(e.lat) / (re + e.h), 0])


@pytest.mark.parametrize("kw", [dict(lat=np.pi / 2), dict(lat=0.1, omega=0.0), dict(lat=0.1, g=-1.0)])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        EarthParams(**kw)
