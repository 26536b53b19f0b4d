import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from shapely import contains_xy

from cdrsite.geo import (
    BoundaryPolygon,
    DmsCoordinate,
    GeometryError,
    GeoPoint,
    contains,
    contains_many,
    decimal_to_dms,
    dms_to_decimal,
    format_dms,
    haversine_array,
    haversine_m,
    load_boundary,
    parse_dms,
    voronoi,
)


class TestDms:
    def test_whole_degrees(self):
        assert dms_to_decimal(DmsCoordinate(41, 0, 0, "N")) == 41.0

    def test_half_degree(self):
        assert dms_to_decimal(DmsCoordinate(28, 30, 0, "E")) == 28.5

    def test_southern_hemisphere_is_negative(self):
        got = dms_to_decimal(DmsCoordinate(10, 15, 30, "S"))
        assert got == pytest.approx(-(10 + 15 / 60 + 30 / 3600), abs=1e-12)

    @pytest.mark.parametrize("minutes,seconds", [(60, 0), (0, 60), (-1, 0)])
    def test_out_of_range_parts_rejected(self, minutes, seconds):
        with pytest.raises(GeometryError):
            DmsCoordinate(10, minutes, seconds, "N")

    def test_parse_and_format(self):
        c = parse_dms("41°00'36.5\"N")
        assert (c.degrees, c.minutes, c.hemisphere) == (41, 0, "N")
        assert c.seconds == pytest.approx(36.5)
        assert parse_dms(format_dms(c)) == c

    def test_garbage_rejected(self):
        with pytest.raises(GeometryError):
            parse_dms("forty-one north")

    @given(st.floats(min_value=-90, max_value=90, allow_nan=False))
    def test_latitude_round_trip(self, value):
        back = dms_to_decimal(decimal_to_dms(value, "lat"))
        assert back == pytest.approx(value, abs=1e-9)

    @given(st.floats(min_value=-180, max_value=180, allow_nan=False))
    def test_longitude_round_trip(self, value):
        back = dms_to_decimal(decimal_to_dms(value, "lon"))
        assert back == pytest.approx(value, abs=1e-9)


class TestHaversine:
    def test_identity(self):
        p = GeoPoint(lat=41.0, lon=29.0)
        assert haversine_m(p, p) == 0.0

    def test_one_degree_on_equator(self):
        expected = 2 * math.pi * 6_371_000 / 360
        got = haversine_m(GeoPoint(0, 0), GeoPoint(0, 1))
        assert got == pytest.approx(expected, rel=1e-12)
        assert round(got) == 111_195

    def test_array_broadcast_matches_scalar(self, rng):
        lat = rng.uniform(-60, 60, 5)
        lon = rng.uniform(-170, 170, 5)
        mat = haversine_array(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
        for i in range(5):
            for j in range(5):
                assert mat[i, j] == pytest.approx(haversine_m(GeoPoint(lat[i], lon[i]), GeoPoint(lat[j], lon[j])))
        assert np.allclose(mat, mat.T)

    def test_invalid_point(self):
        with pytest.raises(GeometryError):
            GeoPoint(lat=91.0, lon=0.0)


class TestContains:
    def test_spec_cases(self, unit_square):
        assert contains(unit_square, GeoPoint(lat=0.5, lon=0.5))
        assert not contains(unit_square, GeoPoint(lat=2, lon=2))
        assert contains(unit_square, GeoPoint(lat=0.0, lon=0.5))

    def test_vertices_count_as_inside(self, unit_square):
        for lon, lat in [(0, 0), (1, 0), (1, 1), (0, 1)]:
            assert contains(unit_square, GeoPoint(lat=lat, lon=lon))

    def test_hole_is_outside(self):
        poly = BoundaryPolygon.from_lonlat("donut", [
            [(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)],
            [(1, 1), (3, 1), (3, 3), (1, 3), (1, 1)],
        ])
        assert not contains(poly, GeoPoint(lat=2, lon=2))
        assert contains(poly, GeoPoint(lat=0.5, lon=2))
        assert poly.area == pytest.approx(12.0)

    def test_degenerate_ring_rejected(self):
        with pytest.raises(GeometryError):
            BoundaryPolygon.from_lonlat("bad", [[(0, 0), (1, 0), (0, 0)]])

    def test_unclosed_ring_rejected(self):
        with pytest.raises(GeometryError):
            BoundaryPolygon.from_lonlat("bad", [[(0, 0), (1, 0), (1, 1), (0, 1)]])

    def test_against_winding_number(self, rng):
        """Ray casting agrees with an independent winding-number count."""
        for _ in range(10):
            k = int(rng.integers(5, 15))
            ang = np.sort(rng.uniform(0, 2 * np.pi, k))
            rad = rng.uniform(0.3, 1.0, k)
            ring = np.c_[rad * np.cos(ang), rad * np.sin(ang)]
            poly = BoundaryPolygon.from_lonlat("star", [[*map(tuple, ring), tuple(ring[0])]])
            probes = rng.uniform(-1.1, 1.1, size=(1000, 2))
            got = contains_many(poly, probes[:, 0], probes[:, 1])
            want = np.array([_winding(ring, p) != 0 for p in probes])
            assert np.array_equal(got, want)


def _winding(ring, p):
    wn = 0
    n = len(ring)
    for i in range(n):
        (x0, y0), (x1, y1) = ring[i], ring[(i + 1) % n]
        cross = (x1 - x0) * (p[1] - y0) - (p[0] - x0) * (y1 - y0)
        if y0 <= p[1] < y1 and cross > 0:
            wn += 1
        elif y1 <= p[1] < y0 and cross < 0:
            wn -= 1
    return wn


def test_load_boundary_feature_collection(tmp_path):
    doc = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"name": "a"},
         "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 0]]]}},
        {"type": "Feature", "properties": {"name": "b"},
         "geometry": {"type": "Polygon", "coordinates": [[[5, 5], [6, 5], [6, 6], [5, 5]]]}},
    ]}
    path = tmp_path / "parts.geojson"
    path.write_text(json.dumps(doc))
    b = load_boundary(path, "b")
    assert contains(b, GeoPoint(lat=5.2, lon=5.8))
    with pytest.raises(GeometryError):
        load_boundary(path, "missing")


class TestVoronoi:
    def test_single_site_is_clip(self, unit_square):
        d = voronoi([GeoPoint(lat=0.3, lon=0.3)], unit_square)
        assert d.cells[0].symmetric_difference(unit_square.to_shapely()).area < 1e-15

    def test_two_sites_split_by_bisector(self, unit_square):
        d = voronoi([GeoPoint(lat=0.5, lon=0.25), GeoPoint(lat=0.5, lon=0.75)], unit_square)
        assert d.cells[0].bounds == pytest.approx((0, 0, 0.5, 1))
        assert d.cells[1].bounds == pytest.approx((0.5, 0, 1, 1))
        assert d.areas() == pytest.approx([0.5, 0.5])

    def test_duplicate_sites_rejected(self, unit_square):
        p = GeoPoint(lat=0.5, lon=0.5)
        with pytest.raises(GeometryError):
            voronoi([p, p], unit_square)

    def test_site_outside_rejected(self, unit_square):
        with pytest.raises(GeometryError):
            voronoi([GeoPoint(lat=0.5, lon=0.5), GeoPoint(lat=3, lon=3)], unit_square)

    def test_nearest_site_oracle(self, unit_square, rng):
        sites = rng.uniform(0.02, 0.98, size=(25, 2))
        d = voronoi([GeoPoint(lat=y, lon=x) for x, y in sites], unit_square)
        probes = rng.uniform(0, 1, size=(500, 2))
        nearest = np.argmin(((probes[:, None, :] - sites[None]) ** 2).sum(axis=2), axis=1)
        for k, cell in enumerate(d.cells):
            inside = contains_xy(cell, probes[:, 0], probes[:, 1])
            assert np.all(nearest[inside] == k)
        assert d.areas().sum() == pytest.approx(1.0, rel=1e-9)

    def test_collinear_sites(self, unit_square):
        d = voronoi([GeoPoint(lat=0.5, lon=x) for x in (0.1, 0.5, 0.9)], unit_square)
        assert d.areas() == pytest.approx([0.3, 0.4, 0.3])
