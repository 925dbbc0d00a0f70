#include <doctest.h>

#include "rtkpipe/geodesy.hpp"
#include "rtkpipe/scenario.hpp"

using namespace rtkpipe;

TEST_CASE("geodetic_to_ecef equator and pole") {
    const EcefPosition eq = geodetic_to_ecef({0.0, 0.0, 0.0});
    CHECK(eq.x == doctest::Approx(6378137.0).epsilon(1e-12));
    CHECK(eq.y == doctest::Approx(0.0));
    CHECK(eq.z == doctest::Approx(0.0));

    const EcefPosition pole = geodetic_to_ecef({90.0, 0.0, 0.0});
    CHECK(std::fabs(pole.x) < 1e-6);
    CHECK(pole.z == doctest::Approx(6356752.314245).epsilon(1e-9));
}

TEST_CASE("ecef_to_geodetic inverse cases") {
    const GeodeticPosition a = ecef_to_geodetic({6378137.0, 0.0, 0.0});
    CHECK(a.lat_deg == doctest::Approx(0.0));
    CHECK(a.lon_deg == doctest::Approx(0.0));
    CHECK(std::fabs(a.height) < 1e-6);

    const GeodeticPosition b = ecef_to_geodetic({0.0, 6378137.0, 0.0});
    CHECK(b.lat_deg == doctest::Approx(0.0));
    CHECK(b.lon_deg == doctest::Approx(90.0));

    CHECK_THROWS_AS(ecef_to_geodetic({0.1, 0.1, 0.1}), Error);
}

TEST_CASE("geodetic round trip over seeded samples") {
    DeterministicRng rng(12345);
    for (int i = 0; i < 1000; ++i) {
        GeodeticPosition p;
        p.lat_deg = (rng.uniform() - 0.5) * 2.0 * 89.9;
        p.lon_deg = (rng.uniform() - 0.5) * 359.9;
        p.height = rng.uniform() * 40000.0 - 1000.0;

        const GeodeticPosition q = ecef_to_geodetic(geodetic_to_ecef(p));
        CHECK(std::fabs(q.lat_deg - p.lat_deg) < 1e-9);
        CHECK(std::fabs(q.lon_deg - p.lon_deg) < 1e-9);
        CHECK(std::fabs(q.height - p.height) < 1e-4);
    }
}

TEST_CASE("ecef_to_enu axes at the equator origin") {
    const GeodeticPosition origin{0.0, 0.0, 0.0};
    const EcefPosition o = geodetic_to_ecef(origin);

    const EnuVector zero = ecef_to_enu(o, origin);
    CHECK(norm(zero) < 1e-9);

    const EnuVector north = ecef_to_enu({o.x, o.y, o.z + 1.0}, origin);
    CHECK(north.east == doctest::Approx(0.0));
    CHECK(north.north == doctest::Approx(1.0));
    CHECK(north.up == doctest::Approx(0.0));

    const EnuVector up = ecef_to_enu({o.x + 1.0, o.y, o.z}, origin);
    CHECK(up.east == doctest::Approx(0.0));
    CHECK(up.north == doctest::Approx(0.0));
    CHECK(up.up == doctest::Approx(1.0));
}

TEST_CASE("ecef_to_enu is an isometry and inverts") {
    DeterministicRng rng(777);
    for (int i = 0; i < 200; ++i) {
        GeodeticPosition origin{(rng.uniform() - 0.5) * 170.0, (rng.uniform() - 0.5) * 359.0,
                                rng.uniform() * 4000.0};
        const EcefPosition o = geodetic_to_ecef(origin);
        const EcefPosition p{o.x + (rng.uniform() - 0.5) * 2e5, o.y + (rng.uniform() - 0.5) * 2e5,
                             o.z + (rng.uniform() - 0.5) * 2e5};

        const EnuVector v = ecef_to_enu(p, origin);
        const double direct = norm(p - o);
        CHECK(std::fabs(norm(v) - direct) < 1e-9 * direct + 1e-12);

        const EcefPosition back = enu_to_ecef(v, origin);
        CHECK(norm(back - p) < 1e-6);
    }
}

TEST_CASE("elevation_azimuth zenith and horizon") {
    const GeodeticPosition origin{40.0, 116.0, 50.0};
    const EcefPosition rcv = geodetic_to_ecef(origin);

    const EcefPosition zenith = enu_to_ecef({0.0, 0.0, 2e7}, origin);
    const ElevationAzimuth za = elevation_azimuth(rcv, zenith);
    CHECK(za.elevation_deg == doctest::Approx(90.0).epsilon(1e-9));
    CHECK(za.azimuth_deg == doctest::Approx(0.0));

    const EcefPosition horizon = enu_to_ecef({2e7, 0.0, 0.0}, origin);
    const ElevationAzimuth ha = elevation_azimuth(rcv, horizon);
    CHECK(std::fabs(ha.elevation_deg) < 1e-9);
    CHECK(ha.azimuth_deg == doctest::Approx(90.0).epsilon(1e-9));

    CHECK_THROWS_AS(elevation_azimuth(rcv, rcv), Error);
}

TEST_CASE("elevation matches dot-product oracle and scale invariance") {
    DeterministicRng rng(424242);
    const GeodeticPosition origin{39.96, 116.35, 60.0};
    const EcefPosition rcv = geodetic_to_ecef(origin);

    /* independent up vector straight from the ellipsoid normal */
    const double lat = deg2rad(origin.lat_deg), lon = deg2rad(origin.lon_deg);
    const double up[3] = {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon),
                          std::sin(lat)};

    for (int i = 0; i < 300; ++i) {
        const double el = rng.uniform() * 89.0;
        const double az = rng.uniform() * 360.0;
        const double r = 1e6 + rng.uniform() * 3e7;
        const EnuVector dir{std::sin(deg2rad(az)) * std::cos(deg2rad(el)) * r,
                            std::cos(deg2rad(az)) * std::cos(deg2rad(el)) * r,
                            std::sin(deg2rad(el)) * r};
        const EcefPosition sat = enu_to_ecef(dir, origin);

        const ElevationAzimuth ea = elevation_azimuth(rcv, sat);
        const EcefPosition los = sat - rcv;
        const double oracle =
            rad2deg(std::asin((los.x * up[0] + los.y * up[1] + los.z * up[2]) / norm(los)));
        CHECK(std::fabs(ea.elevation_deg - oracle) < 1e-9);

        /* scaling the line of sight must not move the angles */
        const EcefPosition far{rcv.x + 3.7 * los.x, rcv.y + 3.7 * los.y, rcv.z + 3.7 * los.z};
        const ElevationAzimuth eb = elevation_azimuth(rcv, far);
        CHECK(std::fabs(ea.elevation_deg - eb.elevation_deg) < 1e-9);
        CHECK(std::fabs(ea.azimuth_deg - eb.azimuth_deg) < 1e-9);
    }
}
