#include <doctest.h>

#include <array>

#include "rtkpipe/satsel.hpp"
#include "rtkpipe/scenario.hpp"

using namespace rtkpipe;

namespace {

SatGeometry geom(int prn, double el, double az = 0.0, double cn0 = 40.0) {
    SatGeometry g;
    g.sat = {Constellation::GPS, prn};
    g.elevation_deg = el;
    g.azimuth_deg = az;
    g.cn0 = cn0;
    return g;
}

/* gaussian-elimination inverse, independent of Eigen */
std::array<std::array<double, 4>, 4> invert4(std::array<std::array<double, 4>, 4> a) {
    std::array<std::array<double, 4>, 4> inv{};
    for (int i = 0; i < 4; ++i) inv[i][i] = 1.0;
    for (int col = 0; col < 4; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        std::swap(inv[col], inv[pivot]);
        const double d = a[col][col];
        for (int c = 0; c < 4; ++c) {
            a[col][c] /= d;
            inv[col][c] /= d;
        }
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            for (int c = 0; c < 4; ++c) {
                a[r][c] -= f * a[col][c];
                inv[r][c] -= f * inv[col][c];
            }
        }
    }
    return inv;
}

} // namespace

TEST_CASE("filter_by_elevation basic rules") {
    const std::vector<SatGeometry> geoms = {geom(1, 8.0), geom(2, 25.0), geom(3, 45.0),
                                            geom(4, 60.0)};
    SelectionConfig cfg;

    const Selection sel = filter_by_elevation(geoms, cfg);
    REQUIRE(sel.satellites.size() == 2);
    CHECK(sel.satellites[0].elevation_deg == 45.0);
    CHECK(sel.satellites[1].elevation_deg == 60.0);
    CHECK(sel.degraded); /* two survivors */

    cfg.elevation_mask_deg = 0.0;
    CHECK(filter_by_elevation(geoms, cfg).satellites.size() == 4);

    cfg.elevation_mask_deg = 5.0;
    cfg.min_cn0 = 45.0;
    const std::vector<SatGeometry> strong = {geom(1, 50.0, 0, 50.0), geom(2, 50.0, 0, 30.0)};
    const Selection s2 = filter_by_elevation(strong, cfg);
    REQUIRE(s2.satellites.size() == 1);
    CHECK(s2.satellites[0].cn0 == 50.0);
}

TEST_CASE("filter_by_elevation is idempotent and monotone in the mask") {
    DeterministicRng rng(42);
    for (int round = 0; round < 100; ++round) {
        std::vector<SatGeometry> geoms;
        const int n = 4 + static_cast<int>(rng.uniform() * 12);
        for (int i = 0; i < n; ++i)
            geoms.push_back(geom(1 + i, rng.uniform() * 90.0, rng.uniform() * 360.0,
                                 20.0 + rng.uniform() * 30.0));
        SelectionConfig lo, hi;
        lo.elevation_mask_deg = rng.uniform() * 45.0;
        hi.elevation_mask_deg = lo.elevation_mask_deg + rng.uniform() * 40.0;

        const auto once = filter_by_elevation(geoms, lo);
        const auto twice = filter_by_elevation(once.satellites, lo);
        CHECK(once.satellites.size() == twice.satellites.size());

        const auto high = filter_by_elevation(geoms, hi);
        CHECK(high.satellites.size() <= once.satellites.size());
        for (const auto& g : high.satellites) {
            bool in_low = false;
            for (const auto& l : once.satellites)
                if (l.sat == g.sat) in_low = true;
            CHECK(in_low);
        }
    }
}

TEST_CASE("cap_best_subset rules") {
    std::vector<SatGeometry> twelve;
    for (int i = 1; i <= 12; ++i) twelve.push_back(geom(i, 20.0 + i * 5.0));
    const auto capped = cap_best_subset(twelve, 8);
    REQUIRE(capped.size() == 8);
    for (const auto& g : capped) CHECK(g.elevation_deg >= 45.0); /* the 8 highest */

    std::vector<SatGeometry> six;
    for (int i = 1; i <= 6; ++i) six.push_back(geom(i, 30.0 + i));
    CHECK(cap_best_subset(six, 8).size() == 6);

    /* tie on elevation at the cut: higher C/N0 wins */
    std::vector<SatGeometry> tie = {geom(1, 80.0), geom(2, 50.0, 0, 40.0),
                                    geom(3, 50.0, 0, 35.0)};
    const auto kept = cap_best_subset(tie, 2);
    REQUIRE(kept.size() == 2);
    CHECK(kept[1].cn0 == 40.0);
}

TEST_CASE("cap_best_subset output is a subset with deterministic order") {
    DeterministicRng rng(4242);
    for (int round = 0; round < 50; ++round) {
        std::vector<SatGeometry> geoms;
        const int n = 9 + static_cast<int>(rng.uniform() * 6);
        for (int i = 0; i < n; ++i)
            geoms.push_back(geom(1 + i, std::floor(rng.uniform() * 18.0) * 5.0,
                                 rng.uniform() * 360.0, std::floor(rng.uniform() * 12.0) * 5.0));
        const auto a = cap_best_subset(geoms, 8);
        const auto b = cap_best_subset(geoms, 8);
        REQUIRE(a.size() == 8);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].sat == b[i].sat);
        for (const auto& g : a) {
            bool found = false;
            for (const auto& src : geoms)
                if (src.sat == g.sat) found = true;
            CHECK(found);
        }
    }
}

TEST_CASE("gdop of the textbook zenith plus three-horizon geometry") {
    const GeodeticPosition origin{40.0, 116.0, 0.0};
    const EcefPosition rcv = geodetic_to_ecef(origin);
    const double r = 2.2e7;

    std::vector<EcefPosition> sats;
    sats.push_back(enu_to_ecef({0.0, 0.0, r}, origin)); /* zenith */
    for (const double az : {0.0, 120.0, 240.0})
        sats.push_back(
            enu_to_ecef({r * std::sin(deg2rad(az)), r * std::cos(deg2rad(az)), 0.0}, origin));

    const double got = gdop(rcv, sats);
    CHECK(got == doctest::Approx(std::sqrt(3.0)).epsilon(1e-9));

    /* independent oracle: H'H for this geometry, inverted by hand */
    std::array<std::array<double, 4>, 4> hth{};
    const double rows[4][4] = {{0, 0, -1, 1},
                               {0, -1, 0, 1},
                               {-std::sin(deg2rad(120.0)), -std::cos(deg2rad(120.0)), 0, 1},
                               {-std::sin(deg2rad(240.0)), -std::cos(deg2rad(240.0)), 0, 1}};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 4; ++k) hth[i][j] += rows[k][i] * rows[k][j];
    const auto inv = invert4(hth);
    const double oracle = std::sqrt(inv[0][0] + inv[1][1] + inv[2][2] + inv[3][3]);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("gdop degenerate geometry is infinite") {
    const GeodeticPosition origin{40.0, 116.0, 0.0};
    const EcefPosition rcv = geodetic_to_ecef(origin);
    std::vector<EcefPosition> sats(4, enu_to_ecef({0.0, 0.0, 2.2e7}, origin));
    CHECK(std::isinf(gdop(rcv, sats)));
    CHECK(std::isinf(gdop(rcv, std::vector<EcefPosition>{sats[0], sats[1], sats[2]})));
}

TEST_CASE("gdop is invariant under rotation about the up axis") {
    DeterministicRng rng(10101);
    const GeodeticPosition origin{39.96, 116.35, 80.0};
    const EcefPosition rcv = geodetic_to_ecef(origin);

    for (int round = 0; round < 100; ++round) {
        std::vector<double> els, azs;
        const int n = 5 + static_cast<int>(rng.uniform() * 5);
        for (int i = 0; i < n; ++i) {
            els.push_back(5.0 + rng.uniform() * 80.0);
            azs.push_back(rng.uniform() * 360.0);
        }
        auto build = [&](double spin) {
            std::vector<EcefPosition> sats;
            for (int i = 0; i < n; ++i) {
                const double el = deg2rad(els[static_cast<std::size_t>(i)]);
                const double az = deg2rad(azs[static_cast<std::size_t>(i)] + spin);
                const double r = 2.4e7;
                sats.push_back(enu_to_ecef({r * std::sin(az) * std::cos(el),
                                            r * std::cos(az) * std::cos(el), r * std::sin(el)},
                                           origin));
            }
            return sats;
        };
        const double spin = rng.uniform() * 360.0;
        const double a = gdop(rcv, build(0.0));
        const double b = gdop(rcv, build(spin));
        CHECK(std::fabs(a - b) < 1e-9 * std::max(1.0, a));
    }
}

TEST_CASE("removing a satellite never decreases gdop") {
    DeterministicRng rng(2025);
    const GeodeticPosition origin{39.96, 116.35, 80.0};
    const EcefPosition rcv = geodetic_to_ecef(origin);

    for (int round = 0; round < 100; ++round) {
        std::vector<EcefPosition> sats;
        const int n = 6 + static_cast<int>(rng.uniform() * 4);
        for (int i = 0; i < n; ++i) {
            const double el = deg2rad(5.0 + rng.uniform() * 80.0);
            const double az = deg2rad(rng.uniform() * 360.0);
            const double r = 2.4e7;
            sats.push_back(enu_to_ecef({r * std::sin(az) * std::cos(el),
                                        r * std::cos(az) * std::cos(el), r * std::sin(el)},
                                       origin));
        }
        const double full = gdop(rcv, sats);
        for (std::size_t drop = 0; drop < sats.size(); ++drop) {
            std::vector<EcefPosition> fewer;
            for (std::size_t i = 0; i < sats.size(); ++i)
                if (i != drop) fewer.push_back(sats[i]);
            const double reduced = gdop(rcv, fewer);
            CHECK(reduced >= full - 1e-9);
        }
    }
}

TEST_CASE("pseudorange residuals: zero for a clean epoch, mean-removed bias") {
    /* error-free scenario: residuals vanish by construction */
    Scenario sc = default_scenario(31);
    sc.duration = 10.0;
    sc.errors = ErrorModel{}; /* everything off */
    const SimulationOutput sim = generate(sc);

    EphemerisSet ephs;
    for (const auto& e : sc.constellation) ephs[e.sat] = e;

    const Epoch epoch = build_epoch(sim.base.front().raws, sim.base.front().time.week);
    const EcefPosition truth = true_state(sc, sim.base.front().time, Receiver::BASE);

    const auto residuals = pseudorange_residuals(epoch, ephs, truth);
    REQUIRE(residuals.size() == epoch.observations.size());
    for (const auto& r : residuals) CHECK(std::fabs(r.residual) < 1e-6);

    /* inject +25 m on one satellite: it keeps 25*(1-1/N), the rest get -25/N */
    Epoch biased = epoch;
    biased.observations[2].pseudorange += 25.0;
    const auto shifted = pseudorange_residuals(biased, ephs, truth);
    const double n = static_cast<double>(shifted.size());
    for (std::size_t i = 0; i < shifted.size(); ++i) {
        const double expect = (i == 2) ? 25.0 * (1.0 - 1.0 / n) : -25.0 / n;
        CHECK(std::fabs(shifted[i].residual - expect) < 1e-3);
    }

    Epoch none;
    none.time = epoch.time;
    CHECK_THROWS_AS(pseudorange_residuals(none, ephs, truth), Error);
}

TEST_CASE("default scenario shows large low-elevation residuals") {
    const Scenario sc = default_scenario(7);
    Scenario shortened = sc;
    shortened.duration = 60.0;
    const SimulationOutput sim = generate(shortened);

    EphemerisSet ephs;
    for (const auto& e : sc.constellation) ephs[e.sat] = e;

    double worst_low = 0.0, worst_high = 0.0;
    for (const auto& se : sim.rover) {
        const Epoch epoch = build_epoch(se.raws, se.time.week);
        const EcefPosition truth = true_state(shortened, se.time, Receiver::ROVER);
        for (const auto& r : pseudorange_residuals(epoch, ephs, truth)) {
            if (r.elevation_deg < 30.0)
                worst_low = std::max(worst_low, std::fabs(r.residual));
            else
                worst_high = std::max(worst_high, std::fabs(r.residual));
        }
    }
    CHECK(worst_low > 8.0);        /* the paper's below-30-degrees pathology */
    CHECK(worst_high < worst_low); /* masked satellites are the quiet ones */
}
