#include <doctest.h>

#include <set>

#include "rtkpipe/obs.hpp"
#include "rtkpipe/scenario.hpp"

using namespace rtkpipe;

namespace {

RawMeasurement plain_raw(const SatId& sat, std::int64_t tow_ns, std::int64_t sv_ns, double cn0) {
    RawMeasurement raw;
    raw.sat = sat;
    raw.band = default_band(sat.constellation);
    raw.time_nanos = tow_ns;
    raw.full_bias_nanos = 0;
    raw.received_sv_time_nanos = sv_ns;
    raw.state_flags = state_flag::CODE_LOCK | state_flag::TOW_DECODED;
    raw.cn0 = cn0;
    return raw;
}

} // namespace

TEST_CASE("wavelength of the declared constants") {
    CHECK(wavelength(SignalBand::L1) == doctest::Approx(0.19029367).epsilon(1e-7));
    CHECK(wavelength(SignalBand::B1) == doctest::Approx(0.19203949).epsilon(1e-7));
    CHECK(wavelength(SignalBand::L1) * frequency(SignalBand::L1) == CLIGHT);
    CHECK(wavelength(SignalBand::B1) * frequency(SignalBand::B1) == CLIGHT);
}

TEST_CASE("satellite naming") {
    CHECK(to_string(SatId{Constellation::GPS, 5}) == "G05");
    CHECK(to_string(SatId{Constellation::BEIDOU, 23}) == "C23");
    CHECK(sat_from_string("R07") == SatId{Constellation::GLONASS, 7});
    CHECK_THROWS_AS(sat_from_string("G99"), Error);
    CHECK_THROWS_AS(sat_from_string("X01"), Error);
}

TEST_CASE("derive_pseudorange from a 70 ms travel time") {
    const auto raw = plain_raw({Constellation::GPS, 5}, 100000000000LL,
                               100000000000LL - 70000000LL, 40.0);
    const auto obs = derive_pseudorange(raw);
    REQUIRE(obs.has_value());
    CHECK(obs->pseudorange == doctest::Approx(20985472.06).epsilon(1e-9));
    CHECK_FALSE(obs->carrier_phase.has_value());
}

TEST_CASE("derive_pseudorange week rollover") {
    /* transmitted just before the week epoch, received just after */
    const auto raw = plain_raw({Constellation::GPS, 7}, 5000000LL, 604800000000000LL - 15000000LL,
                               35.0);
    const auto obs = derive_pseudorange(raw);
    REQUIRE(obs.has_value());
    CHECK(obs->pseudorange == doctest::Approx(CLIGHT * 0.020).epsilon(1e-12));
}

TEST_CASE("derive_pseudorange rejections") {
    std::string reason;
    auto raw = plain_raw({Constellation::GPS, 5}, 1000000000LL, 1000000000LL - 70000000LL, 40.0);

    raw.state_flags = state_flag::TOW_DECODED;
    CHECK_FALSE(derive_pseudorange(raw, &reason).has_value());
    CHECK(reason == "no code lock");

    raw.state_flags = state_flag::CODE_LOCK;
    CHECK_FALSE(derive_pseudorange(raw, &reason).has_value());
    CHECK(reason == "time of week not decoded");

    auto near = plain_raw({Constellation::GPS, 5}, 1000000000LL, 1000000000LL - 1000LL, 40.0);
    CHECK_FALSE(derive_pseudorange(near, &reason).has_value());
    CHECK(reason == "implausible range");
}

TEST_CASE("derive_pseudorange carrier phase and loss of lock") {
    auto raw = plain_raw({Constellation::GPS, 9}, 7000000000LL, 7000000000LL - 71000000LL, 42.0);
    raw.state_flags |= state_flag::ADR_VALID | state_flag::ADR_RESET;
    raw.accumulated_delta_range = 21285000.0;
    raw.pseudorange_rate = -350.0;

    const auto obs = derive_pseudorange(raw);
    REQUIRE(obs.has_value());
    REQUIRE(obs->carrier_phase.has_value());
    CHECK(*obs->carrier_phase ==
          doctest::Approx(21285000.0 / wavelength(SignalBand::L1)).epsilon(1e-12));
    REQUIRE(obs->doppler.has_value());
    CHECK(*obs->doppler == doctest::Approx(350.0 / wavelength(SignalBand::L1)).epsilon(1e-12));
    CHECK(obs->loss_of_lock);
}

TEST_CASE("build_epoch counts, duplicates, constellations") {
    std::vector<RawMeasurement> raws;
    const std::int64_t tow_ns = 250000000000000LL;
    for (int prn = 1; prn <= 8; ++prn)
        raws.push_back(plain_raw({Constellation::GPS, prn}, tow_ns,
                                 tow_ns - 70000000LL - prn * 1000LL, 40.0));

    Epoch epoch = build_epoch(raws, 2200);
    CHECK(epoch.observations.size() == 8);
    CHECK(epoch.time.week == 2200);
    CHECK(epoch.time.tow == doctest::Approx(250000.0));

    /* duplicate (sat, band): the higher C/N0 one stays */
    auto dup = plain_raw({Constellation::GPS, 3}, tow_ns, tow_ns - 70000000LL, 30.0);
    auto dup2 = plain_raw({Constellation::GPS, 3}, tow_ns, tow_ns - 71000000LL, 40.0);
    Epoch e2 = build_epoch({dup, dup2}, 2200);
    REQUIRE(e2.observations.size() == 1);
    CHECK(e2.observations[0].cn0 == 40.0);
    CHECK(e2.observations[0].pseudorange == doctest::Approx(CLIGHT * 0.071));

    /* mixed constellations survive as a set */
    std::vector<RawMeasurement> mixed;
    const std::vector<SatId> sats = {{Constellation::GPS, 1},
                                     {Constellation::GLONASS, 2},
                                     {Constellation::GALILEO, 3},
                                     {Constellation::BEIDOU, 4}};
    for (const auto& s : sats) {
        std::int64_t sv = (tow_ns % (s.constellation == Constellation::GLONASS ? DAY_NANOS
                                                                               : WEEK_NANOS));
        if (s.constellation == Constellation::BEIDOU) sv -= 14000000000LL;
        mixed.push_back(plain_raw(s, tow_ns, sv - 70000000LL, 40.0));
    }
    Epoch e3 = build_epoch(mixed, 2200);
    std::set<SatId> got;
    for (const auto& o : e3.observations) got.insert(o.sat);
    CHECK(got == std::set<SatId>(sats.begin(), sats.end()));

    CHECK_THROWS_AS(build_epoch({}, 2200), Error);
    auto unusable = plain_raw({Constellation::GPS, 1}, tow_ns, tow_ns, 40.0);
    CHECK_THROWS_AS(build_epoch({unusable}, 2200), Error);
}

TEST_CASE("build_epoch never keeps two observations of one (sat, band)") {
    DeterministicRng rng(99);
    const std::int64_t tow_ns = 250000000000000LL;
    for (int round = 0; round < 50; ++round) {
        std::vector<RawMeasurement> raws;
        const int n = 2 + static_cast<int>(rng.uniform() * 20);
        for (int i = 0; i < n; ++i) {
            const int prn = 1 + static_cast<int>(rng.uniform() * 8);
            raws.push_back(plain_raw({Constellation::GPS, prn}, tow_ns,
                                     tow_ns - 70000000LL - i, 30.0 + rng.uniform() * 20.0));
        }
        const Epoch e = build_epoch(raws, 2200);
        std::set<std::pair<SatId, SignalBand>> seen;
        for (const auto& o : e.observations) {
            CHECK(o.pseudorange >= PSEUDORANGE_MIN);
            CHECK(o.pseudorange <= PSEUDORANGE_MAX);
            CHECK(seen.insert({o.sat, o.band}).second);
        }
    }
}

TEST_CASE("observation JSONL round trip") {
    DeterministicRng rng(5150);
    for (int round = 0; round < 20; ++round) {
        Epoch e;
        e.time = GpsTime(2308, 259200.0 + round);
        const int n = 1 + static_cast<int>(rng.uniform() * 10);
        std::set<int> prns;
        while (static_cast<int>(prns.size()) < n)
            prns.insert(1 + static_cast<int>(rng.uniform() * 60));
        for (const int prn : prns) {
            Observation o;
            o.sat = {Constellation::BEIDOU, prn};
            o.band = SignalBand::B1;
            o.pseudorange = 2e7 + rng.uniform() * 5e6;
            if (rng.uniform() < 0.8) o.carrier_phase = o.pseudorange / 0.19 + prn;
            if (rng.uniform() < 0.8) o.doppler = (rng.uniform() - 0.5) * 8000.0;
            o.cn0 = 20.0 + rng.uniform() * 40.0;
            o.loss_of_lock = rng.uniform() < 0.1;
            e.observations.push_back(o);
        }

        const Epoch back = epoch_from_json(epoch_to_json(e));
        REQUIRE(back.observations.size() == e.observations.size());
        CHECK(back.time.week == e.time.week);
        CHECK(back.time.tow == e.time.tow);
        for (std::size_t i = 0; i < e.observations.size(); ++i) {
            const auto& a = e.observations[i];
            const auto* b = back.find(a.sat, a.band);
            REQUIRE(b != nullptr);
            CHECK(b->pseudorange == a.pseudorange);
            CHECK(b->carrier_phase == a.carrier_phase);
            CHECK(b->doppler == a.doppler);
            CHECK(b->cn0 == a.cn0);
            CHECK(b->loss_of_lock == a.loss_of_lock);
        }
    }
}
