#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "rtkpipe/satsel.hpp"
#include "rtkpipe/scenario.hpp"
#include "rtkpipe/solver.hpp"

using namespace rtkpipe;

namespace {

EphemerisSet eph_set(const Scenario& sc) {
    EphemerisSet out;
    for (const auto& e : sc.constellation) out[e.sat] = e;
    return out;
}

Epoch select_epoch(const Epoch& epoch, const EphemerisSet& ephs, const EcefPosition& approx,
                   const SelectionConfig& cfg = {}) {
    const auto geoms = epoch_geometry(epoch, ephs, approx);
    const Selection sel = select_satellites(geoms, cfg);
    Epoch out;
    out.time = epoch.time;
    for (const auto& g : sel.satellites)
        if (const Observation* o = epoch.find(g.sat, default_band(g.sat.constellation)))
            out.observations.push_back(*o);
    return out;
}

struct Run {
    Scenario scenario;
    SimulationOutput sim;
    EphemerisSet ephs;
    std::vector<Epoch> base, rover;
};

Run make_run(Scenario sc) {
    Run run;
    run.scenario = sc;
    run.sim = generate(sc);
    run.ephs = eph_set(sc);
    for (const auto& se : run.sim.base) run.base.push_back(build_epoch(se.raws, se.time.week));
    for (const auto& se : run.sim.rover) run.rover.push_back(build_epoch(se.raws, se.time.week));
    return run;
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    return es.eigenvalues().minCoeff();
}

} // namespace

TEST_CASE("spp on an error-free epoch recovers the truth") {
    Scenario sc = default_scenario(17);
    sc.duration = 5.0;
    sc.errors = ErrorModel{};
    const Run run = make_run(sc);

    const EcefPosition truth = true_state(sc, run.rover[0].time, Receiver::ROVER);
    const Solution sol = spp_solve(run.rover[0], run.ephs);
    REQUIRE(sol.status == SolutionStatus::SINGLE);
    CHECK(norm(sol.position - truth) < 1e-6);
    CHECK(sol.nsat >= 10);
    CHECK(sol.hdop > 0.0);
    CHECK(sol.hdop < 10.0);
}

TEST_CASE("spp absorbs a receiver clock offset") {
    Scenario sc = default_scenario(18);
    sc.duration = 5.0;
    sc.errors = ErrorModel{};
    const Run run = make_run(sc);

    const Solution ref = spp_solve(run.rover[0], run.ephs);
    REQUIRE(ref.status == SolutionStatus::SINGLE);

    /* a 1 ms receiver clock shift moves the label and every pseudorange */
    Epoch shifted = run.rover[0];
    shifted.time = shifted.time + 0.001;
    for (auto& o : shifted.observations) o.pseudorange += CLIGHT * 0.001;

    const Solution out = spp_solve(shifted, run.ephs);
    REQUIRE(out.status == SolutionStatus::SINGLE);
    CHECK(norm(out.position - ref.position) < 1e-6);
}

TEST_CASE("spp needs at least four satellites") {
    Scenario sc = default_scenario(19);
    sc.duration = 5.0;
    sc.errors = ErrorModel{};
    const Run run = make_run(sc);

    Epoch three = run.rover[0];
    three.observations.resize(3);
    CHECK(spp_solve(three, run.ephs).status == SolutionStatus::NO_FIX);
}

TEST_CASE("double differences cancel receiver- and satellite-common terms") {
    Epoch base, rover;
    base.time = rover.time = GpsTime(2308, 259200.0);
    DeterministicRng rng(5);
    for (int prn = 1; prn <= 6; ++prn) {
        Observation b, r;
        b.sat = r.sat = {Constellation::GPS, prn};
        b.band = r.band = SignalBand::L1;
        b.pseudorange = 2.0e7 + rng.uniform() * 1e6;
        r.pseudorange = 2.0e7 + rng.uniform() * 1e6;
        b.carrier_phase = b.pseudorange / wavelength(SignalBand::L1) + prn;
        r.carrier_phase = r.pseudorange / wavelength(SignalBand::L1) - prn;
        base.observations.push_back(b);
        rover.observations.push_back(r);
    }
    const SatId ref{Constellation::GPS, 1};
    const auto plain = double_difference(base, rover, ref);
    REQUIRE(plain.size() == 5);

    /* per-receiver constant */
    Epoch rover_biased = rover;
    for (auto& o : rover_biased.observations) {
        o.pseudorange += 1234.5;
        *o.carrier_phase += 42.0;
    }
    const auto biased = double_difference(base, rover_biased, ref);
    for (std::size_t i = 0; i < plain.size(); ++i) {
        CHECK(biased[i].code == doctest::Approx(plain[i].code).epsilon(1e-12));
        CHECK(*biased[i].phase == doctest::Approx(*plain[i].phase).epsilon(1e-12));
    }

    /* per-satellite constant, same at both receivers */
    Epoch base_sat = base, rover_sat = rover;
    for (std::size_t i = 0; i < base_sat.observations.size(); ++i) {
        const double bump = 100.0 * static_cast<double>(i + 1);
        base_sat.observations[i].pseudorange += bump;
        rover_sat.observations[i].pseudorange += bump;
        *base_sat.observations[i].carrier_phase += bump;
        *rover_sat.observations[i].carrier_phase += bump;
    }
    const auto satbias = double_difference(base_sat, rover_sat, ref);
    for (std::size_t i = 0; i < plain.size(); ++i) {
        CHECK(satbias[i].code == doctest::Approx(plain[i].code).epsilon(1e-12));
        CHECK(*satbias[i].phase == doctest::Approx(*plain[i].phase).epsilon(1e-12));
    }

    CHECK_THROWS_AS(double_difference(base, rover, SatId{Constellation::GPS, 30}), Error);
    Epoch late = rover;
    late.time = late.time + 0.5;
    CHECK_THROWS_AS(double_difference(base, late, ref), AgeOfDataError);
}

TEST_CASE("correlated atmosphere cancels in DD but not undifferenced") {
    Scenario sc = default_scenario(23);
    sc.duration = 10.0;
    sc.errors.code_noise_zenith = 0.005;
    sc.errors.phase_noise_zenith = 0.0005;
    sc.errors.multipath_bias = 0.0;
    const Run run = make_run(sc);

    const EcefPosition base_pos = true_state(sc, sc.start, Receiver::BASE);
    const EcefPosition rover_pos = true_state(sc, sc.start, Receiver::ROVER);

    double worst_undiff = 0.0, worst_dd = 0.0;
    for (std::size_t k = 0; k < run.rover.size(); ++k) {
        /* undifferenced residuals keep the mapped atmosphere */
        for (const auto& r : pseudorange_residuals(run.rover[k], run.ephs, rover_pos))
            worst_undiff = std::max(worst_undiff, std::fabs(r.residual));

        const SatId ref{Constellation::GPS, 2};
        for (const auto& dd : double_difference(run.base[k], run.rover[k], ref)) {
            auto rng_of = [&](const SatId& sat, const Epoch& e, const EcefPosition& pos) {
                const Observation* o = e.find(sat, default_band(sat.constellation));
                return sagnac_range(emission_state(run.ephs.at(sat), e.time, o->pseudorange)
                                        .position,
                                    pos);
            };
            const double model =
                (rng_of(dd.sat, run.rover[k], rover_pos) - rng_of(dd.sat, run.base[k], base_pos)) -
                (rng_of(ref, run.rover[k], rover_pos) - rng_of(ref, run.base[k], base_pos));
            worst_dd = std::max(worst_dd, std::fabs(dd.code - model));
        }
    }
    CHECK(worst_undiff > 3.0);
    CHECK(worst_dd < 0.5);
}

TEST_CASE("zero baseline with noiseless observations pins the float at zero") {
    Scenario sc = default_scenario(29);
    sc.duration = 10.0;
    sc.rover_path = {{0.0, sc.base_truth}};
    sc.errors = ErrorModel{};
    const Run run = make_run(sc);

    const EcefPosition base_pos = geodetic_to_ecef(sc.base_truth);

    /* spec defaults: the first update lands on zero exactly */
    {
        SolverConfig cfg;
        cfg.process_noise_position = 0.0;
        RtkSession session(base_pos, cfg);
        const Epoch rover = select_epoch(run.rover[0], run.ephs, base_pos);
        const Epoch base = select_epoch(run.base[0], run.ephs, base_pos);
        const Solution sol = session.update(base, rover, run.ephs);
        REQUIRE(sol.status != SolutionStatus::NO_FIX);
        CHECK(session.state().baseline.norm() < 1e-9);
    }

    /* with sigmas matching the (noise-free) data the whole stream stays
     * pinned: remaining wiggle is double-representation noise in the phases */
    SolverConfig cfg;
    cfg.process_noise_position = 0.0;
    cfg.code_sigma = 0.3;
    RtkSession session(base_pos, cfg);
    for (std::size_t k = 0; k < run.rover.size(); ++k) {
        const Epoch rover = select_epoch(run.rover[k], run.ephs, base_pos);
        const Epoch base = select_epoch(run.base[k], run.ephs, base_pos);
        const Solution sol = session.update(base, rover, run.ephs);
        REQUIRE(sol.status != SolutionStatus::NO_FIX);
        CHECK(session.state().baseline.norm() < 1e-6);
        CHECK(norm(sol.position - base_pos) < 1e-6);
    }
}

TEST_CASE("static scenario converges under 0.1 m horizontal in 60 epochs") {
    Scenario sc = default_scenario(33);
    sc.duration = 60.0;
    const Run run = make_run(sc);

    const EcefPosition base_pos = geodetic_to_ecef(sc.base_truth);
    const EcefPosition rover_truth = true_state(sc, sc.start, Receiver::ROVER);
    SolverConfig cfg;
    cfg.process_noise_position = 0.0;
    RtkSession session(base_pos, cfg);

    Solution last;
    for (std::size_t k = 0; k < run.rover.size(); ++k) {
        const Epoch rover = select_epoch(run.rover[k], run.ephs, base_pos);
        const Epoch base = select_epoch(run.base[k], run.ephs, base_pos);
        last = session.update(base, rover, run.ephs);

        /* covariance stays symmetric PSD through every update */
        CHECK(min_eigenvalue(session.state().covariance) > -1e-9);
    }
    const EnuVector err = ecef_to_enu(last.position, ecef_to_geodetic(rover_truth));
    CHECK(std::hypot(err.east, err.north) < 0.1);
    CHECK(last.status != SolutionStatus::NO_FIX);
    CHECK(last.nsat >= 4);
}

TEST_CASE("ambiguity fixing produces FIXED solutions with honest ratios") {
    Scenario sc = default_scenario(37);
    sc.duration = 90.0;
    const Run run = make_run(sc);

    const EcefPosition base_pos = geodetic_to_ecef(sc.base_truth);
    SolverConfig cfg;
    cfg.process_noise_position = 0.0;
    RtkSession session(base_pos, cfg);

    int fixed_epochs = 0;
    for (std::size_t k = 0; k < run.rover.size(); ++k) {
        const Epoch rover = select_epoch(run.rover[k], run.ephs, base_pos);
        const Epoch base = select_epoch(run.base[k], run.ephs, base_pos);
        const Solution sol = session.update(base, rover, run.ephs);
        if (sol.status == SolutionStatus::FIXED) {
            ++fixed_epochs;
            CHECK(sol.ratio >= cfg.ratio_threshold);
            for (Eigen::Index i = 0; i < session.state().ambiguities.size(); ++i) {
                const double a = session.state().ambiguities(i);
                CHECK(std::fabs(a - std::round(a)) <= 0.15);
            }
        }
    }
    CHECK(fixed_epochs > 30);
}

TEST_CASE("re-pivoting the reference changes nothing") {
    Scenario sc = default_scenario(41);
    sc.duration = 30.0;
    const Run run = make_run(sc);

    const EcefPosition base_pos = geodetic_to_ecef(sc.base_truth);
    SolverConfig cfg;
    cfg.process_noise_position = 0.0;
    RtkSession session(base_pos, cfg);

    for (std::size_t k = 0; k + 1 < run.rover.size(); ++k) {
        const Epoch rover = select_epoch(run.rover[k], run.ephs, base_pos);
        const Epoch base = select_epoch(run.base[k], run.ephs, base_pos);
        session.update(base, rover, run.ephs);
    }

    /* session B gets a forced pivot before the last epoch */
    RtkSession pivoted = session;
    const auto& keys = pivoted.state().ambiguity_keys;
    REQUIRE_FALSE(keys.empty());
    SatId new_ref = keys.front().first;
    pivoted.repivot(new_ref.constellation, new_ref);

    const Epoch rover = select_epoch(run.rover.back(), run.ephs, base_pos);
    const Epoch base = select_epoch(run.base.back(), run.ephs, base_pos);
    const Solution a = session.update(base, rover, run.ephs);
    const Solution b = pivoted.update(base, rover, run.ephs);

    CHECK(norm(a.position - b.position) < 1e-9);
    CHECK((a.cov_enu - b.cov_enu).norm() < 1e-9);
}

TEST_CASE("all-satellite outage resets ambiguities and inflates covariance") {
    Scenario sc = default_scenario(45);
    sc.duration = 60.0;
    sc.dropouts = {{20.0, 25.0, std::nullopt}};
    const Run run = make_run(sc);

    const EcefPosition base_pos = geodetic_to_ecef(sc.base_truth);
    SolverConfig cfg;
    cfg.process_noise_position = 0.0;
    RtkSession session(base_pos, cfg);

    double prev_trace = 0.0;
    bool checked_reset = false;
    std::size_t bi = 0;
    for (std::size_t k = 0; k < run.rover.size(); ++k) {
        const double t = run.rover[k].time - sc.start;
        /* pair rover epochs with matching base epochs across the gap */
        while (bi < run.base.size() && run.base[bi].time - run.rover[k].time < -0.05) ++bi;
        REQUIRE(bi < run.base.size());

        const Epoch rover = select_epoch(run.rover[k], run.ephs, base_pos);
        const Epoch base = select_epoch(run.base[bi], run.ephs, base_pos);
        const Solution sol = session.update(base, rover, run.ephs);

        if (t == doctest::Approx(25.0)) {
            /* first epoch back: every ambiguity re-initialized wide, so the
             * pre-update covariance trace jumps */
            CHECK(sol.predicted_covariance_trace > prev_trace);
            CHECK(sol.predicted_covariance_trace > 1e3);
            checked_reset = true;
        }
        prev_trace = session.state().covariance.trace();
    }
    CHECK(checked_reset);
}

TEST_CASE("coasting degrades the status after five seconds") {
    Scenario sc = default_scenario(49);
    sc.duration = 30.0;
    const Run run = make_run(sc);

    const EcefPosition base_pos = geodetic_to_ecef(sc.base_truth);
    RtkSession session(base_pos, {});

    const Epoch rover0 = select_epoch(run.rover[0], run.ephs, base_pos);
    const Epoch base0 = select_epoch(run.base[0], run.ephs, base_pos);
    CHECK(session.update(base0, rover0, run.ephs).status == SolutionStatus::DGNSS_FLOAT);

    /* starve the filter: one common satellite only */
    for (std::size_t k = 1; k < 10; ++k) {
        Epoch rover = select_epoch(run.rover[k], run.ephs, base_pos);
        rover.observations.resize(1);
        const Epoch base = select_epoch(run.base[k], run.ephs, base_pos);
        const Solution sol = session.update(base, rover, run.ephs);
        const double gap = run.rover[k].time - run.rover[0].time;
        if (gap <= 5.0)
            CHECK(sol.status == SolutionStatus::DGNSS_FLOAT);
        else
            CHECK(sol.status == SolutionStatus::NO_FIX);
    }
}

TEST_CASE("GGA sentence layout and checksum") {
    Solution s;
    s.time = GpsTime(2308, 3600.0 * 2 + 60.0 * 3 + 4.5);
    s.geodetic = {39.961, 116.355, 58.3};
    s.position = geodetic_to_ecef(s.geodetic);
    s.status = SolutionStatus::FIXED;
    s.nsat = 9;
    s.hdop = 1.2;

    const std::string gga = solution_to_nmea(s);
    CHECK(gga.find("$GPGGA,020304.50,") == 0);
    CHECK(gga.find("3957.66000,N") != std::string::npos);
    CHECK(gga.find("11621.30000,E") != std::string::npos);
    CHECK(gga.find(",4,09,") != std::string::npos);

    /* checksum: xor-fold oracle over the payload */
    const auto star = gga.find('*');
    REQUIRE(star != std::string::npos);
    unsigned x = 0;
    for (std::size_t i = 1; i < star; ++i) x ^= static_cast<unsigned char>(gga[i]);
    char want[3];
    std::snprintf(want, sizeof want, "%02X", x);
    CHECK(gga.substr(star + 1, 2) == want);

    s.status = SolutionStatus::SINGLE;
    CHECK(solution_to_nmea(s).find(",1,09,") != std::string::npos);
    s.status = SolutionStatus::DGNSS_FLOAT;
    CHECK(solution_to_nmea(s).find(",5,09,") != std::string::npos);
    s.status = SolutionStatus::NO_FIX;
    CHECK(solution_to_nmea(s).empty());
}

TEST_CASE("solution JSONL round trip") {
    Solution s;
    s.time = GpsTime(2308, 259201.0);
    s.geodetic = {39.9612345, 116.3554321, 61.7};
    s.position = geodetic_to_ecef(s.geodetic);
    s.status = SolutionStatus::DGNSS_FLOAT;
    s.nsat = 11;
    s.cov_enu << 0.01, 0.001, 0.0, 0.001, 0.02, 0.0, 0.0, 0.0, 0.09;
    s.age_of_corrections = 0.0;
    s.hdop = 1.1;

    const Solution back = solution_from_json(solution_to_json(s));
    CHECK(back.time.week == s.time.week);
    CHECK(back.time.tow == s.time.tow);
    CHECK(back.geodetic.lat_deg == s.geodetic.lat_deg);
    CHECK(back.status == s.status);
    CHECK(back.nsat == s.nsat);
    CHECK((back.cov_enu - s.cov_enu).norm() == 0.0);
}
