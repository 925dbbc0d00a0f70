#include "rtkpipe/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace rtkpipe {

/* ---- deterministic RNG --------------------------------------------------- */

std::uint64_t DeterministicRng::next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double DeterministicRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

/* Irwin-Hall sum of 12 uniforms: unit variance, adds/subtracts only, so the
 * stream is bit-identical on any IEEE-754 platform (no libm in the path). */
double DeterministicRng::gaussian() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return s - 6.0;
}

std::uint64_t DeterministicRng::mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9E3779B97F4A7C15ULL * (b + 0x632BE59BD9B4E019ULL);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

namespace {

enum NoiseKind : std::uint64_t {
    KIND_SATBIAS = 1,
    KIND_CODE = 2,
    KIND_PHASE = 3,
    KIND_CN0 = 4,
    KIND_CLOCKWALK = 5,
    KIND_AMBIGUITY = 6,
    KIND_IONO = 7,
    KIND_TROPO = 8,
};

std::uint64_t sat_key(const SatId& sat) {
    return static_cast<std::uint64_t>(sat.constellation) * 100 + static_cast<std::uint64_t>(sat.prn);
}

double keyed_gaussian(std::uint64_t seed, std::uint64_t kind, std::uint64_t receiver,
                      const SatId& sat, std::uint64_t epoch) {
    DeterministicRng rng(DeterministicRng::mix(DeterministicRng::mix(seed, kind),
                                               DeterministicRng::mix(receiver * 7919 + 17,
                                                                     sat_key(sat) * 131 + epoch)));
    return rng.gaussian();
}

double elevation_mapping(double elevation_deg) {
    return 1.0 / std::sin(deg2rad(std::max(elevation_deg, 2.0)));
}

} // namespace

/* ---- constellation fitting ----------------------------------------------- */

KeplerEphemeris fit_ephemeris(const SatId& sat, double elevation_deg, double azimuth_deg,
                              const GeodeticPosition& site, const GpsTime& t0, double toe_tow) {
    const double orbit_radius = 26560e3;

    const EcefPosition r0 = geodetic_to_ecef(site);
    const double el = deg2rad(elevation_deg), az = deg2rad(azimuth_deg);
    const EnuVector dir{std::sin(az) * std::cos(el), std::cos(az) * std::cos(el), std::sin(el)};
    const EcefPosition tip = enu_to_ecef(dir, site);
    const EcefPosition u = tip - r0; /* unit line of sight in ECEF */

    const double rd = r0.x * u.x + r0.y * u.y + r0.z * u.z;
    const double rr = r0.x * r0.x + r0.y * r0.y + r0.z * r0.z;
    const double slant = -rd + std::sqrt(rd * rd + orbit_radius * orbit_radius - rr);
    const EcefPosition psat{r0.x + slant * u.x, r0.y + slant * u.y, r0.z + slant * u.z};

    const double lat_c = std::asin(psat.z / orbit_radius); /* geocentric */
    const double lon_c = std::atan2(psat.y, psat.x);

    const double inc = std::clamp(std::fabs(lat_c) + deg2rad(20.0), deg2rad(30.0), deg2rad(88.0));
    double arg_lat = std::asin(std::sin(lat_c) / std::sin(inc));
    if (lat_c < 0.0 && arg_lat > 0.0) arg_lat = -arg_lat; /* keep ascending branch sign */
    const double node_offset = std::atan2(std::cos(inc) * std::sin(arg_lat), std::cos(arg_lat));
    const double node_lon = lon_c - node_offset;

    KeplerEphemeris eph;
    eph.sat = sat;
    eph.week = t0.week;
    eph.toe = toe_tow;
    eph.toc = toe_tow;
    eph.sqrt_a = std::sqrt(orbit_radius);
    eph.e = 0.0;
    eph.i0 = inc;
    eph.omega = 0.0;

    const double tk0 = t0 - GpsTime(t0.week, toe_tow);
    const double n = std::sqrt(GM_EARTH / (orbit_radius * orbit_radius * orbit_radius));
    eph.m0 = arg_lat - n * tk0;
    eph.omega0 = node_lon + OMGE * t0.tow;

    /* small deterministic clock terms so the correction path is exercised */
    DeterministicRng rng(DeterministicRng::mix(0xC10C5EED, sat_key(sat)));
    eph.af0 = (rng.uniform() - 0.5) * 2e-4;
    eph.af1 = (rng.uniform() - 0.5) * 2e-11;
    eph.af2 = 0.0;
    return eph;
}

std::vector<KeplerEphemeris> default_constellation(const GeodeticPosition& site,
                                                   const GpsTime& t0, double toe_tow) {
    struct Target {
        char letter;
        int prn;
        double el, az;
    };
    /* a spread of high satellites plus low ones for masking studies; G25 sits
     * near 8 degrees, the classic poor-quality case */
    static const Target targets[] = {
        {'G', 2, 75.0, 20.0},  {'G', 5, 62.0, 130.0}, {'G', 7, 55.0, 250.0},
        {'G', 9, 48.0, 310.0}, {'G', 13, 44.0, 80.0}, {'G', 15, 38.0, 180.0},
        {'G', 20, 33.0, 220.0}, {'G', 25, 8.0, 45.0},  {'G', 29, 21.0, 150.0},
        {'C', 1, 80.0, 200.0}, {'C', 6, 58.0, 300.0}, {'C', 9, 50.0, 60.0},
        {'C', 11, 42.0, 240.0}, {'C', 14, 35.0, 110.0}, {'C', 23, 25.0, 330.0},
    };

    std::vector<KeplerEphemeris> out;
    for (const auto& t : targets)
        out.push_back(fit_ephemeris({constellation_from_letter(t.letter), t.prn}, t.el, t.az,
                                    site, t0, toe_tow));
    return out;
}

Scenario default_scenario(std::uint64_t seed) {
    Scenario s;
    s.seed = seed;
    s.duration = 300.0;
    s.rate = 1.0;
    s.start = GpsTime(2308, 259200.0);
    s.base_truth = {39.9610, 116.3490, 60.0};
    s.rover_path = {{0.0, {39.96368, 116.3490, 45.0}}}; /* ~298 m north of the base */
    s.constellation = default_constellation(s.base_truth, s.start, s.start.tow + s.duration / 2.0);
    s.errors.iono_zenith = 2.0;
    s.errors.tropo_zenith = 2.3;
    s.errors.decorrelation = 0.0;
    s.errors.sat_clock_sigma = 1e-8;
    s.errors.receiver_clock_walk = 1e-9;
    s.errors.code_noise_zenith = 0.6;
    s.errors.phase_noise_zenith = 0.00025;
    s.errors.multipath_bias = 10.0;
    s.errors.multipath_below_deg = 15.0;
    return s;
}

/* ---- scenario text format ------------------------------------------------ */

namespace {

GeodeticPosition parse_llh(const std::string& text) {
    GeodeticPosition p;
    if (std::sscanf(text.c_str(), "%lf,%lf,%lf", &p.lat_deg, &p.lon_deg, &p.height) != 3)
        throw Error("scenario: bad lat,lon,h triple '" + text + "'");
    return p;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

Scenario parse_scenario(const std::string& text) {
    Scenario s = default_scenario();
    s.constellation.clear();

    bool want_default_constellation = true;
    struct SatTarget {
        SatId sat;
        double el, az;
    };
    std::vector<SatTarget> targets;

    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;

        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("scenario line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "seed") s.seed = std::stoull(value);
        else if (key == "duration") s.duration = std::stod(value);
        else if (key == "rate") s.rate = std::stod(value);
        else if (key == "start_week") s.start.week = std::stoi(value);
        else if (key == "start_tow") s.start.tow = std::stod(value);
        else if (key == "base") s.base_truth = parse_llh(value);
        else if (key == "rover") s.rover_path = {{0.0, parse_llh(value)}};
        else if (key == "rover_path") {
            s.rover_path.clear();
            std::istringstream segs(value);
            std::string seg;
            while (std::getline(segs, seg, ';')) {
                seg = trim(seg);
                if (seg.empty()) continue;
                const auto colon = seg.find(':');
                if (colon == std::string::npos)
                    throw Error("scenario: rover_path segment needs t:lat,lon,h");
                Waypoint w;
                w.t = std::stod(trim(seg.substr(0, colon)));
                w.position = parse_llh(trim(seg.substr(colon + 1)));
                s.rover_path.push_back(w);
            }
        } else if (key == "constellation") {
            want_default_constellation = value == "default";
        } else if (key == "sat") {
            SatTarget t;
            char name[8];
            if (std::sscanf(value.c_str(), "%3[^,],%lf,%lf", name, &t.el, &t.az) != 3)
                throw Error("scenario: bad sat line '" + value + "' (want NAME,el,az)");
            t.sat = sat_from_string(name);
            targets.push_back(t);
            want_default_constellation = false;
        } else if (key == "iono_zenith") s.errors.iono_zenith = std::stod(value);
        else if (key == "tropo_zenith") s.errors.tropo_zenith = std::stod(value);
        else if (key == "decorrelation") s.errors.decorrelation = std::stod(value);
        else if (key == "sat_clock_sigma") s.errors.sat_clock_sigma = std::stod(value);
        else if (key == "receiver_clock_walk") s.errors.receiver_clock_walk = std::stod(value);
        else if (key == "code_noise") s.errors.code_noise_zenith = std::stod(value);
        else if (key == "phase_noise") s.errors.phase_noise_zenith = std::stod(value);
        else if (key == "multipath_bias") s.errors.multipath_bias = std::stod(value);
        else if (key == "multipath_below") s.errors.multipath_below_deg = std::stod(value);
        else if (key == "dropout") {
            DropoutWindow w;
            char name[8] = {0};
            if (std::sscanf(value.c_str(), "%lf,%lf,%7s", &w.start, &w.end, name) != 3)
                throw Error("scenario: bad dropout '" + value + "' (want start,end,SAT|ALL)");
            if (std::string(name) != "ALL") w.sat = sat_from_string(name);
            s.dropouts.push_back(w);
        } else {
            throw Error("scenario line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }

    const double toe = s.start.tow + s.duration / 2.0;
    if (want_default_constellation) {
        s.constellation = default_constellation(s.base_truth, s.start, toe);
    } else {
        for (const auto& t : targets)
            s.constellation.push_back(fit_ephemeris(t.sat, t.el, t.az, s.base_truth, s.start, toe));
    }
    return s;
}

Scenario read_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scenario file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    Scenario s = parse_scenario(ss.str());
    validate_scenario(s);
    return s;
}

std::string scenario_reference_text() {
    return R"(# rtkpipe scenario file: key = value lines, '#' starts a comment.
seed = 42
duration = 300            # s
rate = 1                  # epochs per second: 1, 5 or 10
start_week = 2308         # GPS week of the first epoch
start_tow = 259200        # GPS seconds of week of the first epoch

base = 39.9610,116.3490,60.0      # lat_deg,lon_deg,height_m
rover = 39.96368,116.3490,45.0    # static rover
# rover_path = 0:39.9610,116.3490,45.0; 300:39.9640,116.3490,45.0   # kinematic

constellation = default   # GPS+BeiDou spread over the site
# or list satellites as NAME,elevation_deg,azimuth_deg at the start epoch:
# sat = G02,75,20
# sat = C06,58,300

iono_zenith = 2.0         # m, mapped by 1/sin(el)
tropo_zenith = 2.3        # m, mapped by 1/sin(el)
decorrelation = 0.0       # 0 = atmosphere identical at both receivers
sat_clock_sigma = 1e-8    # s, per-satellite constant bias
receiver_clock_walk = 1e-9  # s/sqrt(s) random walk per receiver
code_noise = 0.6          # m at zenith, inflated by 1/sin(el)
phase_noise = 0.003       # m at zenith
multipath_bias = 10.0     # m code bias below multipath_below
multipath_below = 15.0    # deg

# rover signal interruptions: start_s,end_s,SAT (or ALL)
# dropout = 120,130,ALL
# dropout = 50,60,G07
)";
}

void validate_scenario(const Scenario& s) {
    std::vector<std::string> problems;
    if (!(s.duration > 0.0)) problems.push_back("duration must be positive");
    if (s.rate != 1.0 && s.rate != 5.0 && s.rate != 10.0)
        problems.push_back("rate must be 1, 5 or 10 Hz");
    if (s.constellation.empty()) problems.push_back("constellation is empty");
    if (s.rover_path.empty()) problems.push_back("rover position is missing");
    for (const auto& e : s.constellation) {
        if (!valid(e.sat)) problems.push_back("invalid satellite " + to_string(e.sat));
        if (!(e.sqrt_a >= 4000.0 && e.sqrt_a <= 7000.0))
            problems.push_back(to_string(e.sat) + ": sqrt_a outside [4000,7000]");
        if (!(e.e >= 0.0 && e.e < 0.1)) problems.push_back(to_string(e.sat) + ": e >= 0.1");
    }

    if (problems.empty()) {
        /* visibility: >= 5 satellites above 10 deg from both receivers */
        for (double t = 0.0; t <= s.duration + 1e-9; t += std::min(10.0, s.duration)) {
            const GpsTime when = s.start + t;
            for (Receiver recv : {Receiver::BASE, Receiver::ROVER}) {
                const EcefPosition pos = true_state(s, when, recv);
                int visible = 0;
                for (const auto& e : s.constellation) {
                    const SatState st = sat_state(e, when);
                    if (elevation_azimuth(pos, st.position).elevation_deg > 10.0) ++visible;
                }
                if (visible < 5) {
                    problems.push_back("only " + std::to_string(visible) +
                                       " satellites above 10 deg at t=" + std::to_string(t) +
                                       (recv == Receiver::BASE ? " (base)" : " (rover)"));
                    break;
                }
            }
        }
    }

    if (!problems.empty()) {
        std::string msg = "invalid scenario:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw Error(msg);
    }
}

/* ---- truth --------------------------------------------------------------- */

EcefPosition true_state(const Scenario& s, const GpsTime& time, Receiver receiver) {
    const double t = time - s.start;
    const double slop = 0.5 / s.rate;
    if (t < -slop || t > s.duration + slop)
        throw Error("true_state: time outside scenario span");

    if (receiver == Receiver::BASE) return geodetic_to_ecef(s.base_truth);

    const auto& path = s.rover_path;
    if (path.size() == 1) return geodetic_to_ecef(path.front().position);

    if (t <= path.front().t) return geodetic_to_ecef(path.front().position);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (t <= path[i + 1].t) {
            const double span = path[i + 1].t - path[i].t;
            const double f = span > 0.0 ? (t - path[i].t) / span : 0.0;
            const EcefPosition a = geodetic_to_ecef(path[i].position);
            const EcefPosition b = geodetic_to_ecef(path[i + 1].position);
            return {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.z + f * (b.z - a.z)};
        }
    }
    return geodetic_to_ecef(path.back().position);
}

/* ---- generation ----------------------------------------------------------- */

namespace {

struct EmissionSolution {
    double range = 0.0; /* sagnac-corrected geometric range (m) */
    GpsTime t_tx;
    SatState state; /* at emission */
    double elevation_deg = 0.0;
    double azimuth_deg = 0.0;
};

/* fixed-point solution of the signal transit time for a known receiver */
EmissionSolution solve_emission(const KeplerEphemeris& eph, const GpsTime& t_rx,
                                const EcefPosition& receiver) {
    EmissionSolution sol;
    double tau = 0.07;
    EcefPosition rotated{};
    for (int i = 0; i < 4; ++i) {
        sol.t_tx = t_rx + (-tau);
        sol.state = sat_state(eph, sol.t_tx);
        const double theta = OMGE * tau;
        const double st = std::sin(theta), ct = std::cos(theta);
        rotated = {ct * sol.state.position.x + st * sol.state.position.y,
                   -st * sol.state.position.x + ct * sol.state.position.y,
                   sol.state.position.z};
        tau = norm(rotated - receiver) / CLIGHT;
    }
    sol.range = tau * CLIGHT;
    const ElevationAzimuth ea = elevation_azimuth(receiver, rotated);
    sol.elevation_deg = ea.elevation_deg;
    sol.azimuth_deg = ea.azimuth_deg;
    return sol;
}

/* dropout bookkeeping for one satellite at one rover epoch */
struct DropoutState {
    bool dropped = false;
    bool reacquired = false; /* first epoch after a window closed */
    int generation = 0;      /* completed windows: re-keys the ambiguity */
};

DropoutState dropout_state(const Scenario& s, const SatId& sat, double t, double dt) {
    DropoutState st;
    for (const auto& w : s.dropouts) {
        if (w.sat && !(*w.sat == sat)) continue;
        if (t >= w.start && t < w.end) st.dropped = true;
        if (w.end <= t) {
            ++st.generation;
            if (t - dt < w.end) st.reacquired = true;
        }
    }
    return st;
}

} // namespace

SimulationOutput generate(const Scenario& scenario) {
    validate_scenario(scenario);

    SimulationOutput out;
    out.scenario = scenario;

    const std::int64_t step_ns = static_cast<std::int64_t>(1000000000.0 / scenario.rate);
    const std::int64_t start_tow_ns = std::llround(scenario.start.tow * 1e9);
    const int n_epochs = static_cast<int>(scenario.duration * scenario.rate);
    const double dt = 1.0 / scenario.rate;

    for (Receiver recv : {Receiver::BASE, Receiver::ROVER}) {
        const std::uint64_t recv_id = recv == Receiver::BASE ? 1 : 2;
        auto& epochs = recv == Receiver::BASE ? out.base : out.rover;
        double receiver_clock = 0.0;

        for (int k = 0; k < n_epochs; ++k) {
            std::int64_t tow_ns = start_tow_ns + static_cast<std::int64_t>(k) * step_ns;
            int week = scenario.start.week;
            while (tow_ns >= WEEK_NANOS) { tow_ns -= WEEK_NANOS; ++week; }

            const GpsTime t_rx(week, static_cast<double>(tow_ns) * 1e-9);
            const double t_offset = static_cast<double>(k) * dt;
            const EcefPosition rcv_pos = true_state(scenario, t_rx, recv);
            const EcefPosition base_pos = true_state(scenario, t_rx, Receiver::BASE);

            receiver_clock += scenario.errors.receiver_clock_walk * std::sqrt(dt) *
                              keyed_gaussian(scenario.seed, KIND_CLOCKWALK, recv_id,
                                             SatId{Constellation::GPS, 1}, static_cast<std::uint64_t>(k));

            SimulatedEpoch epoch;
            epoch.time = t_rx;

            for (const auto& eph : scenario.constellation) {
                const SatId sat = eph.sat;
                DropoutState drop{};
                if (recv == Receiver::ROVER) {
                    drop = dropout_state(scenario, sat, t_offset, dt);
                    if (drop.dropped) continue;
                }

                const EmissionSolution sol = solve_emission(eph, t_rx, rcv_pos);
                if (sol.elevation_deg <= 0.0) continue;

                const SignalBand band = default_band(sat.constellation);
                const double lambda = wavelength(band);
                const auto ek = static_cast<std::uint64_t>(k);
                const ErrorModel& em = scenario.errors;

                /* satellite clock: broadcast model plus an uncorrected bias */
                const double sat_bias =
                    em.sat_clock_sigma * keyed_gaussian(scenario.seed, KIND_SATBIAS, 0, sat, 0);
                const double dt_sat = sol.state.clock_bias + sat_bias;

                /* atmosphere: common part mapped at the base's elevation so it
                 * cancels exactly in double differences at decorrelation 0 */
                const double el_base = solve_emission(eph, t_rx, base_pos).elevation_deg;
                const double f = em.decorrelation;
                const double common_map = elevation_mapping(el_base);
                const double own_map = elevation_mapping(sol.elevation_deg);
                const double iono =
                    (1.0 - f) * em.iono_zenith * common_map +
                    f * em.iono_zenith * own_map *
                        keyed_gaussian(scenario.seed, KIND_IONO, recv_id, sat, ek);
                const double tropo =
                    (1.0 - f) * em.tropo_zenith * common_map +
                    f * em.tropo_zenith * own_map *
                        keyed_gaussian(scenario.seed, KIND_TROPO, recv_id, sat, ek);

                const double code_noise = em.code_noise_zenith * own_map *
                                          keyed_gaussian(scenario.seed, KIND_CODE, recv_id, sat, ek);
                const double phase_noise = em.phase_noise_zenith * own_map *
                                           keyed_gaussian(scenario.seed, KIND_PHASE, recv_id, sat, ek);
                const double multipath =
                    sol.elevation_deg < em.multipath_below_deg ? em.multipath_bias : 0.0;

                /* integer carrier ambiguity, redrawn after each signal loss */
                DeterministicRng amb_rng(DeterministicRng::mix(
                    DeterministicRng::mix(scenario.seed, KIND_AMBIGUITY),
                    DeterministicRng::mix(recv_id, sat_key(sat) * 64 +
                                                       static_cast<std::uint64_t>(drop.generation))));
                const double ambiguity =
                    std::floor(amb_rng.uniform() * 4001.0) - 2000.0; /* [-2000, 2000] cycles */

                const double clock_terms = CLIGHT * (receiver_clock - dt_sat);
                const double pr = sol.range + clock_terms + iono + tropo + multipath + code_noise;
                const double phase_m =
                    sol.range + clock_terms - iono + tropo + lambda * ambiguity + phase_noise;

                if (!(pr >= PSEUDORANGE_MIN && pr <= PSEUDORANGE_MAX)) continue;

                /* range rate by symmetric differencing */
                const double range_p = solve_emission(eph, t_rx + 0.05, rcv_pos).range;
                const double range_m = solve_emission(eph, t_rx + (-0.05), rcv_pos).range;
                const double range_rate = (range_p - range_m) / 0.1;

                double cn0 = 28.0 + 17.0 * std::sin(deg2rad(sol.elevation_deg)) +
                             0.5 * keyed_gaussian(scenario.seed, KIND_CN0, recv_id, sat, ek);
                cn0 = std::clamp(cn0, 10.0, 63.0);

                RawMeasurement raw;
                raw.sat = sat;
                raw.band = band;
                raw.time_nanos = static_cast<std::int64_t>(week) * WEEK_NANOS + tow_ns;
                raw.full_bias_nanos = 0;
                raw.bias_nanos = -receiver_clock * 1e9;
                raw.time_offset_nanos = 0.0;

                /* transmit time of week in the satellite's own time scale,
                 * integer ns plus sub-ns fraction (kept exact) */
                std::int64_t scale_tow = tow_ns;
                std::int64_t modulus = WEEK_NANOS;
                if (sat.constellation == Constellation::BEIDOU)
                    scale_tow -= static_cast<std::int64_t>(BDS_GPS_TIME_OFFSET * 1e9);
                if (sat.constellation == Constellation::GLONASS) {
                    modulus = DAY_NANOS;
                    scale_tow %= DAY_NANOS;
                }
                const double pr_ns = pr / CLIGHT * 1e9;
                const double ip = std::floor(pr_ns);
                double frac = (receiver_clock * 1e9) - (pr_ns - ip);
                std::int64_t recv_int = scale_tow - static_cast<std::int64_t>(ip);
                const double shift = std::floor(frac);
                recv_int += static_cast<std::int64_t>(shift);
                frac -= shift;
                recv_int %= modulus;
                if (recv_int < 0) recv_int += modulus;
                raw.received_sv_time_nanos = recv_int;
                raw.received_sv_time_frac_nanos = frac;

                raw.state_flags = state_flag::CODE_LOCK | state_flag::TOW_DECODED |
                                  state_flag::ADR_VALID | state_flag::HALF_CYCLE_RESOLVED;
                if (drop.reacquired) raw.state_flags |= state_flag::ADR_RESET;
                raw.pseudorange_rate = range_rate;
                raw.accumulated_delta_range = phase_m;
                raw.cn0 = cn0;

                epoch.raws.push_back(raw);
                epoch.model_pseudorange.push_back(pr);
                epoch.model_phase_m.push_back(phase_m);
            }

            if (!epoch.raws.empty()) epochs.push_back(std::move(epoch));
        }
    }
    return out;
}

void write_truth_jsonl(const std::string& path, const Scenario& scenario) {
    std::ofstream outf(path);
    if (!outf) throw Error("cannot write truth file: " + path);

    const int n_epochs = static_cast<int>(scenario.duration * scenario.rate);
    for (int k = 0; k < n_epochs; ++k) {
        const GpsTime t = scenario.start + static_cast<double>(k) / scenario.rate;
        const GeodeticPosition p = ecef_to_geodetic(true_state(scenario, t, Receiver::ROVER));
        nlohmann::json j{{"week", t.week}, {"tow", t.tow},      {"lat", p.lat_deg},
                         {"lon", p.lon_deg}, {"h", p.height}};
        outf << j.dump() << '\n';
    }
}

} // namespace rtkpipe
