#include "rtkpipe/ephemeris.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace rtkpipe {

double kepler_solve(double mean_anomaly, double eccentricity) {
    if (eccentricity < 0.0 || eccentricity >= 1.0)
        throw Error("kepler_solve: eccentricity out of [0,1)");

    double ecc_anom = mean_anomaly;
    for (int i = 0; i < 30; ++i) {
        const double f = ecc_anom - eccentricity * std::sin(ecc_anom) - mean_anomaly;
        if (std::fabs(f) < 1e-12) return ecc_anom;
        ecc_anom -= f / (1.0 - eccentricity * std::cos(ecc_anom));
    }
    if (std::fabs(ecc_anom - eccentricity * std::sin(ecc_anom) - mean_anomaly) < 1e-12)
        return ecc_anom;
    throw Error("kepler_solve: no convergence");
}

SatState sat_state(const KeplerEphemeris& eph, const GpsTime& t) {
    const double tk = t - GpsTime(eph.week, eph.toe);
    if (std::fabs(tk) > EPHEMERIS_VALIDITY_S)
        throw StaleEphemerisError("ephemeris stale for " + to_string(eph.sat) + ": dt=" +
                                  std::to_string(tk) + " s");

    const double a = eph.sqrt_a * eph.sqrt_a;
    const double n = std::sqrt(GM_EARTH / (a * a * a)) + eph.delta_n;
    const double mk = eph.m0 + n * tk;
    const double ek = kepler_solve(mk, eph.e);
    const double sek = std::sin(ek), cek = std::cos(ek);

    const double vk = std::atan2(std::sqrt(1.0 - eph.e * eph.e) * sek, cek - eph.e);
    const double phik = vk + eph.omega;
    const double s2p = std::sin(2.0 * phik), c2p = std::cos(2.0 * phik);

    const double uk = phik + eph.cus * s2p + eph.cuc * c2p;
    const double rk = a * (1.0 - eph.e * cek) + eph.crs * s2p + eph.crc * c2p;
    const double ik = eph.i0 + eph.idot * tk + eph.cis * s2p + eph.cic * c2p;

    const double xk = rk * std::cos(uk), yk = rk * std::sin(uk);
    const double omegak = eph.omega0 + (eph.omega_dot - OMGE) * tk - OMGE * eph.toe;
    const double so = std::sin(omegak), co = std::cos(omegak);
    const double si = std::sin(ik), ci = std::cos(ik);

    SatState st;
    st.position = {xk * co - yk * ci * so, xk * so + yk * ci * co, yk * si};

    const double tc = t - GpsTime(eph.week, eph.toc);
    const double relativistic = -2.0 * std::sqrt(GM_EARTH) * eph.e * eph.sqrt_a * sek /
                                (CLIGHT * CLIGHT);
    st.clock_bias = eph.af0 + eph.af1 * tc + eph.af2 * tc * tc + relativistic;
    return st;
}

void sat_state_velocity(const KeplerEphemeris& eph, const GpsTime& t, SatState* state,
                        double velocity[3]) {
    const double dt = 0.05;
    *state = sat_state(eph, t);
    const SatState fwd = sat_state(eph, t + dt);
    const SatState bwd = sat_state(eph, t + (-dt));
    velocity[0] = (fwd.position.x - bwd.position.x) / (2.0 * dt);
    velocity[1] = (fwd.position.y - bwd.position.y) / (2.0 * dt);
    velocity[2] = (fwd.position.z - bwd.position.z) / (2.0 * dt);
}

SatState emission_state(const KeplerEphemeris& eph, const GpsTime& receive_time,
                        double pseudorange) {
    GpsTime t_tx = receive_time + (-pseudorange / CLIGHT);
    /* one pass of clock refinement is ample (af1*dt effects are sub-mm) */
    double clk = sat_state(eph, t_tx).clock_bias;
    t_tx = t_tx + (-clk);
    SatState st = sat_state(eph, t_tx);
    return st;
}

double sagnac_range(const EcefPosition& sat_at_emission, const EcefPosition& receiver,
                    EcefPosition* rotated) {
    double tau = norm(sat_at_emission - receiver) / CLIGHT;
    EcefPosition rot = sat_at_emission;
    for (int i = 0; i < 3; ++i) {
        const double theta = OMGE * tau;
        const double s = std::sin(theta), c = std::cos(theta);
        rot = {c * sat_at_emission.x + s * sat_at_emission.y,
               -s * sat_at_emission.x + c * sat_at_emission.y, sat_at_emission.z};
        tau = norm(rot - receiver) / CLIGHT;
    }
    if (rotated) *rotated = rot;
    return tau * CLIGHT;
}

namespace {

nlohmann::json eph_to_json(const KeplerEphemeris& e) {
    return {{"sat", to_string(e.sat)}, {"week", e.week},     {"toe", e.toe},
            {"sqrt_a", e.sqrt_a},      {"e", e.e},           {"i0", e.i0},
            {"omega0", e.omega0},      {"omega", e.omega},   {"m0", e.m0},
            {"delta_n", e.delta_n},    {"idot", e.idot},     {"omega_dot", e.omega_dot},
            {"cuc", e.cuc},            {"cus", e.cus},       {"crc", e.crc},
            {"crs", e.crs},            {"cic", e.cic},       {"cis", e.cis},
            {"toc", e.toc},            {"af0", e.af0},       {"af1", e.af1},
            {"af2", e.af2}};
}

KeplerEphemeris eph_from_json(const nlohmann::json& j) {
    KeplerEphemeris e;
    e.sat = sat_from_string(j.at("sat").get<std::string>());
    e.week = j.at("week").get<int>();
    e.toe = j.at("toe").get<double>();
    e.sqrt_a = j.at("sqrt_a").get<double>();
    e.e = j.at("e").get<double>();
    e.i0 = j.at("i0").get<double>();
    e.omega0 = j.at("omega0").get<double>();
    e.omega = j.at("omega").get<double>();
    e.m0 = j.at("m0").get<double>();
    e.delta_n = j.at("delta_n").get<double>();
    e.idot = j.at("idot").get<double>();
    e.omega_dot = j.at("omega_dot").get<double>();
    e.cuc = j.at("cuc").get<double>();
    e.cus = j.at("cus").get<double>();
    e.crc = j.at("crc").get<double>();
    e.crs = j.at("crs").get<double>();
    e.cic = j.at("cic").get<double>();
    e.cis = j.at("cis").get<double>();
    e.toc = j.at("toc").get<double>();
    e.af0 = j.at("af0").get<double>();
    e.af1 = j.at("af1").get<double>();
    e.af2 = j.at("af2").get<double>();
    return e;
}

} // namespace

std::string ephemerides_to_json(const std::vector<KeplerEphemeris>& ephs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : ephs) arr.push_back(eph_to_json(e));
    return arr.dump(2);
}

std::vector<KeplerEphemeris> ephemerides_from_json(const std::string& text) {
    const auto arr = nlohmann::json::parse(text);
    std::vector<KeplerEphemeris> out;
    for (const auto& j : arr) out.push_back(eph_from_json(j));
    return out;
}

EphemerisSet read_ephemeris_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open ephemeris file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    EphemerisSet set;
    for (auto& e : ephemerides_from_json(ss.str())) set[e.sat] = e;
    return set;
}

void write_ephemeris_json(const std::string& path, const std::vector<KeplerEphemeris>& ephs) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write ephemeris file: " + path);
    out << ephemerides_to_json(ephs) << '\n';
}

} // namespace rtkpipe
