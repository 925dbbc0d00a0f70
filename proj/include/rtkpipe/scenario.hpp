#ifndef RTKPIPE_SCENARIO_HPP
#define RTKPIPE_SCENARIO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rtkpipe/ephemeris.hpp"
#include "rtkpipe/geodesy.hpp"
#include "rtkpipe/obs.hpp"

namespace rtkpipe {

/// Deterministic, seedable, platform-independent generator (splitmix64 with
/// Box-Muller gaussians). Noise streams are keyed so identical scenarios give
/// bit-identical output regardless of evaluation order.
class DeterministicRng {
public:
    explicit DeterministicRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    double uniform();  /* [0, 1) */
    double gaussian(); /* standard normal */

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

private:
    std::uint64_t state_;
};

enum class Receiver { BASE, ROVER };

struct Waypoint {
    double t = 0.0; /* s from scenario start */
    GeodeticPosition position;
};

/// Measurement error models. Atmospheric delays are zenith values mapped by
/// 1/sin(el); with decorrelation 0 the mapped delay is identical at both
/// receivers (evaluated at the base's elevation) so double differences cancel
/// it exactly.
struct ErrorModel {
    double iono_zenith = 0.0;          /* m */
    double tropo_zenith = 0.0;         /* m */
    double decorrelation = 0.0;        /* fraction of atmosphere made receiver-independent */
    double sat_clock_sigma = 0.0;      /* s; per-satellite constant bias, seeded draw */
    double receiver_clock_walk = 0.0;  /* s/sqrt(s) random walk per receiver */
    double code_noise_zenith = 0.0;    /* m, inflated by 1/sin(el) */
    double phase_noise_zenith = 0.0;   /* m, inflated by 1/sin(el) */
    double multipath_bias = 0.0;       /* m, added below multipath_below_deg */
    double multipath_below_deg = 15.0;
};

struct DropoutWindow {
    double start = 0.0, end = 0.0;  /* s from scenario start */
    std::optional<SatId> sat;       /* nullopt: all satellites */
};

struct Scenario {
    std::uint64_t seed = 1;
    double duration = 300.0; /* s */
    double rate = 1.0;       /* Hz, one of 1/5/10 */
    GpsTime start{2308, 259200.0};
    std::vector<KeplerEphemeris> constellation;
    GeodeticPosition base_truth;
    std::vector<Waypoint> rover_path; /* single waypoint = static */
    ErrorModel errors;
    std::vector<DropoutWindow> dropouts; /* applied to the rover stream */
};

/// Fits a zero-eccentricity Keplerian ephemeris that places the satellite at
/// the requested elevation/azimuth (seen from `site`) at time t0.
KeplerEphemeris fit_ephemeris(const SatId& sat, double elevation_deg, double azimuth_deg,
                              const GeodeticPosition& site, const GpsTime& t0, double toe_tow);

/// The built-in constellation: GPS L1 + BeiDou B1 spread over the sky above
/// the scenario base, including low-elevation satellites for masking studies.
std::vector<KeplerEphemeris> default_constellation(const GeodeticPosition& site,
                                                   const GpsTime& t0, double toe_tow);

/// The stock scenario: static rover ~300 m from the base, 5 minutes at 1 Hz,
/// correlated atmosphere, smartphone-grade noise.
Scenario default_scenario(std::uint64_t seed = 42);

/* scenario text file (key = value lines, '#' comments) */
Scenario parse_scenario(const std::string& text);
Scenario read_scenario_file(const std::string& path);
std::string scenario_reference_text(); /* documented template of the format */

/// Validates invariants (duration, rate, visibility of >=5 satellites above
/// 10 deg from both receivers); throws Error listing violations.
void validate_scenario(const Scenario& scenario);

struct SimulatedEpoch {
    GpsTime time; /* true GPS receive time (receiver clock error excluded) */
    std::vector<RawMeasurement> raws;
    std::vector<double> model_pseudorange; /* per raw: the synthesized truth */
    std::vector<double> model_phase_m;     /* per raw: phase range incl. ambiguity */
};

struct SimulationOutput {
    Scenario scenario;
    std::vector<SimulatedEpoch> base;
    std::vector<SimulatedEpoch> rover;
};

/// Generates both receivers' raw streams. Pure function of the scenario.
SimulationOutput generate(const Scenario& scenario);

/// Ground-truth position at a time within the scenario (waypoint-interpolated
/// for a kinematic rover). Throws Error outside the covered span.
EcefPosition true_state(const Scenario& scenario, const GpsTime& time, Receiver receiver);

/* truth JSONL: {"week":..,"tow":..,"lat":..,"lon":..,"h":..} per epoch */
void write_truth_jsonl(const std::string& path, const Scenario& scenario);

} // namespace rtkpipe

#endif
