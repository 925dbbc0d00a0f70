#ifndef RTKPIPE_SOLVER_HPP
#define RTKPIPE_SOLVER_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtkpipe/ephemeris.hpp"
#include "rtkpipe/geodesy.hpp"
#include "rtkpipe/obs.hpp"

namespace rtkpipe {

enum class SolutionStatus { NO_FIX, SINGLE, DGNSS_FLOAT, FIXED };

std::string to_string(SolutionStatus s);
SolutionStatus status_from_string(const std::string& s);

struct Solution {
    GpsTime time;
    EcefPosition position;
    GeodeticPosition geodetic;
    SolutionStatus status = SolutionStatus::NO_FIX;
    Eigen::Matrix3d cov_enu = Eigen::Matrix3d::Zero(); /* m^2 */
    int nsat = 0;
    double age_of_corrections = 0.0; /* s */
    double hdop = 0.0;
    double ratio = 0.0; /* ambiguity ratio-test value, diagnostic */
    /// Full state covariance trace after predict and ambiguity maintenance,
    /// before the measurement update; exposes reset transients.
    double predicted_covariance_trace = 0.0;
};

struct SolverConfig {
    double code_sigma = 3.0;    /* m */
    double phase_sigma = 0.003; /* m */
    /// m/sqrt(s) baseline random walk; 1.0 for kinematic rovers, 0 static.
    double process_noise_position = 1.0;
    enum class AmbiguityFix { off, rounding } ambiguity_fix = AmbiguityFix::rounding;
    double ratio_threshold = 3.0;
    double elevation_weight_exponent = 1.0; /* sigma scaled by 1/sin(el)^k */
};

struct AgeOfDataError : Error {
    using Error::Error;
};

/// Single point positioning: iterated least squares over position plus one
/// clock bias per constellation, elevation-weighted, earth-rotation and
/// satellite clock corrections applied. NO_FIX when underdetermined or
/// diverged.
Solution spp_solve(const Epoch& epoch, const EphemerisSet& ephs,
                   const SolverConfig& config = {});

/// One double-differenced observation (code in meters, phase in cycles).
struct DdObservation {
    SatId sat;
    SignalBand band = SignalBand::L1;
    double code = 0.0;
    std::optional<double> phase;
};

/// Between-receiver, between-satellite differences for every common
/// (sat, band) against the reference satellite. Throws Error when the
/// reference is not common, AgeOfDataError when epoch times differ > 0.1 s.
std::vector<DdObservation> double_difference(const Epoch& base_epoch, const Epoch& rover_epoch,
                                             const SatId& reference);

using AmbiguityKey = std::pair<SatId, SignalBand>;

/// Float filter state: ECEF baseline plus DD ambiguities relative to the
/// per-constellation reference satellite (which carries no state).
struct RtkState {
    Eigen::Vector3d baseline = Eigen::Vector3d::Zero(); /* rover - base, m */
    std::vector<AmbiguityKey> ambiguity_keys;           /* state order after the baseline */
    Eigen::VectorXd ambiguities;                        /* cycles, aligned with keys */
    Eigen::MatrixXd covariance;                         /* (3+n) x (3+n) */
    std::map<Constellation, SatId> reference_satellite;
    GpsTime last_epoch;
    bool initialized = false;
};

/// Double-difference RTK session against a fixed, known base position.
/// Single-owner; one session per rover stream.
class RtkSession {
public:
    RtkSession(const EcefPosition& base_position, const SolverConfig& config = {});

    /// EKF predict + iterated measurement update with DD code and phase.
    /// Epochs must match within 0.1 s (AgeOfDataError otherwise).
    Solution update(const Epoch& base_epoch, const Epoch& rover_epoch, const EphemerisSet& ephs);

    const RtkState& state() const { return state_; }
    const EcefPosition& base_position() const { return base_position_; }

    /// Lossless reference switch: linear transform of the ambiguity block,
    /// no information gained or lost. The new reference must carry a state.
    void repivot(Constellation c, const SatId& new_reference);

private:
    Solution coast(const GpsTime& t, double age);
    void remove_ambiguities(const std::vector<std::size_t>& drop);
    void pivot_reference(Constellation c, const SatId& new_ref, bool old_ref_present);

    EcefPosition base_position_;
    SolverConfig config_;
    RtkState state_;
    GpsTime last_measurement_;
    /// Ambiguities survive short selection gaps (the carrier kept lock);
    /// only loss of lock or a long absence discards them.
    std::map<AmbiguityKey, GpsTime> last_seen_;
};

/// NMEA GGA sentence for a solution (empty string for NO_FIX).
/// Quality: 1 single, 5 float, 4 fixed. Timestamps carry GPS time of day.
std::string solution_to_nmea(const Solution& s);

/* solution JSONL: {"week","tow","lat","lon","h","status","nsat","cov_enu":[9],...} */
std::string solution_to_json(const Solution& s);
Solution solution_from_json(const std::string& line);
std::vector<Solution> read_solution_jsonl(const std::string& path);
void write_solution_jsonl(const std::string& path, const std::vector<Solution>& sols);

} // namespace rtkpipe

#endif
