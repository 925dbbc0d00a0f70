#ifndef RTKPIPE_OBS_HPP
#define RTKPIPE_OBS_HPP

#include <compare>
#include <optional>
#include <string>
#include <vector>

#include "rtkpipe/common.hpp"

namespace rtkpipe {

enum class Constellation { GPS, GLONASS, GALILEO, BEIDOU };

char constellation_letter(Constellation c);
Constellation constellation_from_letter(char letter);
int max_prn(Constellation c);

/// Satellite identifier: constellation plus PRN within its valid range
/// (GPS 1-32, GLONASS 1-24, Galileo 1-36, BeiDou 1-63).
struct SatId {
    Constellation constellation = Constellation::GPS;
    int prn = 1;

    auto operator<=>(const SatId&) const = default;
};

bool valid(const SatId& sat);
std::string to_string(const SatId& sat);        /* "G05", "C23", ... */
SatId sat_from_string(const std::string& name); /* throws Error on bad name */

enum class SignalBand { L1, B1 };

double frequency(SignalBand band);
double wavelength(SignalBand band);
std::string to_string(SignalBand band);
SignalBand band_from_string(const std::string& name);
bool band_valid_for(Constellation c, SignalBand band);
SignalBand default_band(Constellation c);

/* RawMeasurement.state_flags bits */
namespace state_flag {
inline constexpr unsigned CODE_LOCK = 0x01;
inline constexpr unsigned TOW_DECODED = 0x02;
inline constexpr unsigned ADR_VALID = 0x04;
inline constexpr unsigned ADR_RESET = 0x08;
inline constexpr unsigned HALF_CYCLE_RESOLVED = 0x10;
} // namespace state_flag

/// One smartphone-style raw measurement. The receiver clock reading is
/// time_nanos - (full_bias_nanos + bias_nanos) + time_offset_nanos; the
/// satellite transmit time of week is carried as integer nanoseconds plus a
/// sub-nanosecond fraction so pseudoranges reconstruct to well below 1e-6 m
/// (a single ns already quantizes at ~0.3 m).
struct RawMeasurement {
    SatId sat;
    SignalBand band = SignalBand::L1;
    std::int64_t time_nanos = 0;
    std::int64_t full_bias_nanos = 0;
    double bias_nanos = 0.0;
    double time_offset_nanos = 0.0;
    std::int64_t received_sv_time_nanos = 0;
    double received_sv_time_frac_nanos = 0.0;
    unsigned state_flags = 0;
    double pseudorange_rate = 0.0;        /* m/s, positive away from receiver */
    double accumulated_delta_range = 0.0; /* m */
    double cn0 = 0.0;                     /* dB-Hz */
};

struct Observation {
    SatId sat;
    SignalBand band = SignalBand::L1;
    double pseudorange = 0.0;             /* m */
    std::optional<double> carrier_phase;  /* cycles */
    std::optional<double> doppler;        /* Hz */
    double cn0 = 0.0;                     /* dB-Hz */
    bool loss_of_lock = false;
};

struct Epoch {
    GpsTime time;
    std::vector<Observation> observations;

    const Observation* find(const SatId& sat, SignalBand band) const;
};

/* pseudorange plausibility window (m) */
inline constexpr double PSEUDORANGE_MIN = 1e6;
inline constexpr double PSEUDORANGE_MAX = 5e7;

/// Reconstructs an Observation from raw measurement fields. Returns nullopt
/// (with a reason, when requested) for unusable measurements: missing code
/// lock / TOW decode, or an implausible resulting range.
std::optional<Observation> derive_pseudorange(const RawMeasurement& raw,
                                              std::string* reject_reason = nullptr);

/// Epoch assembly: one observation per usable raw, duplicates per (sat, band)
/// resolved by highest C/N0. Throws Error when nothing is usable.
Epoch build_epoch(const std::vector<RawMeasurement>& raws, int week);

/* observation JSONL: one epoch per line,
 * {"week":..,"tow":..,"obs":[{"sat":"G05","band":"L1","pr":..,"cp":..,"dop":..,"cn0":..,"llock":..}]} */
std::string epoch_to_json(const Epoch& epoch);
Epoch epoch_from_json(const std::string& line);
std::vector<Epoch> read_obs_jsonl(const std::string& path);
void write_obs_jsonl(const std::string& path, const std::vector<Epoch>& epochs);

} // namespace rtkpipe

#endif
