#ifndef RTKPIPE_EPHEMERIS_HPP
#define RTKPIPE_EPHEMERIS_HPP

#include <map>
#include <string>
#include <vector>

#include "rtkpipe/geodesy.hpp"
#include "rtkpipe/obs.hpp"

namespace rtkpipe {

/// Broadcast Keplerian ephemeris. One model serves all constellations here
/// (GPS gravitational and earth-rotation constants); GLONASS satellites are
/// carried as fitted Keplerian elements.
struct KeplerEphemeris {
    SatId sat;
    int week = 0;        /* GPS week of toe/toc */
    double toe = 0.0;    /* reference time of ephemeris, s of week */
    double sqrt_a = 0.0; /* sqrt(semi-major axis), sqrt(m) */
    double e = 0.0;      /* eccentricity */
    double i0 = 0.0;     /* inclination at toe, rad */
    double omega0 = 0.0; /* right ascension at week epoch, rad */
    double omega = 0.0;  /* argument of perigee, rad */
    double m0 = 0.0;     /* mean anomaly at toe, rad */
    double delta_n = 0.0;   /* mean motion correction, rad/s */
    double idot = 0.0;      /* inclination rate, rad/s */
    double omega_dot = 0.0; /* right ascension rate, rad/s */
    double cuc = 0.0, cus = 0.0; /* argument-of-latitude harmonics, rad */
    double crc = 0.0, crs = 0.0; /* radius harmonics, m */
    double cic = 0.0, cis = 0.0; /* inclination harmonics, rad */
    double toc = 0.0; /* clock reference time, s of week */
    double af0 = 0.0; /* s */
    double af1 = 0.0; /* s/s */
    double af2 = 0.0; /* s/s^2 */
};

struct SatState {
    EcefPosition position;
    double clock_bias = 0.0; /* s, relativistic term included */
};

inline constexpr double EPHEMERIS_VALIDITY_S = 7200.0;

struct StaleEphemerisError : Error {
    using Error::Error;
};

/// Solves Kepler's equation M = E - e*sin(E) to |residual| < 1e-12.
/// Throws Error if Newton iteration fails to converge within 30 steps.
double kepler_solve(double mean_anomaly, double eccentricity);

/// Satellite ECEF position and clock bias at GPS time t.
/// Throws StaleEphemerisError outside the +-2 h validity window around toe.
SatState sat_state(const KeplerEphemeris& eph, const GpsTime& t);

/// Position plus velocity by symmetric differencing (Doppler synthesis only).
void sat_state_velocity(const KeplerEphemeris& eph, const GpsTime& t, SatState* state,
                        double velocity[3]);

/// Satellite state at signal emission for a pseudorange measured at
/// receive_time (receiver clock reading): transmit time from pr/c, broadcast
/// clock correction applied.
SatState emission_state(const KeplerEphemeris& eph, const GpsTime& receive_time,
                        double pseudorange);

/// Geometric range with earth-rotation (signal transit) correction: the
/// satellite position is rotated by omega_e * tau into the reception-epoch
/// frame. Optionally returns the rotated satellite position.
double sagnac_range(const EcefPosition& sat_at_emission, const EcefPosition& receiver,
                    EcefPosition* rotated = nullptr);

using EphemerisSet = std::map<SatId, KeplerEphemeris>;

/* ephemeris JSON: array of records with the field names above, sat as "G05" */
std::string ephemerides_to_json(const std::vector<KeplerEphemeris>& ephs);
std::vector<KeplerEphemeris> ephemerides_from_json(const std::string& text);
EphemerisSet read_ephemeris_json(const std::string& path);
void write_ephemeris_json(const std::string& path, const std::vector<KeplerEphemeris>& ephs);

} // namespace rtkpipe

#endif
