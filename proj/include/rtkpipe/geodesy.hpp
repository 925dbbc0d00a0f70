#ifndef RTKPIPE_GEODESY_HPP
#define RTKPIPE_GEODESY_HPP

#include <array>

#include "rtkpipe/common.hpp"

namespace rtkpipe {

/* WGS-84 ellipsoid */
inline constexpr double WGS84_A = 6378137.0;             /* semi-major axis (m) */
inline constexpr double WGS84_F = 1.0 / 298.257223563;   /* flattening */
inline constexpr double WGS84_B = WGS84_A * (1.0 - WGS84_F);
inline constexpr double WGS84_E2 = WGS84_F * (2.0 - WGS84_F); /* first eccentricity^2 */

struct EcefPosition {
    double x = 0.0, y = 0.0, z = 0.0; /* m */
};

struct GeodeticPosition {
    double lat_deg = 0.0;  /* [-90, +90] */
    double lon_deg = 0.0;  /* (-180, +180] */
    double height = 0.0;   /* m above ellipsoid */
};

struct EnuVector {
    double east = 0.0, north = 0.0, up = 0.0; /* m */
};

struct ElevationAzimuth {
    double elevation_deg = 0.0; /* [-90, +90] above local horizon */
    double azimuth_deg = 0.0;   /* [0, 360) clockwise from north */
};

inline EcefPosition operator-(const EcefPosition& a, const EcefPosition& b) {
    return {a.x - b.x, a.y - b.y, a.z - b.z};
}
inline EcefPosition operator+(const EcefPosition& a, const EcefPosition& b) {
    return {a.x + b.x, a.y + b.y, a.z + b.z};
}
inline double norm(const EcefPosition& p) {
    return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
}
inline double norm(const EnuVector& v) {
    return std::sqrt(v.east * v.east + v.north * v.north + v.up * v.up);
}

EcefPosition geodetic_to_ecef(const GeodeticPosition& p);

/// Inverse ellipsoid mapping, iterative latitude refinement to |dlat| < 1e-12 rad.
/// Throws Error for degenerate input near the geocenter.
GeodeticPosition ecef_to_geodetic(const EcefPosition& p);

/// Rotates (point - ecef(origin)) into the local east/north/up frame at origin.
EnuVector ecef_to_enu(const EcefPosition& point, const GeodeticPosition& origin);

/// Inverse of ecef_to_enu: origin plus a local offset, back in ECEF.
EcefPosition enu_to_ecef(const EnuVector& v, const GeodeticPosition& origin);

/// Line-of-sight elevation/azimuth of satellite as seen from receiver.
/// Azimuth at exact zenith is 0 by convention.
ElevationAzimuth elevation_azimuth(const EcefPosition& receiver, const EcefPosition& satellite);

/// Row-major rotation taking ECEF vector increments into ENU components at
/// origin (rows east, north, up).
std::array<double, 9> enu_rotation(const GeodeticPosition& origin);

} // namespace rtkpipe

#endif
