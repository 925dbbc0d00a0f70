#ifndef RTKPIPE_COMMON_HPP
#define RTKPIPE_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace rtkpipe {

/* physical constants */
inline constexpr double CLIGHT = 299792458.0;       /* speed of light (m/s) */
inline constexpr double OMGE = 7.2921151467e-5;     /* earth angular velocity (rad/s) */
inline constexpr double GM_EARTH = 3.986005e14;     /* earth gravitational constant (m^3/s^2) */

/* carrier frequencies (Hz) */
inline constexpr double FREQ_L1 = 1575.42e6;        /* GPS L1 / Galileo E1 */
inline constexpr double FREQ_B1 = 1561.098e6;       /* BeiDou B1I */

/* time */
inline constexpr double WEEK_SECONDS = 604800.0;
inline constexpr std::int64_t WEEK_NANOS = 604800000000000LL;
inline constexpr std::int64_t DAY_NANOS = 86400000000000LL;
inline constexpr double BDS_GPS_TIME_OFFSET = 14.0; /* BDT = GPS time - 14 s */

inline constexpr double PI = 3.141592653589793238462643383279502884;

inline double deg2rad(double deg) { return deg * PI / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / PI; }

/// GPS time as week number plus seconds of week.
struct GpsTime {
    int week = 0;
    double tow = 0.0;

    GpsTime() = default;
    GpsTime(int w, double t) : week(w), tow(t) { normalize(); }

    void normalize() {
        while (tow >= WEEK_SECONDS) { tow -= WEEK_SECONDS; ++week; }
        while (tow < 0.0) { tow += WEEK_SECONDS; --week; }
    }
};

/// Seconds from b to a, week rollover included.
inline double operator-(const GpsTime& a, const GpsTime& b) {
    return (a.week - b.week) * WEEK_SECONDS + (a.tow - b.tow);
}

inline GpsTime operator+(const GpsTime& t, double seconds) {
    return GpsTime(t.week, t.tow + seconds);
}

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace rtkpipe

#endif
