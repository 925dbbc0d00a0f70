#include "rtkpipe/geodesy.hpp"

namespace rtkpipe {

EcefPosition geodetic_to_ecef(const GeodeticPosition& p) {
    const double lat = deg2rad(p.lat_deg);
    const double lon = deg2rad(p.lon_deg);
    const double sinp = std::sin(lat), cosp = std::cos(lat);
    const double n = WGS84_A / std::sqrt(1.0 - WGS84_E2 * sinp * sinp);
    return {(n + p.height) * cosp * std::cos(lon),
            (n + p.height) * cosp * std::sin(lon),
            (n * (1.0 - WGS84_E2) + p.height) * sinp};
}

GeodeticPosition ecef_to_geodetic(const EcefPosition& p) {
    const double r = norm(p);
    if (r < 1.0) throw Error("ecef_to_geodetic: position degenerate (near geocenter)");

    const double rho = std::hypot(p.x, p.y);
    const double lon = rho > 0.0 ? std::atan2(p.y, p.x) : 0.0;

    if (rho < 1e-9) {
        /* pole: latitude is exactly +-90, height along minor axis */
        return {p.z >= 0.0 ? 90.0 : -90.0, lon == 0.0 ? 0.0 : rad2deg(lon),
                std::fabs(p.z) - WGS84_B};
    }

    double lat = std::atan2(p.z, rho * (1.0 - WGS84_E2));
    double n = WGS84_A;
    bool converged = false;
    for (int i = 0; i < 20; ++i) {
        const double sinp = std::sin(lat);
        n = WGS84_A / std::sqrt(1.0 - WGS84_E2 * sinp * sinp);
        const double h = rho / std::cos(lat) - n;
        const double next = std::atan2(p.z, rho * (1.0 - WGS84_E2 * n / (n + h)));
        const double dlat = std::fabs(next - lat);
        lat = next;
        if (dlat < 1e-12) { converged = true; break; }
    }
    if (!converged) throw Error("ecef_to_geodetic: no convergence (degenerate input)");

    const double h = rho / std::cos(lat) - n;
    return {rad2deg(lat), rad2deg(lon), h};
}

namespace {

/* rows of the ECEF->ENU rotation at geodetic origin */
struct EnuBasis {
    double e[3], n[3], u[3];
};

EnuBasis enu_basis(const GeodeticPosition& origin) {
    const double lat = deg2rad(origin.lat_deg), lon = deg2rad(origin.lon_deg);
    const double sl = std::sin(lat), cl = std::cos(lat);
    const double so = std::sin(lon), co = std::cos(lon);
    return {{-so, co, 0.0},
            {-sl * co, -sl * so, cl},
            {cl * co, cl * so, sl}};
}

} // namespace

EnuVector ecef_to_enu(const EcefPosition& point, const GeodeticPosition& origin) {
    const EcefPosition d = point - geodetic_to_ecef(origin);
    const EnuBasis b = enu_basis(origin);
    return {b.e[0] * d.x + b.e[1] * d.y + b.e[2] * d.z,
            b.n[0] * d.x + b.n[1] * d.y + b.n[2] * d.z,
            b.u[0] * d.x + b.u[1] * d.y + b.u[2] * d.z};
}

EcefPosition enu_to_ecef(const EnuVector& v, const GeodeticPosition& origin) {
    const EnuBasis b = enu_basis(origin);
    const EcefPosition o = geodetic_to_ecef(origin);
    return {o.x + b.e[0] * v.east + b.n[0] * v.north + b.u[0] * v.up,
            o.y + b.e[1] * v.east + b.n[1] * v.north + b.u[1] * v.up,
            o.z + b.e[2] * v.east + b.n[2] * v.north + b.u[2] * v.up};
}

std::array<double, 9> enu_rotation(const GeodeticPosition& origin) {
    const EnuBasis b = enu_basis(origin);
    return {b.e[0], b.e[1], b.e[2], b.n[0], b.n[1], b.n[2], b.u[0], b.u[1], b.u[2]};
}

ElevationAzimuth elevation_azimuth(const EcefPosition& receiver, const EcefPosition& satellite) {
    const EcefPosition los = satellite - receiver;
    if (norm(los) <= 1.0) throw Error("elevation_azimuth: satellite too close to receiver");

    const EnuVector enu = ecef_to_enu(satellite, ecef_to_geodetic(receiver));
    const double horiz = std::hypot(enu.east, enu.north);
    const double el = rad2deg(std::atan2(enu.up, horiz));
    if (horiz < 1e-12 * std::max(1.0, std::fabs(enu.up)))
        return {enu.up >= 0.0 ? 90.0 : -90.0, 0.0};

    double az = rad2deg(std::atan2(enu.east, enu.north));
    if (az < 0.0) az += 360.0;
    if (az >= 360.0) az -= 360.0;
    return {el, az};
}

} // namespace rtkpipe
