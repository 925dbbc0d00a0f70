#include "rtkpipe/satsel.hpp"

#include <algorithm>
#include <limits>

#include <Eigen/Dense>

namespace rtkpipe {

Selection filter_by_elevation(std::span<const SatGeometry> geoms, const SelectionConfig& config) {
    Selection sel;
    for (const auto& g : geoms) {
        if (g.elevation_deg < config.elevation_mask_deg) continue;
        if (config.min_cn0 && g.cn0 < *config.min_cn0) continue;
        sel.satellites.push_back(g);
    }
    sel.degraded = sel.satellites.size() < 4;
    return sel;
}

std::vector<SatGeometry> cap_best_subset(std::span<const SatGeometry> selected, int max_n) {
    std::vector<SatGeometry> out(selected.begin(), selected.end());
    if (max_n <= 0 || out.size() <= static_cast<std::size_t>(max_n)) return out;

    std::stable_sort(out.begin(), out.end(), [](const SatGeometry& a, const SatGeometry& b) {
        if (a.elevation_deg != b.elevation_deg) return a.elevation_deg > b.elevation_deg;
        if (a.cn0 != b.cn0) return a.cn0 > b.cn0;
        return a.sat < b.sat;
    });
    out.resize(static_cast<std::size_t>(max_n));
    return out;
}

Selection select_satellites(std::span<const SatGeometry> geoms, const SelectionConfig& config) {
    Selection sel = filter_by_elevation(geoms, config);
    if (config.max_satellites)
        sel.satellites = cap_best_subset(sel.satellites, *config.max_satellites);
    sel.degraded = sel.satellites.size() < 4;
    return sel;
}

namespace {

Eigen::MatrixXd geometry_matrix(const EcefPosition& receiver,
                                std::span<const EcefPosition> satellites) {
    const GeodeticPosition origin = ecef_to_geodetic(receiver);
    Eigen::MatrixXd h(satellites.size(), 4);
    for (std::size_t i = 0; i < satellites.size(); ++i) {
        const EnuVector enu = ecef_to_enu(satellites[i], origin);
        const double r = norm(enu);
        h(static_cast<Eigen::Index>(i), 0) = -enu.east / r;
        h(static_cast<Eigen::Index>(i), 1) = -enu.north / r;
        h(static_cast<Eigen::Index>(i), 2) = -enu.up / r;
        h(static_cast<Eigen::Index>(i), 3) = 1.0;
    }
    return h;
}

Eigen::Matrix4d dop_matrix(const EcefPosition& receiver,
                           std::span<const EcefPosition> satellites, bool* ok) {
    *ok = false;
    if (satellites.size() < 4) return Eigen::Matrix4d::Zero();

    const Eigen::MatrixXd h = geometry_matrix(receiver, satellites);
    const Eigen::Matrix4d nrm = h.transpose() * h;
    Eigen::FullPivLU<Eigen::Matrix4d> lu(nrm);
    if (!lu.isInvertible()) return Eigen::Matrix4d::Zero();
    *ok = true;
    return lu.inverse();
}

} // namespace

double gdop(const EcefPosition& receiver, std::span<const EcefPosition> satellites) {
    bool ok = false;
    const Eigen::Matrix4d q = dop_matrix(receiver, satellites, &ok);
    if (!ok) return std::numeric_limits<double>::infinity();
    return std::sqrt(q.trace());
}

double hdop(const EcefPosition& receiver, std::span<const EcefPosition> satellites) {
    bool ok = false;
    const Eigen::Matrix4d q = dop_matrix(receiver, satellites, &ok);
    if (!ok) return std::numeric_limits<double>::infinity();
    return std::sqrt(q(0, 0) + q(1, 1));
}

std::vector<SatGeometry> epoch_geometry(const Epoch& epoch, const EphemerisSet& ephs,
                                        const EcefPosition& receiver) {
    std::vector<SatGeometry> out;
    for (const auto& o : epoch.observations) {
        const auto it = ephs.find(o.sat);
        if (it == ephs.end()) continue;
        const SatState st = emission_state(it->second, epoch.time, o.pseudorange);
        EcefPosition rotated;
        sagnac_range(st.position, receiver, &rotated);
        const ElevationAzimuth ea = elevation_azimuth(receiver, rotated);
        out.push_back({o.sat, st.position, ea.elevation_deg, ea.azimuth_deg, o.cn0});
    }
    return out;
}

std::vector<ResidualEntry> pseudorange_residuals(const Epoch& epoch, const EphemerisSet& ephs,
                                                 const EcefPosition& truth) {
    struct Work {
        SatId sat;
        ElevationAzimuth ea;
        double offset; /* pr - range + c*satclk */
    };
    std::vector<Work> work;
    for (const auto& o : epoch.observations) {
        const auto it = ephs.find(o.sat);
        if (it == ephs.end()) continue;
        const SatState st = emission_state(it->second, epoch.time, o.pseudorange);
        EcefPosition rotated;
        const double range = sagnac_range(st.position, truth, &rotated);
        work.push_back({o.sat, elevation_azimuth(truth, rotated),
                        o.pseudorange - range + CLIGHT * st.clock_bias});
    }
    if (work.empty()) throw Error("pseudorange_residuals: no observations with ephemeris");

    double clock = 0.0;
    for (const auto& w : work) clock += w.offset;
    clock /= static_cast<double>(work.size());

    std::vector<ResidualEntry> out;
    out.reserve(work.size());
    for (const auto& w : work)
        out.push_back({w.sat, w.ea.elevation_deg, w.ea.azimuth_deg, w.offset - clock});
    return out;
}

} // namespace rtkpipe
