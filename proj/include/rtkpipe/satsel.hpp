#ifndef RTKPIPE_SATSEL_HPP
#define RTKPIPE_SATSEL_HPP

#include <optional>
#include <span>
#include <vector>

#include "rtkpipe/ephemeris.hpp"
#include "rtkpipe/geodesy.hpp"
#include "rtkpipe/obs.hpp"

namespace rtkpipe {

struct SatGeometry {
    SatId sat;
    EcefPosition position;
    double elevation_deg = 0.0;
    double azimuth_deg = 0.0;
    double cn0 = 0.0;
};

/// Selection policy. The 30 degree default mask reflects the observed
/// noise-vs-elevation behaviour of smartphone measurements; more than 8
/// satellites stops improving the geometry.
struct SelectionConfig {
    double elevation_mask_deg = 30.0;
    std::optional<int> max_satellites = 8;
    std::optional<double> min_cn0;
};

struct Selection {
    std::vector<SatGeometry> satellites;
    bool degraded = false; /* fewer than 4 survivors */
};

/// Retains satellites at or above the elevation mask (and C/N0 floor when
/// configured), input order preserved. Fewer than 4 survivors only sets the
/// degraded flag; the solver decides what to do.
Selection filter_by_elevation(std::span<const SatGeometry> geoms, const SelectionConfig& config);

/// Caps the selection at max_n satellites: highest elevation first, ties by
/// descending C/N0 then ascending (constellation, prn).
std::vector<SatGeometry> cap_best_subset(std::span<const SatGeometry> selected, int max_n);

/// Full selection: elevation/C/N0 mask, then best-subset cap.
Selection select_satellites(std::span<const SatGeometry> geoms, const SelectionConfig& config);

/// Geometric dilution of precision; rows are [-unit LOS (ENU), 1].
/// Returns +inf for degenerate geometry (singular normal matrix).
double gdop(const EcefPosition& receiver, std::span<const EcefPosition> satellites);

/// Horizontal DOP of the same geometry; +inf when degenerate.
double hdop(const EcefPosition& receiver, std::span<const EcefPosition> satellites);

/// Per-satellite geometry for an epoch, given ephemerides and a receiver
/// position estimate. Satellites without ephemeris are left out.
std::vector<SatGeometry> epoch_geometry(const Epoch& epoch, const EphemerisSet& ephs,
                                        const EcefPosition& receiver);

/// Pseudorange residuals against a known truth position, receiver clock
/// removed as the epoch mean. One entry per observation with ephemeris, in
/// epoch order.
struct ResidualEntry {
    SatId sat;
    double elevation_deg = 0.0;
    double azimuth_deg = 0.0;
    double residual = 0.0; /* m */
};
std::vector<ResidualEntry> pseudorange_residuals(const Epoch& epoch, const EphemerisSet& ephs,
                                                 const EcefPosition& truth);

} // namespace rtkpipe

#endif
