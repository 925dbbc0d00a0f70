#ifndef RTKPIPE_EVAL_HPP
#define RTKPIPE_EVAL_HPP

#include <optional>
#include <string>
#include <vector>

#include "rtkpipe/geodesy.hpp"
#include "rtkpipe/solver.hpp"

namespace rtkpipe {

struct TruthPoint {
    GpsTime time;
    GeodeticPosition position;
};

std::vector<TruthPoint> read_truth_jsonl(const std::string& path);

/// ENU error of each solution epoch against the matching truth point
/// (origin = truth). Times must match within 0.05 s; unmatched epochs are
/// skipped and counted.
struct ErrorPoint {
    GpsTime time;
    double east = 0.0, north = 0.0, up = 0.0; /* m */
    SolutionStatus status = SolutionStatus::NO_FIX;
};

struct ErrorSeries {
    std::vector<ErrorPoint> points;
    int skipped = 0; /* solutions without truth coverage */
};

ErrorSeries error_series(const std::vector<Solution>& solutions,
                         const std::vector<TruthPoint>& truth);

struct RmseEntry {
    std::string label;
    double east_rmse = 0.0, north_rmse = 0.0, up_rmse = 0.0; /* m */
    int epochs = 0;
    double fix_ratio = 0.0; /* fraction of FIXED epochs */
    /// Same statistics from the first epoch with horizontal error < 1 m on.
    std::optional<double> converged_east_rmse, converged_north_rmse;
    int converged_epochs = 0;
};

/// Per-axis sqrt(mean(err^2)). Throws Error on an empty series.
RmseEntry rmse(const ErrorSeries& series, const std::string& label);

struct RmseReport {
    std::vector<RmseEntry> entries;
};

std::string format_report_table(const RmseReport& report);
std::string format_report_csv(const RmseReport& report);

/// Parses a GGA sentence (any "$__GGA" talker); checksum verified.
/// Returns nullopt for rejected lines (bad checksum, malformed fields).
struct GgaFix {
    double seconds_of_day = 0.0;
    GeodeticPosition position;
    int quality = 0;
    int nsat = 0;
};
std::optional<GgaFix> parse_nmea_gga(const std::string& line);

} // namespace rtkpipe

#endif
