#include "rtkpipe/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace rtkpipe {

std::vector<TruthPoint> read_truth_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open truth file: " + path);
    std::vector<TruthPoint> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        TruthPoint p;
        p.time = GpsTime(j.at("week").get<int>(), j.at("tow").get<double>());
        p.position = {j.at("lat").get<double>(), j.at("lon").get<double>(),
                      j.at("h").get<double>()};
        out.push_back(p);
    }
    return out;
}

ErrorSeries error_series(const std::vector<Solution>& solutions,
                         const std::vector<TruthPoint>& truth) {
    ErrorSeries series;
    for (const auto& s : solutions) {
        const TruthPoint* match = nullptr;
        for (const auto& t : truth) {
            if (std::fabs(s.time - t.time) <= 0.05) {
                match = &t;
                break;
            }
        }
        if (!match) {
            ++series.skipped;
            continue;
        }
        const EnuVector e = ecef_to_enu(s.position, match->position);
        series.points.push_back({s.time, e.east, e.north, e.up, s.status});
    }
    return series;
}

RmseEntry rmse(const ErrorSeries& series, const std::string& label) {
    if (series.points.empty()) throw Error("rmse: empty error series");

    RmseEntry entry;
    entry.label = label;
    entry.epochs = static_cast<int>(series.points.size());

    double se = 0.0, sn = 0.0, su = 0.0;
    int fixed = 0;
    for (const auto& p : series.points) {
        se += p.east * p.east;
        sn += p.north * p.north;
        su += p.up * p.up;
        if (p.status == SolutionStatus::FIXED) ++fixed;
    }
    const auto n = static_cast<double>(series.points.size());
    entry.east_rmse = std::sqrt(se / n);
    entry.north_rmse = std::sqrt(sn / n);
    entry.up_rmse = std::sqrt(su / n);
    entry.fix_ratio = static_cast<double>(fixed) / n;

    /* post-convergence view: first epoch under 1 m horizontal error onward */
    std::size_t first = series.points.size();
    for (std::size_t i = 0; i < series.points.size(); ++i) {
        const auto& p = series.points[i];
        if (std::hypot(p.east, p.north) < 1.0) {
            first = i;
            break;
        }
    }
    if (first < series.points.size()) {
        double ce = 0.0, cn = 0.0;
        for (std::size_t i = first; i < series.points.size(); ++i) {
            ce += series.points[i].east * series.points[i].east;
            cn += series.points[i].north * series.points[i].north;
        }
        const auto m = static_cast<double>(series.points.size() - first);
        entry.converged_east_rmse = std::sqrt(ce / m);
        entry.converged_north_rmse = std::sqrt(cn / m);
        entry.converged_epochs = static_cast<int>(m);
    }
    return entry;
}

std::string format_report_table(const RmseReport& report) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-10s %14s %14s %12s %8s %8s\n", "Solution",
                  "East RMSE (m)", "North RMSE (m)", "Up RMSE (m)", "Epochs", "Fix (%)");
    out << line;
    out << std::string(72, '-') << '\n';
    for (const auto& e : report.entries) {
        std::snprintf(line, sizeof line, "%-10s %14.3f %14.3f %12.3f %8d %8.1f\n",
                      e.label.c_str(), e.east_rmse, e.north_rmse, e.up_rmse, e.epochs,
                      e.fix_ratio * 100.0);
        out << line;
    }

    bool any_converged = false;
    for (const auto& e : report.entries)
        if (e.converged_east_rmse) any_converged = true;
    if (any_converged) {
        out << "\nPost-convergence (first epoch < 1 m horizontal onward):\n";
        std::snprintf(line, sizeof line, "%-10s %14s %14s %8s\n", "Solution", "East RMSE (m)",
                      "North RMSE (m)", "Epochs");
        out << line;
        out << std::string(50, '-') << '\n';
        for (const auto& e : report.entries) {
            if (!e.converged_east_rmse) continue;
            std::snprintf(line, sizeof line, "%-10s %14.3f %14.3f %8d\n", e.label.c_str(),
                          *e.converged_east_rmse, *e.converged_north_rmse, e.converged_epochs);
            out << line;
        }
    }
    return out.str();
}

std::string format_report_csv(const RmseReport& report) {
    std::ostringstream out;
    out << "label,east_rmse_m,north_rmse_m,up_rmse_m,epochs,fix_ratio,"
           "converged_east_rmse_m,converged_north_rmse_m,converged_epochs\n";
    for (const auto& e : report.entries) {
        out << e.label << ',' << e.east_rmse << ',' << e.north_rmse << ',' << e.up_rmse << ','
            << e.epochs << ',' << e.fix_ratio << ',';
        if (e.converged_east_rmse)
            out << *e.converged_east_rmse << ',' << *e.converged_north_rmse << ','
                << e.converged_epochs;
        else
            out << ",,0";
        out << '\n';
    }
    return out.str();
}

std::optional<GgaFix> parse_nmea_gga(const std::string& line) {
    if (line.size() < 10 || line[0] != '$') return std::nullopt;
    const auto star = line.find('*');
    if (star == std::string::npos || star + 3 > line.size()) return std::nullopt;

    unsigned checksum = 0;
    for (std::size_t i = 1; i < star; ++i) checksum ^= static_cast<unsigned char>(line[i]);
    const std::string want = line.substr(star + 1, 2);
    char have[3];
    std::snprintf(have, sizeof have, "%02X", checksum & 0xFF);
    if (want != have) return std::nullopt;

    std::vector<std::string> fields;
    {
        std::string body = line.substr(1, star - 1);
        std::string cur;
        for (const char c : body) {
            if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        fields.push_back(cur);
    }
    if (fields.size() < 10) return std::nullopt;
    if (fields[0].size() != 5 || fields[0].substr(2) != "GGA") return std::nullopt;

    try {
        GgaFix fix;
        const std::string& t = fields[1];
        if (t.size() < 6) return std::nullopt;
        fix.seconds_of_day = std::stod(t.substr(0, 2)) * 3600.0 +
                             std::stod(t.substr(2, 2)) * 60.0 + std::stod(t.substr(4));

        const std::string& lat = fields[2];
        if (lat.size() < 4 || (fields[3] != "N" && fields[3] != "S")) return std::nullopt;
        fix.position.lat_deg = std::stod(lat.substr(0, 2)) + std::stod(lat.substr(2)) / 60.0;
        if (fields[3] == "S") fix.position.lat_deg = -fix.position.lat_deg;

        const std::string& lon = fields[4];
        if (lon.size() < 5 || (fields[5] != "E" && fields[5] != "W")) return std::nullopt;
        fix.position.lon_deg = std::stod(lon.substr(0, 3)) + std::stod(lon.substr(3)) / 60.0;
        if (fields[5] == "W") fix.position.lon_deg = -fix.position.lon_deg;

        fix.quality = std::stoi(fields[6]);
        fix.nsat = std::stoi(fields[7]);
        if (fields.size() > 9 && !fields[9].empty()) fix.position.height = std::stod(fields[9]);
        return fix;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

} // namespace rtkpipe
