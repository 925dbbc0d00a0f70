#include "rtkpipe/solver.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "rtkpipe/satsel.hpp"

namespace rtkpipe {

std::string to_string(SolutionStatus s) {
    switch (s) {
        case SolutionStatus::NO_FIX: return "NOFIX";
        case SolutionStatus::SINGLE: return "SINGLE";
        case SolutionStatus::DGNSS_FLOAT: return "FLOAT";
        case SolutionStatus::FIXED: return "FIXED";
    }
    return "NOFIX";
}

SolutionStatus status_from_string(const std::string& s) {
    if (s == "SINGLE") return SolutionStatus::SINGLE;
    if (s == "FLOAT") return SolutionStatus::DGNSS_FLOAT;
    if (s == "FIXED") return SolutionStatus::FIXED;
    return SolutionStatus::NO_FIX;
}

namespace {

double weighted_sigma(double sigma0, double elevation_deg, double exponent) {
    const double s = std::sin(deg2rad(std::max(elevation_deg, 5.0)));
    return sigma0 / std::pow(s, exponent);
}

Eigen::Matrix3d enu_cov(const Eigen::Matrix3d& cov_ecef, const GeodeticPosition& origin) {
    const auto r = enu_rotation(origin);
    Eigen::Matrix3d rot;
    rot << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
    return rot * cov_ecef * rot.transpose();
}

} // namespace

/* ---- single point positioning -------------------------------------------- */

Solution spp_solve(const Epoch& epoch, const EphemerisSet& ephs, const SolverConfig& config) {
    Solution sol;
    sol.time = epoch.time;

    struct Item {
        const Observation* obs;
        SatState emission;
    };
    std::vector<Item> items;
    std::map<Constellation, int> sys_col;
    for (const auto& o : epoch.observations) {
        const auto it = ephs.find(o.sat);
        if (it == ephs.end()) continue;
        items.push_back({&o, emission_state(it->second, epoch.time, o.pseudorange)});
        sys_col.emplace(o.sat.constellation, 0);
    }

    const int nsys = static_cast<int>(sys_col.size());
    const int nx = 3 + nsys;
    const int n = static_cast<int>(items.size());
    if (n < 4 || n < nx) return sol; /* underdetermined: NO_FIX */

    int col = 3;
    for (auto& [c, idx] : sys_col) idx = col++;

    Eigen::VectorXd x = Eigen::VectorXd::Zero(nx);
    x.head<3>() << WGS84_A, 0.0, 0.0;

    Eigen::MatrixXd h(n, nx);
    Eigen::VectorXd v(n), w(n);
    std::vector<EcefPosition> rotated(items.size());

    bool converged = false;
    for (int iter = 0; iter < 10 && !converged; ++iter) {
        const EcefPosition est{x(0), x(1), x(2)};
        h.setZero();
        for (int i = 0; i < n; ++i) {
            const Item& it = items[static_cast<std::size_t>(i)];
            EcefPosition rot;
            const double range = sagnac_range(it.emission.position, est, &rot);
            rotated[static_cast<std::size_t>(i)] = rot;

            h(i, 0) = -(rot.x - est.x) / range;
            h(i, 1) = -(rot.y - est.y) / range;
            h(i, 2) = -(rot.z - est.z) / range;
            h(i, sys_col[it.obs->sat.constellation]) = 1.0;

            v(i) = it.obs->pseudorange -
                   (range + x(sys_col[it.obs->sat.constellation]) -
                    CLIGHT * it.emission.clock_bias);

            /* estimate is meaningless for the first couple of iterations */
            double sigma = config.code_sigma;
            if (iter >= 2)
                sigma = weighted_sigma(config.code_sigma,
                                       elevation_azimuth(est, rot).elevation_deg,
                                       config.elevation_weight_exponent);
            w(i) = 1.0 / (sigma * sigma);
        }

        const Eigen::MatrixXd hw = h.transpose() * w.asDiagonal();
        const Eigen::MatrixXd nrm = hw * h;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(nrm);
        if (ldlt.info() != Eigen::Success) return sol;
        const Eigen::VectorXd dx = ldlt.solve(hw * v);
        if (!dx.allFinite()) return sol;

        x += dx;
        if (iter >= 2 && dx.head<3>().norm() < 1e-4) converged = true;
    }
    if (!converged) return sol; /* diverged: NO_FIX */

    sol.position = {x(0), x(1), x(2)};
    sol.geodetic = ecef_to_geodetic(sol.position);
    sol.status = SolutionStatus::SINGLE;
    sol.nsat = n;

    const Eigen::MatrixXd cov =
        (h.transpose() * w.asDiagonal() * h).ldlt().solve(Eigen::MatrixXd::Identity(nx, nx));
    sol.cov_enu = enu_cov(cov.topLeftCorner<3, 3>(), sol.geodetic);
    sol.hdop = hdop(sol.position, rotated);
    return sol;
}

/* ---- double differences ---------------------------------------------------- */

std::vector<DdObservation> double_difference(const Epoch& base_epoch, const Epoch& rover_epoch,
                                             const SatId& reference) {
    if (std::fabs(rover_epoch.time - base_epoch.time) > 0.1)
        throw AgeOfDataError("double_difference: epoch times differ beyond 0.1 s");

    const SignalBand band = default_band(reference.constellation);
    const Observation* ref_rov = rover_epoch.find(reference, band);
    const Observation* ref_bas = base_epoch.find(reference, band);
    if (!ref_rov || !ref_bas)
        throw Error("double_difference: reference " + to_string(reference) + " not common");

    const double ref_code = ref_rov->pseudorange - ref_bas->pseudorange;
    std::optional<double> ref_phase;
    if (ref_rov->carrier_phase && ref_bas->carrier_phase)
        ref_phase = *ref_rov->carrier_phase - *ref_bas->carrier_phase;

    std::vector<DdObservation> out;
    for (const auto& o : rover_epoch.observations) {
        if (o.sat.constellation != reference.constellation || o.sat == reference) continue;
        const Observation* b = base_epoch.find(o.sat, o.band);
        if (!b) continue;

        DdObservation dd;
        dd.sat = o.sat;
        dd.band = o.band;
        dd.code = (o.pseudorange - b->pseudorange) - ref_code;
        if (o.carrier_phase && b->carrier_phase && ref_phase)
            dd.phase = (*o.carrier_phase - *b->carrier_phase) - *ref_phase;
        out.push_back(dd);
    }
    return out;
}

/* ---- RTK session ----------------------------------------------------------- */

namespace {

constexpr double FALLBACK_POSITION_VAR = 1e4; /* m^2, underdetermined first epoch */
constexpr double INITIAL_AMBIGUITY_VAR = 1e4; /* cycles^2 */
constexpr double COAST_LIMIT_S = 5.0;
constexpr double AMBIGUITY_RETENTION_S = 10.0;
constexpr double ROUNDING_GATE_CYCLES = 0.15;

struct SatWork {
    AmbiguityKey key;
    const Observation* rov = nullptr;
    const Observation* bas = nullptr;
    SatState rov_emission, bas_emission;
    EcefPosition rov_sat;       /* emission position rotated into the rover frame */
    EcefPosition rov_sat_rel;   /* rov_sat - base position */
    EcefPosition bas_sat_rel;   /* base-frame rotated emission position - base position */
    double elevation_deg = 0.0;
    bool is_ref = false;
    int state_index = -1; /* ambiguity slot, -1 for none */
};

double dot(const EcefPosition& a, const EcefPosition& b) {
    return a.x * b.x + a.y * b.y + a.z * b.z;
}

/* Single-difference range |S_r - (B + x)| - |S_b - B| evaluated at baseline
 * scale. Forming B + x and subtracting ~2.6e7 m ranges would leave ~1e-9 m
 * of iterate-dependent rounding that the phase gain amplifies into the
 * baseline, so the baseline x enters the algebra exactly. */
double sd_range(const EcefPosition& sr_rel, const Eigen::Vector3d& x,
                const EcefPosition& sb_rel) {
    const EcefPosition a{sr_rel.x - x(0), sr_rel.y - x(1), sr_rel.z - x(2)};
    const double na = norm(a), nb = norm(sr_rel), nc = norm(sb_rel);
    const EcefPosition minus_x{-x(0), -x(1), -x(2)};
    const double term1 = dot(minus_x, a + sr_rel) / (na + nb);
    const double term2 = dot(sr_rel - sb_rel, sr_rel + sb_rel) / (nb + nc);
    return term1 + term2;
}

} // namespace

RtkSession::RtkSession(const EcefPosition& base_position, const SolverConfig& config)
    : base_position_(base_position), config_(config) {
    state_.covariance = Eigen::MatrixXd::Zero(3, 3);
}

void RtkSession::remove_ambiguities(const std::vector<std::size_t>& drop) {
    if (drop.empty()) return;
    const std::size_t n_old = state_.ambiguity_keys.size();
    std::vector<bool> dead(n_old, false);
    for (std::size_t i : drop) dead[i] = true;

    std::vector<AmbiguityKey> keys;
    std::vector<Eigen::Index> keep{0, 1, 2};
    Eigen::VectorXd amb(static_cast<Eigen::Index>(n_old) - static_cast<Eigen::Index>(drop.size()));
    Eigen::Index j = 0;
    for (std::size_t i = 0; i < n_old; ++i) {
        if (dead[i]) continue;
        keys.push_back(state_.ambiguity_keys[i]);
        amb(j++) = state_.ambiguities(static_cast<Eigen::Index>(i));
        keep.push_back(static_cast<Eigen::Index>(3 + i));
    }
    state_.covariance = state_.covariance(keep, keep).eval();
    state_.ambiguity_keys = std::move(keys);
    state_.ambiguities = std::move(amb);
}

void RtkSession::pivot_reference(Constellation c, const SatId& new_ref, bool old_ref_present) {
    const SatId old_ref = state_.reference_satellite.at(c);
    const AmbiguityKey new_ref_key{new_ref, default_band(c)};

    int pivot_idx = -1;
    for (std::size_t i = 0; i < state_.ambiguity_keys.size(); ++i)
        if (state_.ambiguity_keys[i] == new_ref_key) pivot_idx = static_cast<int>(i);
    if (pivot_idx < 0) throw Error("pivot_reference: new reference has no ambiguity state");

    const std::size_t n_old = state_.ambiguity_keys.size();
    std::vector<AmbiguityKey> new_keys;
    struct Row {
        int from;      /* old state index or -1 */
        bool minus_pivot;
    };
    std::vector<Row> rows;
    for (std::size_t i = 0; i < n_old; ++i) {
        if (static_cast<int>(i) == pivot_idx) continue;
        const bool same = state_.ambiguity_keys[i].first.constellation == c;
        new_keys.push_back(state_.ambiguity_keys[i]);
        rows.push_back({static_cast<int>(i), same});
    }
    if (old_ref_present) {
        new_keys.push_back({old_ref, default_band(c)});
        rows.push_back({-1, true});
    }

    const auto n_new = static_cast<Eigen::Index>(new_keys.size());
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(3 + n_new, 3 + static_cast<Eigen::Index>(n_old));
    t.topLeftCorner<3, 3>().setIdentity();
    for (Eigen::Index r = 0; r < n_new; ++r) {
        const Row& row = rows[static_cast<std::size_t>(r)];
        if (row.from >= 0) t(3 + r, 3 + row.from) = 1.0;
        if (row.minus_pivot) t(3 + r, 3 + pivot_idx) -= 1.0;
    }

    Eigen::VectorXd x_old(3 + static_cast<Eigen::Index>(n_old));
    x_old.head<3>() = state_.baseline;
    x_old.tail(static_cast<Eigen::Index>(n_old)) = state_.ambiguities;

    const Eigen::VectorXd x_new = t * x_old;
    state_.covariance = (t * state_.covariance * t.transpose()).eval();
    state_.baseline = x_new.head<3>();
    state_.ambiguities = x_new.tail(n_new);
    state_.ambiguity_keys = std::move(new_keys);
    state_.reference_satellite[c] = new_ref;
}

void RtkSession::repivot(Constellation c, const SatId& new_reference) {
    if (!state_.reference_satellite.count(c))
        throw Error("repivot: constellation has no reference");
    if (state_.reference_satellite.at(c) == new_reference) return;
    pivot_reference(c, new_reference, true);
}

Solution RtkSession::coast(const GpsTime& t, double age) {
    Solution sol;
    sol.time = t;
    if (!state_.initialized) return sol;

    sol.position = base_position_ + EcefPosition{state_.baseline(0), state_.baseline(1),
                                                 state_.baseline(2)};
    sol.geodetic = ecef_to_geodetic(sol.position);
    sol.cov_enu = enu_cov(state_.covariance.topLeftCorner<3, 3>(), sol.geodetic);
    sol.age_of_corrections = age;
    sol.predicted_covariance_trace = state_.covariance.trace();
    sol.status = (t - last_measurement_) <= COAST_LIMIT_S ? SolutionStatus::DGNSS_FLOAT
                                                          : SolutionStatus::NO_FIX;
    return sol;
}

Solution RtkSession::update(const Epoch& base_epoch, const Epoch& rover_epoch,
                            const EphemerisSet& ephs) {
    const double age = rover_epoch.time - base_epoch.time;
    if (std::fabs(age) > 0.1)
        throw AgeOfDataError("rtk_update: base/rover epochs differ by " + std::to_string(age) +
                             " s");

    /* predict */
    if (state_.initialized) {
        const double dt = rover_epoch.time - state_.last_epoch;
        if (dt > 0.0) {
            const double q = config_.process_noise_position;
            state_.covariance.topLeftCorner<3, 3>() +=
                q * q * dt * Eigen::Matrix3d::Identity();
        }
    }
    state_.last_epoch = rover_epoch.time;

    const bool first_solve = !state_.initialized;
    if (first_solve) {
        const Solution spp = spp_solve(rover_epoch, ephs, config_);
        if (spp.status == SolutionStatus::NO_FIX) {
            Solution sol;
            sol.time = rover_epoch.time;
            return sol;
        }
        const EcefPosition d = spp.position - base_position_;
        state_.baseline << d.x, d.y, d.z;
        state_.covariance = Eigen::MatrixXd::Identity(3, 3) * FALLBACK_POSITION_VAR;
        state_.initialized = true;
        last_measurement_ = rover_epoch.time;
    }

    const EcefPosition rover_est =
        base_position_ +
        EcefPosition{state_.baseline(0), state_.baseline(1), state_.baseline(2)};

    /* common satellites with ephemeris */
    std::vector<SatWork> work;
    for (const auto& o : rover_epoch.observations) {
        const Observation* b = base_epoch.find(o.sat, o.band);
        if (!b) continue;
        const auto it = ephs.find(o.sat);
        if (it == ephs.end()) continue;

        SatWork wk;
        wk.key = {o.sat, o.band};
        wk.rov = &o;
        wk.bas = b;
        wk.rov_emission = emission_state(it->second, rover_epoch.time, o.pseudorange);
        wk.bas_emission = emission_state(it->second, base_epoch.time, b->pseudorange);
        EcefPosition bas_sat;
        sagnac_range(wk.bas_emission.position, base_position_, &bas_sat);
        sagnac_range(wk.rov_emission.position, rover_est, &wk.rov_sat);
        wk.rov_sat_rel = wk.rov_sat - base_position_;
        wk.bas_sat_rel = bas_sat - base_position_;
        wk.elevation_deg = elevation_azimuth(rover_est, wk.rov_sat).elevation_deg;
        work.push_back(wk);
    }

    if (work.size() < 2) return coast(rover_epoch.time, age);

    /* group by constellation, pick references (highest elevation, tie lowest prn) */
    std::map<Constellation, std::vector<std::size_t>> by_sys;
    for (std::size_t i = 0; i < work.size(); ++i)
        by_sys[work[i].key.first.constellation].push_back(i);

    auto better_ref = [&](std::size_t a, std::size_t b) {
        if (work[a].elevation_deg != work[b].elevation_deg)
            return work[a].elevation_deg > work[b].elevation_deg;
        return work[a].key.first.prn < work[b].key.first.prn;
    };

    auto find_work = [&](const AmbiguityKey& key) -> SatWork* {
        for (auto& wk : work)
            if (wk.key == key) return &wk;
        return nullptr;
    };

    /* (1) drop states whose satellite slipped or has been gone a while; a
     * short selection gap keeps the state (the carrier never lost lock), and
     * a reference slip invalidates every DD ambiguity of its constellation */
    for (const auto& wk : work) last_seen_[wk.key] = rover_epoch.time;
    std::vector<std::size_t> drop;
    for (std::size_t i = 0; i < state_.ambiguity_keys.size(); ++i) {
        const AmbiguityKey& key = state_.ambiguity_keys[i];
        const SatWork* wk = find_work(key);
        if (wk) {
            if (wk->rov->loss_of_lock || wk->bas->loss_of_lock) drop.push_back(i);
        } else {
            const auto seen = last_seen_.find(key);
            if (seen == last_seen_.end() ||
                rover_epoch.time - seen->second > AMBIGUITY_RETENTION_S)
                drop.push_back(i);
        }
    }
    for (auto& [c, idxs] : by_sys) {
        const auto ref_it = state_.reference_satellite.find(c);
        if (ref_it == state_.reference_satellite.end()) continue;
        const SatWork* ref_wk = find_work({ref_it->second, default_band(c)});
        if (ref_wk && (ref_wk->rov->loss_of_lock || ref_wk->bas->loss_of_lock)) {
            for (std::size_t i = 0; i < state_.ambiguity_keys.size(); ++i)
                if (state_.ambiguity_keys[i].first.constellation == c) drop.push_back(i);
            state_.reference_satellite.erase(c);
        }
    }
    std::sort(drop.begin(), drop.end());
    drop.erase(std::unique(drop.begin(), drop.end()), drop.end());
    remove_ambiguities(drop);

    /* (2) make sure each constellation has a usable reference */
    for (auto& [c, idxs] : by_sys) {
        auto ref_it = state_.reference_satellite.find(c);
        bool ref_common = false;
        if (ref_it != state_.reference_satellite.end())
            ref_common = find_work({ref_it->second, default_band(c)}) != nullptr;

        if (!ref_common) {
            /* re-pivot to the best stated satellite, or start the
             * constellation fresh when none survives */
            int best_stated = -1;
            for (std::size_t wi = 0; wi < work.size(); ++wi) {
                if (work[wi].key.first.constellation != c) continue;
                if (std::find(state_.ambiguity_keys.begin(), state_.ambiguity_keys.end(),
                              work[wi].key) == state_.ambiguity_keys.end())
                    continue;
                if (best_stated < 0 || better_ref(wi, static_cast<std::size_t>(best_stated)))
                    best_stated = static_cast<int>(wi);
            }
            if (ref_it != state_.reference_satellite.end() && best_stated >= 0) {
                pivot_reference(c, work[static_cast<std::size_t>(best_stated)].key.first, false);
            } else {
                /* no usable state: clear this constellation and restart */
                std::vector<std::size_t> gone;
                for (std::size_t i = 0; i < state_.ambiguity_keys.size(); ++i)
                    if (state_.ambiguity_keys[i].first.constellation == c) gone.push_back(i);
                remove_ambiguities(gone);
                std::size_t best = idxs.front();
                for (std::size_t i : idxs)
                    if (better_ref(i, best)) best = i;
                state_.reference_satellite[c] = work[best].key.first;
            }
        }
    }

    /* (3) initialize ambiguities for new satellites from DD(code,phase) */
    for (auto& [c, idxs] : by_sys) {
        const SatId ref = state_.reference_satellite.at(c);
        const SatWork* ref_wk = find_work({ref, default_band(c)});
        if (!ref_wk || !ref_wk->rov->carrier_phase || !ref_wk->bas->carrier_phase) continue;
        const double ref_code = ref_wk->rov->pseudorange - ref_wk->bas->pseudorange;
        const double ref_phase = *ref_wk->rov->carrier_phase - *ref_wk->bas->carrier_phase;

        for (std::size_t i : idxs) {
            SatWork& wk = work[i];
            if (wk.key.first == ref) continue;
            if (!wk.rov->carrier_phase || !wk.bas->carrier_phase) continue;
            if (std::find(state_.ambiguity_keys.begin(), state_.ambiguity_keys.end(), wk.key) !=
                state_.ambiguity_keys.end())
                continue;

            const double dd_code =
                (wk.rov->pseudorange - wk.bas->pseudorange) - ref_code;
            const double dd_phase =
                (*wk.rov->carrier_phase - *wk.bas->carrier_phase) - ref_phase;
            const double amb = dd_phase - dd_code / wavelength(wk.key.second);

            const auto n_old = static_cast<Eigen::Index>(state_.ambiguity_keys.size());
            state_.ambiguity_keys.push_back(wk.key);
            state_.ambiguities.conservativeResize(n_old + 1);
            state_.ambiguities(n_old) = amb;
            Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(3 + n_old + 1, 3 + n_old + 1);
            cov.topLeftCorner(3 + n_old, 3 + n_old) = state_.covariance;
            cov(3 + n_old, 3 + n_old) = INITIAL_AMBIGUITY_VAR;
            state_.covariance = std::move(cov);
        }
    }

    /* (4) re-pivot to the highest-elevation satellite when it differs */
    for (auto& [c, idxs] : by_sys) {
        std::size_t best = idxs.front();
        for (std::size_t i : idxs)
            if (better_ref(i, best)) best = i;
        const SatId desired = work[best].key.first;
        const SatId current = state_.reference_satellite.at(c);
        if (desired == current) continue;
        if (std::find(state_.ambiguity_keys.begin(), state_.ambiguity_keys.end(),
                      AmbiguityKey{desired, default_band(c)}) != state_.ambiguity_keys.end())
            pivot_reference(c, desired, find_work({current, default_band(c)}) != nullptr);
    }

    /* index ambiguity states */
    for (auto& wk : work) {
        wk.is_ref = state_.reference_satellite.at(wk.key.first.constellation) == wk.key.first;
        wk.state_index = -1;
        for (std::size_t i = 0; i < state_.ambiguity_keys.size(); ++i)
            if (state_.ambiguity_keys[i] == wk.key) wk.state_index = static_cast<int>(i);
    }

    /* (5) measurement rows: DD code for every non-ref satellite, DD phase for
     * those carrying an ambiguity state */
    struct MeasRow {
        const SatWork* sat;
        const SatWork* ref;
        bool is_phase;
        double z;
        double sigma; /* of this satellite's single difference */
        double sigma_ref;
    };
    std::vector<MeasRow> rows;
    for (auto& [c, idxs] : by_sys) {
        const SatWork* ref_wk = find_work({state_.reference_satellite.at(c), default_band(c)});
        if (!ref_wk) continue;
        const double ref_code = ref_wk->rov->pseudorange - ref_wk->bas->pseudorange;
        std::optional<double> ref_phase;
        if (ref_wk->rov->carrier_phase && ref_wk->bas->carrier_phase)
            ref_phase = *ref_wk->rov->carrier_phase - *ref_wk->bas->carrier_phase;

        for (std::size_t i : idxs) {
            const SatWork& wk = work[i];
            if (wk.is_ref) continue;
            const double lambda = wavelength(wk.key.second);

            MeasRow code;
            code.sat = &wk;
            code.ref = ref_wk;
            code.is_phase = false;
            code.z = (wk.rov->pseudorange - wk.bas->pseudorange) - ref_code;
            code.sigma = weighted_sigma(config_.code_sigma, wk.elevation_deg,
                                        config_.elevation_weight_exponent);
            code.sigma_ref = weighted_sigma(config_.code_sigma, ref_wk->elevation_deg,
                                            config_.elevation_weight_exponent);
            rows.push_back(code);

            if (wk.state_index >= 0 && wk.rov->carrier_phase && wk.bas->carrier_phase &&
                ref_phase) {
                MeasRow phase;
                phase.sat = &wk;
                phase.ref = ref_wk;
                phase.is_phase = true;
                phase.z = (*wk.rov->carrier_phase - *wk.bas->carrier_phase) - *ref_phase;
                phase.sigma = weighted_sigma(config_.phase_sigma, wk.elevation_deg,
                                             config_.elevation_weight_exponent) /
                              lambda;
                phase.sigma_ref = weighted_sigma(config_.phase_sigma, ref_wk->elevation_deg,
                                                 config_.elevation_weight_exponent) /
                                  lambda;
                rows.push_back(phase);
            }
        }
    }

    if (rows.empty()) return coast(rover_epoch.time, age);

    const double predicted_trace = state_.covariance.trace();

    const auto na = static_cast<Eigen::Index>(state_.ambiguity_keys.size());
    const Eigen::Index nx = 3 + na;
    const auto m = static_cast<Eigen::Index>(rows.size());

    /* measurement covariance: sigmas are per receiver and observation, a
     * single difference doubles the variance, and the shared reference
     * correlates rows of the same constellation and type */
    Eigen::MatrixXd r_mat = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const MeasRow& a = rows[static_cast<std::size_t>(i)];
        r_mat(i, i) = 2.0 * (a.sigma * a.sigma + a.sigma_ref * a.sigma_ref);
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const MeasRow& b = rows[static_cast<std::size_t>(j)];
            if (a.ref == b.ref && a.is_phase == b.is_phase)
                r_mat(i, j) = r_mat(j, i) = 2.0 * a.sigma_ref * a.sigma_ref;
        }
    }

    Eigen::VectorXd x_prior(nx);
    x_prior.head<3>() = state_.baseline;
    if (na > 0) x_prior.tail(na) = state_.ambiguities;
    const Eigen::MatrixXd p_prior = state_.covariance;

    Eigen::VectorXd z(m);
    for (Eigen::Index i = 0; i < m; ++i) z(i) = rows[static_cast<std::size_t>(i)].z;

    /* iterated EKF update (relinearize until the baseline settles) */
    Eigen::VectorXd x_i = x_prior;
    Eigen::MatrixXd h_mat(m, nx), k_gain;
    const bool prior_free = first_solve && m >= nx;
    for (int iter = 0; iter < 8; ++iter) {
        Eigen::VectorXd hx(m);
        h_mat.setZero();
        const Eigen::Vector3d bx = x_i.head<3>();
        for (Eigen::Index i = 0; i < m; ++i) {
            const MeasRow& row = rows[static_cast<std::size_t>(i)];
            const SatWork& ws = *row.sat;
            const SatWork& wr = *row.ref;
            /* both single differences live at baseline scale */
            const double dd_range =
                sd_range(ws.rov_sat_rel, bx, ws.bas_sat_rel) -
                sd_range(wr.rov_sat_rel, bx, wr.bas_sat_rel);

            const EcefPosition los_s{ws.rov_sat_rel.x - bx(0), ws.rov_sat_rel.y - bx(1),
                                     ws.rov_sat_rel.z - bx(2)};
            const EcefPosition los_r{wr.rov_sat_rel.x - bx(0), wr.rov_sat_rel.y - bx(1),
                                     wr.rov_sat_rel.z - bx(2)};
            const double rng_s = norm(los_s);
            const double rng_r = norm(los_r);

            /* d(range)/d(baseline) = -unit LOS at the rover */
            const double ex = -los_s.x / rng_s + los_r.x / rng_r;
            const double ey = -los_s.y / rng_s + los_r.y / rng_r;
            const double ez = -los_s.z / rng_s + los_r.z / rng_r;

            if (row.is_phase) {
                const double lambda = wavelength(row.sat->key.second);
                hx(i) = dd_range / lambda + x_i(3 + row.sat->state_index);
                h_mat(i, 0) = ex / lambda;
                h_mat(i, 1) = ey / lambda;
                h_mat(i, 2) = ez / lambda;
                h_mat(i, 3 + row.sat->state_index) = 1.0;
            } else {
                hx(i) = dd_range;
                h_mat(i, 0) = ex;
                h_mat(i, 1) = ey;
                h_mat(i, 2) = ez;
            }
        }

        Eigen::VectorXd x_next;
        if (prior_free) {
            /* first epoch: plain weighted least squares, no prior pull */
            const Eigen::LDLT<Eigen::MatrixXd> r_ldlt(r_mat);
            if (r_ldlt.info() != Eigen::Success) return coast(rover_epoch.time, age);
            const Eigen::MatrixXd info = h_mat.transpose() * r_ldlt.solve(h_mat);
            const Eigen::LDLT<Eigen::MatrixXd> info_ldlt(info);
            if (info_ldlt.info() != Eigen::Success) return coast(rover_epoch.time, age);
            x_next = x_i + info_ldlt.solve(h_mat.transpose() * r_ldlt.solve(z - hx));
        } else {
            const Eigen::MatrixXd s = h_mat * p_prior * h_mat.transpose() + r_mat;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
            if (ldlt.info() != Eigen::Success) return coast(rover_epoch.time, age);
            k_gain = (ldlt.solve(h_mat * p_prior.transpose())).transpose();
            x_next = x_prior + k_gain * (z - hx - h_mat * (x_prior - x_i));
        }
        const double step = (x_next.head<3>() - x_i.head<3>()).norm();
        if (getenv("RTKPIPE_DEBUG")) {
            Eigen::VectorXd r = z - hx;
            printf("  it%d |r|=%.3e rmax=%.3e step=%.3e |b|=%.4e\n", iter, r.norm(),
                   r.cwiseAbs().maxCoeff(), step, x_next.head<3>().norm());
        }
        x_i = x_next;
        if (step < 1e-9) break;
    }

    Eigen::MatrixXd p_post;
    if (prior_free) {
        /* values from the least squares; covariance per the filter's stated
         * priors: code-only position information, fresh ambiguities at their
         * large nominal variance, no cross terms */
        Eigen::Matrix3d code_info = Eigen::Matrix3d::Zero();
        for (Eigen::Index i = 0; i < m; ++i) {
            if (rows[static_cast<std::size_t>(i)].is_phase) continue;
            const MeasRow& row = rows[static_cast<std::size_t>(i)];
            const double var = 2.0 * (row.sigma * row.sigma + row.sigma_ref * row.sigma_ref);
            code_info += h_mat.row(i).head<3>().transpose() * h_mat.row(i).head<3>() / var;
        }
        p_post = Eigen::MatrixXd::Zero(nx, nx);
        Eigen::LDLT<Eigen::Matrix3d> code_ldlt(code_info);
        if (code_ldlt.info() == Eigen::Success)
            p_post.topLeftCorner<3, 3>() = code_ldlt.solve(Eigen::Matrix3d::Identity());
        else
            p_post.topLeftCorner<3, 3>() = Eigen::Matrix3d::Identity() * FALLBACK_POSITION_VAR;
        for (Eigen::Index i = 0; i < na; ++i)
            p_post(3 + i, 3 + i) = INITIAL_AMBIGUITY_VAR;
    } else {
        /* Joseph form keeps the prior/tiny-phase spread PSD */
        const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(nx, nx) - k_gain * h_mat;
        p_post = ikh * p_prior * ikh.transpose() + k_gain * r_mat * k_gain.transpose();
    }
    p_post = (0.5 * (p_post + p_post.transpose())).eval();

    state_.baseline = x_i.head<3>();
    if (na > 0) state_.ambiguities = x_i.tail(na);
    state_.covariance = p_post;
    last_measurement_ = rover_epoch.time;

    /* solution assembly */
    Solution sol;
    sol.time = rover_epoch.time;
    sol.status = SolutionStatus::DGNSS_FLOAT;
    sol.nsat = static_cast<int>(work.size());
    sol.age_of_corrections = age;
    sol.predicted_covariance_trace = predicted_trace;

    Eigen::Vector3d b_out = state_.baseline;
    Eigen::Matrix3d cov_out = state_.covariance.topLeftCorner<3, 3>();

    /* ambiguity fixing by rounding plus a ratio test over +-1 candidates */
    if (config_.ambiguity_fix == SolverConfig::AmbiguityFix::rounding && na > 0) {
        Eigen::VectorXd rounded(na);
        bool near_integers = true;
        for (Eigen::Index i = 0; i < na; ++i) {
            rounded(i) = std::round(state_.ambiguities(i));
            if (std::fabs(state_.ambiguities(i) - rounded(i)) > ROUNDING_GATE_CYCLES)
                near_integers = false;
        }
        if (near_integers) {
            double best = 0.0;
            for (Eigen::Index i = 0; i < na; ++i) {
                const double d = state_.ambiguities(i) - rounded(i);
                const double var = std::max(state_.covariance(3 + i, 3 + i), 1e-12);
                best += d * d / var;
            }
            double second = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < na; ++i) {
                const double var = std::max(state_.covariance(3 + i, 3 + i), 1e-12);
                const double d = state_.ambiguities(i) - rounded(i);
                for (const double shift : {-1.0, 1.0}) {
                    const double alt = best - d * d / var +
                                       (d - shift) * (d - shift) / var;
                    second = std::min(second, alt);
                }
            }
            sol.ratio = best > 0.0 ? second / best
                                   : std::numeric_limits<double>::infinity();
            if (sol.ratio >= config_.ratio_threshold) {
                const Eigen::MatrixXd p_ba = state_.covariance.topRightCorner(3, na);
                const Eigen::MatrixXd p_aa = state_.covariance.bottomRightCorner(na, na);
                Eigen::LDLT<Eigen::MatrixXd> ldlt(p_aa);
                if (ldlt.info() == Eigen::Success) {
                    const Eigen::VectorXd da = state_.ambiguities - rounded;
                    b_out = state_.baseline - p_ba * ldlt.solve(da);
                    cov_out = state_.covariance.topLeftCorner<3, 3>() -
                              p_ba * ldlt.solve(p_ba.transpose());
                    sol.status = SolutionStatus::FIXED;
                }
            }
        }
    }

    sol.position = base_position_ + EcefPosition{b_out(0), b_out(1), b_out(2)};
    sol.geodetic = ecef_to_geodetic(sol.position);
    sol.cov_enu = enu_cov(cov_out, sol.geodetic);

    std::vector<EcefPosition> dop_sats;
    for (const auto& wk : work) dop_sats.push_back(wk.rov_sat);
    sol.hdop = hdop(sol.position, dop_sats);
    return sol;
}

/* ---- NMEA and JSONL output -------------------------------------------------- */

std::string solution_to_nmea(const Solution& s) {
    if (s.status == SolutionStatus::NO_FIX) return "";

    const double tod = std::fmod(s.time.tow, 86400.0);
    const int hh = static_cast<int>(tod / 3600.0);
    const int mm = static_cast<int>(std::fmod(tod, 3600.0) / 60.0);
    const double ss = std::fmod(tod, 60.0);

    const double alat = std::fabs(s.geodetic.lat_deg);
    const double alon = std::fabs(s.geodetic.lon_deg);
    const int latd = static_cast<int>(alat);
    const int lond = static_cast<int>(alon);

    int quality = 1;
    if (s.status == SolutionStatus::DGNSS_FLOAT) quality = 5;
    if (s.status == SolutionStatus::FIXED) quality = 4;

    char body[160];
    std::snprintf(body, sizeof body,
                  "GPGGA,%02d%02d%05.2f,%02d%08.5f,%c,%03d%08.5f,%c,%d,%02d,%.1f,%.3f,M,0.0,M,,",
                  hh, mm, ss, latd, (alat - latd) * 60.0, s.geodetic.lat_deg >= 0.0 ? 'N' : 'S',
                  lond, (alon - lond) * 60.0, s.geodetic.lon_deg >= 0.0 ? 'E' : 'W', quality,
                  s.nsat, s.hdop, s.geodetic.height);

    unsigned checksum = 0;
    for (const char* p = body; *p; ++p) checksum ^= static_cast<unsigned char>(*p);

    char out[172];
    std::snprintf(out, sizeof out, "$%s*%02X", body, checksum & 0xFF);
    return out;
}

std::string solution_to_json(const Solution& s) {
    nlohmann::json j;
    j["week"] = s.time.week;
    j["tow"] = s.time.tow;
    j["lat"] = s.geodetic.lat_deg;
    j["lon"] = s.geodetic.lon_deg;
    j["h"] = s.geodetic.height;
    j["status"] = to_string(s.status);
    j["nsat"] = s.nsat;
    std::vector<double> cov(9);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) cov[static_cast<std::size_t>(r * 3 + c)] = s.cov_enu(r, c);
    j["cov_enu"] = cov;
    j["age"] = s.age_of_corrections;
    j["hdop"] = s.hdop;
    j["ratio"] = s.ratio;
    return j.dump();
}

Solution solution_from_json(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    Solution s;
    s.time = GpsTime(j.at("week").get<int>(), j.at("tow").get<double>());
    s.geodetic = {j.at("lat").get<double>(), j.at("lon").get<double>(), j.at("h").get<double>()};
    s.position = geodetic_to_ecef(s.geodetic);
    s.status = status_from_string(j.at("status").get<std::string>());
    s.nsat = j.at("nsat").get<int>();
    if (j.contains("cov_enu")) {
        const auto cov = j["cov_enu"].get<std::vector<double>>();
        if (cov.size() == 9)
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) s.cov_enu(r, c) = cov[static_cast<std::size_t>(r * 3 + c)];
    }
    s.age_of_corrections = j.value("age", 0.0);
    s.hdop = j.value("hdop", 0.0);
    s.ratio = j.value("ratio", 0.0);
    return s;
}

std::vector<Solution> read_solution_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open solution file: " + path);
    std::vector<Solution> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(solution_from_json(line));
    return out;
}

void write_solution_jsonl(const std::string& path, const std::vector<Solution>& sols) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write solution file: " + path);
    for (const auto& s : sols) out << solution_to_json(s) << '\n';
}

} // namespace rtkpipe
