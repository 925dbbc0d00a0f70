#include "rtkpipe/obs.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

namespace rtkpipe {

char constellation_letter(Constellation c) {
    switch (c) {
        case Constellation::GPS: return 'G';
        case Constellation::GLONASS: return 'R';
        case Constellation::GALILEO: return 'E';
        case Constellation::BEIDOU: return 'C';
    }
    return '?';
}

Constellation constellation_from_letter(char letter) {
    switch (letter) {
        case 'G': return Constellation::GPS;
        case 'R': return Constellation::GLONASS;
        case 'E': return Constellation::GALILEO;
        case 'C': return Constellation::BEIDOU;
    }
    throw Error(std::string("unknown constellation letter '") + letter + "'");
}

int max_prn(Constellation c) {
    switch (c) {
        case Constellation::GPS: return 32;
        case Constellation::GLONASS: return 24;
        case Constellation::GALILEO: return 36;
        case Constellation::BEIDOU: return 63;
    }
    return 0;
}

bool valid(const SatId& sat) { return sat.prn >= 1 && sat.prn <= max_prn(sat.constellation); }

std::string to_string(const SatId& sat) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%c%02d", constellation_letter(sat.constellation), sat.prn);
    return buf;
}

SatId sat_from_string(const std::string& name) {
    if (name.size() < 2) throw Error("bad satellite name '" + name + "'");
    SatId sat{constellation_from_letter(name[0]), std::atoi(name.c_str() + 1)};
    if (!valid(sat)) throw Error("satellite PRN out of range: '" + name + "'");
    return sat;
}

double frequency(SignalBand band) {
    return band == SignalBand::L1 ? FREQ_L1 : FREQ_B1;
}

double wavelength(SignalBand band) { return CLIGHT / frequency(band); }

std::string to_string(SignalBand band) { return band == SignalBand::L1 ? "L1" : "B1"; }

SignalBand band_from_string(const std::string& name) {
    if (name == "L1") return SignalBand::L1;
    if (name == "B1") return SignalBand::B1;
    throw Error("unknown signal band '" + name + "'");
}

bool band_valid_for(Constellation c, SignalBand band) {
    return band == default_band(c);
}

SignalBand default_band(Constellation c) {
    return c == Constellation::BEIDOU ? SignalBand::B1 : SignalBand::L1;
}

const Observation* Epoch::find(const SatId& sat, SignalBand band) const {
    for (const auto& o : observations)
        if (o.sat == sat && o.band == band) return &o;
    return nullptr;
}

namespace {

std::int64_t positive_mod(std::int64_t v, std::int64_t m) {
    const std::int64_t r = v % m;
    return r < 0 ? r + m : r;
}

bool reject(std::string* reason, const char* text) {
    if (reason) *reason = text;
    return false;
}

/* transmit-time modulus and epoch offset for the satellite's time scale */
bool time_scale(const SatId& sat, std::int64_t* modulus, std::int64_t* offset_ns) {
    switch (sat.constellation) {
        case Constellation::GPS:
        case Constellation::GALILEO:
            *modulus = WEEK_NANOS;
            *offset_ns = 0;
            return true;
        case Constellation::BEIDOU:
            *modulus = WEEK_NANOS;
            *offset_ns = static_cast<std::int64_t>(BDS_GPS_TIME_OFFSET * 1e9);
            return true;
        case Constellation::GLONASS:
            /* time-of-day based transmit time; epochs carried in GPS time */
            *modulus = DAY_NANOS;
            *offset_ns = 0;
            return true;
    }
    return false;
}

} // namespace

std::optional<Observation> derive_pseudorange(const RawMeasurement& raw,
                                              std::string* reject_reason) {
    if (!(raw.state_flags & state_flag::CODE_LOCK)) {
        reject(reject_reason, "no code lock");
        return std::nullopt;
    }
    if (!(raw.state_flags & state_flag::TOW_DECODED)) {
        reject(reject_reason, "time of week not decoded");
        return std::nullopt;
    }

    std::int64_t modulus = 0, offset = 0;
    time_scale(raw.sat, &modulus, &offset);

    /* receiver GPS time, split into exact integer ns and a small fraction */
    const std::int64_t rx_int = raw.time_nanos - raw.full_bias_nanos;
    const double rx_frac = -raw.bias_nanos + raw.time_offset_nanos;

    const std::int64_t tow_rx_int = positive_mod(rx_int - offset, modulus);
    std::int64_t diff_int = tow_rx_int - raw.received_sv_time_nanos;
    /* rollover: transmit just before the epoch boundary, receive just after */
    if (diff_int < -modulus / 2) diff_int += modulus;

    const double travel_ns =
        static_cast<double>(diff_int) + (rx_frac - raw.received_sv_time_frac_nanos);
    const double pseudorange = travel_ns * 1e-9 * CLIGHT;

    if (!(pseudorange >= PSEUDORANGE_MIN && pseudorange <= PSEUDORANGE_MAX)) {
        reject(reject_reason, "implausible range");
        return std::nullopt;
    }

    Observation obs;
    obs.sat = raw.sat;
    obs.band = raw.band;
    obs.pseudorange = pseudorange;
    if (raw.state_flags & state_flag::ADR_VALID)
        obs.carrier_phase = raw.accumulated_delta_range / wavelength(raw.band);
    if (std::isfinite(raw.pseudorange_rate))
        obs.doppler = -raw.pseudorange_rate / wavelength(raw.band);
    obs.cn0 = raw.cn0;
    obs.loss_of_lock = (raw.state_flags & state_flag::ADR_RESET) != 0;
    return obs;
}

Epoch build_epoch(const std::vector<RawMeasurement>& raws, int week) {
    if (raws.empty()) throw Error("build_epoch: no raw measurements");

    std::map<std::pair<SatId, SignalBand>, Observation> best;
    for (const auto& raw : raws) {
        auto obs = derive_pseudorange(raw);
        if (!obs) continue;
        const auto key = std::make_pair(obs->sat, obs->band);
        auto it = best.find(key);
        if (it == best.end() || obs->cn0 > it->second.cn0) best[key] = *obs;
    }
    if (best.empty()) throw Error("build_epoch: no usable observations in epoch");

    Epoch epoch;
    const auto& r0 = raws.front();
    const std::int64_t rx_int = r0.time_nanos - r0.full_bias_nanos;
    const double rx_frac = -r0.bias_nanos + r0.time_offset_nanos;
    epoch.time.week = week;
    epoch.time.tow =
        static_cast<double>(positive_mod(rx_int, WEEK_NANOS)) * 1e-9 + rx_frac * 1e-9;
    epoch.time.normalize();
    for (auto& [key, obs] : best) epoch.observations.push_back(obs);
    return epoch;
}

std::string epoch_to_json(const Epoch& epoch) {
    nlohmann::json j;
    j["week"] = epoch.time.week;
    j["tow"] = epoch.time.tow;
    auto& arr = j["obs"] = nlohmann::json::array();
    for (const auto& o : epoch.observations) {
        nlohmann::json jo;
        jo["sat"] = to_string(o.sat);
        jo["band"] = to_string(o.band);
        jo["pr"] = o.pseudorange;
        if (o.carrier_phase) jo["cp"] = *o.carrier_phase;
        if (o.doppler) jo["dop"] = *o.doppler;
        jo["cn0"] = o.cn0;
        jo["llock"] = o.loss_of_lock;
        arr.push_back(std::move(jo));
    }
    return j.dump();
}

Epoch epoch_from_json(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    Epoch epoch;
    epoch.time.week = j.at("week").get<int>();
    epoch.time.tow = j.at("tow").get<double>();
    for (const auto& jo : j.at("obs")) {
        Observation o;
        o.sat = sat_from_string(jo.at("sat").get<std::string>());
        o.band = band_from_string(jo.at("band").get<std::string>());
        o.pseudorange = jo.at("pr").get<double>();
        if (jo.contains("cp")) o.carrier_phase = jo["cp"].get<double>();
        if (jo.contains("dop")) o.doppler = jo["dop"].get<double>();
        o.cn0 = jo.value("cn0", 0.0);
        o.loss_of_lock = jo.value("llock", false);
        epoch.observations.push_back(std::move(o));
    }
    return epoch;
}

std::vector<Epoch> read_obs_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open observation file: " + path);
    std::vector<Epoch> epochs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        epochs.push_back(epoch_from_json(line));
    }
    return epochs;
}

void write_obs_jsonl(const std::string& path, const std::vector<Epoch>& epochs) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write observation file: " + path);
    for (const auto& e : epochs) out << epoch_to_json(e) << '\n';
}

} // namespace rtkpipe
