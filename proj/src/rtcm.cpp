#include "rtkpipe/rtcm.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <map>

namespace rtkpipe {

namespace {

/* ---- big-endian bit packing ------------------------------------------- */

class BitWriter {
public:
    void put(std::uint64_t value, int bits) {
        for (int i = bits - 1; i >= 0; --i) put_bit(static_cast<int>((value >> i) & 1));
    }
    void put_signed(std::int64_t value, int bits) {
        put(static_cast<std::uint64_t>(value) & ((1ULL << bits) - 1), bits);
    }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void put_bit(int b) {
        const std::size_t byte = nbits_ / 8;
        if (byte >= buf_.size()) buf_.push_back(0);
        if (b) buf_[byte] |= static_cast<std::uint8_t>(0x80u >> (nbits_ % 8));
        ++nbits_;
    }
    std::vector<std::uint8_t> buf_;
    std::size_t nbits_ = 0;
};

class BitReader {
public:
    explicit BitReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint64_t get(int bits) {
        std::uint64_t v = 0;
        for (int i = 0; i < bits; ++i) v = (v << 1) | get_bit();
        return v;
    }
    std::int64_t get_signed(int bits) {
        const std::uint64_t v = get(bits);
        const std::uint64_t sign = 1ULL << (bits - 1);
        return (v & sign) ? static_cast<std::int64_t>(v | ~(sign * 2 - 1))
                          : static_cast<std::int64_t>(v);
    }

private:
    int get_bit() {
        const std::size_t byte = pos_ / 8;
        if (byte >= data_.size()) throw MalformedMessageError("msm7: truncated payload");
        const int b = (data_[byte] >> (7 - pos_ % 8)) & 1;
        ++pos_;
        return b;
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

/* ---- CRC-24Q ----------------------------------------------------------- */

constexpr std::uint32_t CRC24Q_POLY = 0x1864CFB;

std::array<std::uint32_t, 256> make_crc24q_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t crc = i << 16;
        for (int j = 0; j < 8; ++j)
            crc = (crc & 0x800000) ? (crc << 1) ^ CRC24Q_POLY : crc << 1;
        table[i] = crc & 0xFFFFFF;
    }
    return table;
}

} // namespace

std::uint32_t crc24q(std::span<const std::uint8_t> data) {
    static const std::array<std::uint32_t, 256> table = make_crc24q_table();
    std::uint32_t crc = 0;
    for (const std::uint8_t byte : data)
        crc = ((crc << 8) & 0xFFFFFF) ^ table[((crc >> 16) ^ byte) & 0xFF];
    return crc;
}

/* ---- framing ------------------------------------------------------------ */

std::vector<std::uint8_t> frame_encode(std::span<const std::uint8_t> payload) {
    if (payload.size() > RTCM3_MAX_PAYLOAD)
        throw Error("frame_encode: payload exceeds 1023 bytes");

    std::vector<std::uint8_t> frame;
    frame.reserve(payload.size() + RTCM3_OVERHEAD);
    frame.push_back(RTCM3_PREAMBLE);
    frame.push_back(static_cast<std::uint8_t>((payload.size() >> 8) & 0x03));
    frame.push_back(static_cast<std::uint8_t>(payload.size() & 0xFF));
    frame.insert(frame.end(), payload.begin(), payload.end());

    const std::uint32_t crc = crc24q(frame);
    frame.push_back(static_cast<std::uint8_t>(crc >> 16));
    frame.push_back(static_cast<std::uint8_t>(crc >> 8));
    frame.push_back(static_cast<std::uint8_t>(crc));
    return frame;
}

FrameDecodeResult frame_decode(std::span<const std::uint8_t> stream) {
    const std::size_t n = stream.size();
    for (std::size_t p = 0; p < n; ++p) {
        if (stream[p] != RTCM3_PREAMBLE) continue;
        if (n - p < 3) return {FrameDecodeResult::Status::need_more, {}, p};

        const std::size_t len =
            (static_cast<std::size_t>(stream[p + 1] & 0x03) << 8) | stream[p + 2];
        const std::size_t total = len + RTCM3_OVERHEAD;
        if (n - p < total) return {FrameDecodeResult::Status::need_more, {}, p};

        const std::uint32_t want = (static_cast<std::uint32_t>(stream[p + total - 3]) << 16) |
                                   (static_cast<std::uint32_t>(stream[p + total - 2]) << 8) |
                                   stream[p + total - 1];
        if (crc24q(stream.subspan(p, total - 3)) == want) {
            FrameDecodeResult r;
            r.status = FrameDecodeResult::Status::frame;
            r.payload.assign(stream.begin() + p + 3, stream.begin() + p + 3 + len);
            r.consumed = p + total;
            return r;
        }
        /* CRC mismatch: not a frame, keep scanning after this preamble byte */
    }
    return {FrameDecodeResult::Status::need_more, {}, n};
}

void RtcmStreamDecoder::feed(std::span<const std::uint8_t> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<std::vector<std::uint8_t>> RtcmStreamDecoder::next_frame() {
    FrameDecodeResult r = frame_decode(buf_);
    if (r.status == FrameDecodeResult::Status::frame) {
        discarded_ += r.consumed - (r.payload.size() + RTCM3_OVERHEAD);
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(r.consumed));
        ++frames_;
        return std::move(r.payload);
    }
    if (r.consumed > 0) {
        discarded_ += r.consumed;
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(r.consumed));
    }
    return std::nullopt;
}

/* ---- MSM7 --------------------------------------------------------------- */

int msm7_message_number(Constellation c) {
    switch (c) {
        case Constellation::GPS: return 1077;
        case Constellation::GLONASS: return 1087;
        case Constellation::GALILEO: return 1097;
        case Constellation::BEIDOU: return 1127;
    }
    return 0;
}

bool msm7_supported_message(int n) {
    return n == 1077 || n == 1087 || n == 1097 || n == 1127;
}

Constellation msm7_constellation(int n) {
    switch (n) {
        case 1077: return Constellation::GPS;
        case 1087: return Constellation::GLONASS;
        case 1097: return Constellation::GALILEO;
        case 1127: return Constellation::BEIDOU;
    }
    throw UnsupportedMessageError("unsupported message number " + std::to_string(n));
}

int msm_lock_indicator(double ms) {
    if (ms < 0.0) return 0;
    if (ms < 64.0) return static_cast<int>(ms);
    for (int n = 1; n <= 20; ++n) {
        const double upper = static_cast<double>(1LL << (n + 6));
        if (ms < upper) return static_cast<int>(ms / (1LL << n)) + 32 * n;
    }
    return 704;
}

double msm_lock_time_ms(int indicator) {
    if (indicator <= 0) return 0.0;
    if (indicator < 64) return static_cast<double>(indicator);
    if (indicator >= 704) return static_cast<double>(1LL << 26);
    const int n = indicator / 32 - 1;
    return static_cast<double>(indicator - 32 * n) * static_cast<double>(1LL << n);
}

namespace {

/* MSM signal ids (DF395 bit positions) for the bands this artifact carries:
 * GPS 1C, GLONASS 1C, Galileo 1C, BeiDou 2I all sit at id 2. */
constexpr int MSM_SIGNAL_ID = 2;

constexpr std::int64_t DF399_INVALID = -8192;
constexpr std::int64_t DF405_INVALID = -524288;
constexpr std::int64_t DF406_INVALID = -8388608;
constexpr std::int64_t DF404_INVALID = -16384;

std::optional<SignalBand> band_for_signal_id(Constellation c, int signal_id) {
    if (signal_id != MSM_SIGNAL_ID) return std::nullopt;
    return default_band(c);
}

std::uint64_t msm7_epoch_field(Constellation c, const GpsTime& t) {
    if (c == Constellation::GLONASS) {
        std::int64_t dow = static_cast<std::int64_t>(t.tow / 86400.0);
        std::int64_t msod = std::llround((t.tow - static_cast<double>(dow) * 86400.0) * 1e3);
        if (msod >= 86400000) { msod -= 86400000; dow = (dow + 1) % 7; }
        return (static_cast<std::uint64_t>(dow) << 27) | static_cast<std::uint64_t>(msod);
    }
    double tow = t.tow;
    if (c == Constellation::BEIDOU) tow -= BDS_GPS_TIME_OFFSET;
    std::int64_t ms = std::llround(tow * 1e3) % 604800000LL;
    if (ms < 0) ms += 604800000LL;
    return static_cast<std::uint64_t>(ms);
}

GpsTime msm7_epoch_time(Constellation c, std::uint64_t field, int week_hint) {
    double tow;
    if (c == Constellation::GLONASS) {
        const auto dow = static_cast<double>(field >> 27);
        const auto msod = static_cast<double>(field & 0x7FFFFFF);
        tow = dow * 86400.0 + msod * 1e-3;
    } else {
        tow = static_cast<double>(field) * 1e-3;
        if (c == Constellation::BEIDOU) tow += BDS_GPS_TIME_OFFSET;
    }
    return GpsTime(week_hint, tow);
}

} // namespace

Msm7EncodeResult msm7_encode(const Epoch& epoch, Constellation constellation, int station_id,
                             bool multiple_message) {
    if (station_id < 0 || station_id > 4095) throw Error("msm7_encode: station id out of range");

    struct Cell {
        const Observation* obs;
        std::int64_t rough_units; /* satellite rough range, 1/1024 ms */
        std::int64_t rough_rate;  /* satellite rough rate, m/s */
    };

    Msm7EncodeResult result;

    /* group encodable observations per satellite, ascending PRN */
    std::map<int, std::vector<const Observation*>> per_sat;
    for (const auto& o : epoch.observations) {
        if (o.sat.constellation != constellation) continue;
        if (!band_valid_for(constellation, o.band)) { ++result.dropped; continue; }
        const double pr_ms = o.pseudorange / RANGE_MS;
        if (pr_ms < 0.0 || pr_ms >= 255.0) { ++result.dropped; continue; }
        per_sat[o.sat.prn].push_back(&o);
    }
    if (per_sat.empty()) throw Error("msm7_encode: no encodable observations");

    /* satellite rough values from the first cell of each satellite */
    std::map<int, std::pair<std::int64_t, std::int64_t>> rough; /* prn -> (units, rate) */
    std::vector<Cell> cells;
    for (auto& [prn, list] : per_sat) {
        const Observation* first = list.front();
        const std::int64_t units = std::llround(first->pseudorange / RANGE_MS * 1024.0);
        std::int64_t rate = DF399_INVALID;
        for (const Observation* o : list) {
            if (o->doppler) {
                const std::int64_t r = std::llround(-*o->doppler * wavelength(o->band));
                if (r > -8192 && r < 8192) rate = r;
                break;
            }
        }
        rough[prn] = {units, rate};
        for (const Observation* o : list) cells.push_back({o, units, rate});
    }

    /* drop cells whose fine pseudorange overflows its field */
    const double inv_2p29 = 536870912.0;  /* 2^29 */
    const double inv_2p31 = 2147483648.0; /* 2^31 */
    std::vector<Cell> kept;
    for (const Cell& c : cells) {
        const double rough_ms = static_cast<double>(c.rough_units) / 1024.0;
        const double fine = (c.obs->pseudorange / RANGE_MS - rough_ms) * inv_2p29;
        if (std::llabs(std::llround(fine)) > 524287) { ++result.dropped; continue; }
        kept.push_back(c);
    }
    if (kept.empty()) throw Error("msm7_encode: no encodable observations");

    /* rebuild satellite list from surviving cells */
    std::vector<int> prns;
    for (const Cell& c : kept)
        if (prns.empty() || prns.back() != c.obs->sat.prn) prns.push_back(c.obs->sat.prn);

    BitWriter w;
    w.put(static_cast<std::uint64_t>(msm7_message_number(constellation)), 12);
    w.put(static_cast<std::uint64_t>(station_id), 12);
    w.put(msm7_epoch_field(constellation, epoch.time), 30);
    w.put(multiple_message ? 1 : 0, 1);
    w.put(0, 3); /* IODS */
    w.put(0, 7); /* reserved */
    w.put(0, 2); /* clock steering */
    w.put(0, 2); /* external clock */
    w.put(0, 1); /* smoothing type */
    w.put(0, 3); /* smoothing interval */

    std::uint64_t sat_mask = 0;
    for (int prn : prns) sat_mask |= 1ULL << (64 - prn);
    w.put(sat_mask, 64);

    std::uint32_t sig_mask = 1u << (32 - MSM_SIGNAL_ID);
    w.put(sig_mask, 32);

    /* single signal: cell mask has one bit per satellite */
    for (int prn : prns) {
        (void)prn;
        w.put(1, 1);
    }

    /* satellite data, field by field */
    for (int prn : prns) w.put(static_cast<std::uint64_t>(rough[prn].first >> 10), 8);
    for (int prn : prns) { (void)prn; w.put(0, 4); } /* extended info */
    for (int prn : prns) w.put(static_cast<std::uint64_t>(rough[prn].first & 1023), 10);
    for (int prn : prns) w.put_signed(rough[prn].second, 14);

    /* signal data, field by field */
    for (const Cell& c : kept) {
        const double rough_ms = static_cast<double>(c.rough_units) / 1024.0;
        w.put_signed(std::llround((c.obs->pseudorange / RANGE_MS - rough_ms) * inv_2p29), 20);
    }
    for (const Cell& c : kept) {
        std::int64_t v = DF406_INVALID;
        if (c.obs->carrier_phase) {
            const double rough_ms = static_cast<double>(c.rough_units) / 1024.0;
            const double phase_ms = *c.obs->carrier_phase * wavelength(c.obs->band) / RANGE_MS;
            const std::int64_t f = std::llround((phase_ms - rough_ms) * inv_2p31);
            if (std::llabs(f) <= 8388607) v = f;
        }
        w.put_signed(v, 24);
    }
    for (const Cell& c : kept)
        w.put(static_cast<std::uint64_t>(
                  msm_lock_indicator(c.obs->loss_of_lock ? 0.0 : 67108864.0)),
              10);
    for (const Cell& c : kept) { (void)c; w.put(0, 1); } /* half-cycle ambiguity */
    for (const Cell& c : kept) {
        const std::int64_t cnr = std::clamp<std::int64_t>(std::llround(c.obs->cn0 * 16.0), 0, 1023);
        w.put(static_cast<std::uint64_t>(cnr), 10);
    }
    for (const Cell& c : kept) {
        std::int64_t v = DF404_INVALID;
        if (c.obs->doppler && c.rough_rate != DF399_INVALID) {
            const double rate = -*c.obs->doppler * wavelength(c.obs->band);
            const std::int64_t f =
                std::llround((rate - static_cast<double>(c.rough_rate)) * 1e4);
            if (std::llabs(f) <= 16383) v = f;
        }
        w.put_signed(v, 15);
    }

    result.payload = w.take();
    if (result.payload.size() > RTCM3_MAX_PAYLOAD)
        throw Error("msm7_encode: payload exceeds frame capacity");
    return result;
}

Msm7DecodeResult msm7_decode(std::span<const std::uint8_t> payload, int week_hint) {
    BitReader r(payload);

    const int msg = static_cast<int>(r.get(12));
    if (!msm7_supported_message(msg))
        throw UnsupportedMessageError("unsupported message number " + std::to_string(msg));

    Msm7DecodeResult out;
    out.constellation = msm7_constellation(msg);
    out.station_id = static_cast<int>(r.get(12));
    const std::uint64_t epoch_field = r.get(30);
    out.multiple_message = r.get(1) != 0;
    r.get(3);  /* IODS */
    r.get(7);  /* reserved */
    r.get(2);  /* clock steering */
    r.get(2);  /* external clock */
    r.get(1);  /* smoothing type */
    r.get(3);  /* smoothing interval */
    out.epoch.time = msm7_epoch_time(out.constellation, epoch_field, week_hint);

    const std::uint64_t sat_mask = r.get(64);
    const std::uint32_t sig_mask = static_cast<std::uint32_t>(r.get(32));

    std::vector<int> prns, signal_ids;
    for (int i = 1; i <= 64; ++i)
        if (sat_mask & (1ULL << (64 - i))) prns.push_back(i);
    for (int i = 1; i <= 32; ++i)
        if (sig_mask & (1u << (32 - i))) signal_ids.push_back(i);

    const std::size_t nsat = prns.size(), nsig = signal_ids.size();
    if (nsat == 0 || nsig == 0) throw MalformedMessageError("msm7: empty masks");
    if (nsat * nsig > 64) throw MalformedMessageError("msm7: cell mask exceeds 64 bits");

    struct CellRef {
        int prn;
        int signal_id;
    };
    std::vector<CellRef> cells;
    for (std::size_t s = 0; s < nsat; ++s)
        for (std::size_t g = 0; g < nsig; ++g)
            if (r.get(1)) cells.push_back({prns[s], signal_ids[g]});

    std::map<int, std::int64_t> rough_units, rough_rate;
    for (int prn : prns) rough_units[prn] = static_cast<std::int64_t>(r.get(8)) << 10;
    for (int prn : prns) { (void)prn; r.get(4); }
    for (int prn : prns) rough_units[prn] |= static_cast<std::int64_t>(r.get(10));
    for (int prn : prns) rough_rate[prn] = r.get_signed(14);

    const std::size_t ncell = cells.size();
    std::vector<std::int64_t> fine_pr(ncell), fine_cp(ncell), lock(ncell), half(ncell),
        cnr(ncell), fine_rate(ncell);
    for (auto& v : fine_pr) v = r.get_signed(20);
    for (auto& v : fine_cp) v = r.get_signed(24);
    for (auto& v : lock) v = static_cast<std::int64_t>(r.get(10));
    for (auto& v : half) v = static_cast<std::int64_t>(r.get(1));
    for (auto& v : cnr) v = static_cast<std::int64_t>(r.get(10));
    for (auto& v : fine_rate) v = r.get_signed(15);

    for (std::size_t i = 0; i < ncell; ++i) {
        const auto band = band_for_signal_id(out.constellation, cells[i].signal_id);
        const SatId sat{out.constellation, cells[i].prn};
        if (!band || !valid(sat) || fine_pr[i] == DF405_INVALID) {
            ++out.skipped_cells;
            continue;
        }

        Observation o;
        o.sat = sat;
        o.band = *band;
        const double rough_ms = static_cast<double>(rough_units[cells[i].prn]) / 1024.0;
        o.pseudorange =
            (rough_ms + static_cast<double>(fine_pr[i]) / 536870912.0) * RANGE_MS;
        if (fine_cp[i] != DF406_INVALID) {
            const double phase_ms = rough_ms + static_cast<double>(fine_cp[i]) / 2147483648.0;
            o.carrier_phase = phase_ms * RANGE_MS / wavelength(*band);
        }
        if (rough_rate[cells[i].prn] != DF399_INVALID) {
            double rate = static_cast<double>(rough_rate[cells[i].prn]);
            if (fine_rate[i] != DF404_INVALID) rate += static_cast<double>(fine_rate[i]) * 1e-4;
            o.doppler = -rate / wavelength(*band);
        }
        o.cn0 = static_cast<double>(cnr[i]) / 16.0;
        o.loss_of_lock = lock[i] == 0;
        out.epoch.observations.push_back(std::move(o));
    }
    return out;
}

std::vector<std::vector<std::uint8_t>> encode_epoch_frames(const Epoch& epoch, int station_id) {
    constexpr Constellation order[] = {Constellation::GPS, Constellation::GLONASS,
                                       Constellation::GALILEO, Constellation::BEIDOU};
    std::vector<Constellation> present;
    for (Constellation c : order)
        for (const auto& o : epoch.observations)
            if (o.sat.constellation == c) {
                present.push_back(c);
                break;
            }

    std::vector<Constellation> encodable;
    for (Constellation c : present) {
        try {
            msm7_encode(epoch, c, station_id, false);
            encodable.push_back(c);
        } catch (const Error&) {
            /* constellation with nothing encodable: skip */
        }
    }

    std::vector<std::vector<std::uint8_t>> frames;
    for (std::size_t i = 0; i < encodable.size(); ++i) {
        const bool more = i + 1 < encodable.size();
        frames.push_back(frame_encode(msm7_encode(epoch, encodable[i], station_id, more).payload));
    }
    return frames;
}

} // namespace rtkpipe
