#ifndef RTKPIPE_RTCM_HPP
#define RTKPIPE_RTCM_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "rtkpipe/obs.hpp"

namespace rtkpipe {

/* RTCM 3 framing: preamble 0xD3, 6 reserved bits, 10-bit payload length,
 * payload, CRC-24Q over everything preceding the CRC.
 * Observation messages are MSM7, types 1077/1087/1097/1127.
 * Field layout follows RTCM Standard 10403.2; see docs/rtcm_msm7.md. */

inline constexpr std::uint8_t RTCM3_PREAMBLE = 0xD3;
inline constexpr std::size_t RTCM3_MAX_PAYLOAD = 1023;
inline constexpr std::size_t RTCM3_OVERHEAD = 6; /* 3 header + 3 CRC bytes */

inline constexpr double RANGE_MS = CLIGHT * 0.001; /* meters per millisecond */

struct UnsupportedMessageError : Error {
    using Error::Error;
};
struct MalformedMessageError : Error {
    using Error::Error;
};

/// CRC-24Q: generator 0x1864CFB, zero init, no final xor, MSB first.
std::uint32_t crc24q(std::span<const std::uint8_t> data);

/// Wraps a payload (<= 1023 bytes) into a framed RTCM message.
std::vector<std::uint8_t> frame_encode(std::span<const std::uint8_t> payload);

struct FrameDecodeResult {
    enum class Status { frame, need_more };
    Status status = Status::need_more;
    std::vector<std::uint8_t> payload;
    /// frame: bytes consumed including skipped garbage.
    /// need_more: leading bytes that are certainly garbage and may be dropped.
    std::size_t consumed = 0;
};

/// Resynchronizing scanner: skips bytes until a preamble with a valid CRC is
/// found. CRC mismatch skips that preamble candidate and keeps scanning.
FrameDecodeResult frame_decode(std::span<const std::uint8_t> stream);

/// Stateful frame scanner for a byte stream (single-owner session).
class RtcmStreamDecoder {
public:
    void feed(std::span<const std::uint8_t> bytes);
    /// Next decoded payload, or empty when more bytes are needed.
    std::optional<std::vector<std::uint8_t>> next_frame();

    std::uint64_t frames_decoded() const { return frames_; }
    std::uint64_t bytes_discarded() const { return discarded_; }

private:
    std::vector<std::uint8_t> buf_;
    std::uint64_t frames_ = 0;
    std::uint64_t discarded_ = 0;
};

int msm7_message_number(Constellation c); /* 1077/1087/1097/1127 */
bool msm7_supported_message(int message_number);
Constellation msm7_constellation(int message_number);

/* MSM 10-bit high-resolution lock time mapping (DF407) */
int msm_lock_indicator(double lock_time_ms);
double msm_lock_time_ms(int indicator);

struct Msm7EncodeResult {
    std::vector<std::uint8_t> payload;
    int dropped = 0; /* observations omitted (field overflow) */
};

/// Packs one constellation's observations of an epoch into an MSM7 payload.
/// Unencodable observations are dropped with a count; throws Error when no
/// observation survives.
Msm7EncodeResult msm7_encode(const Epoch& epoch, Constellation constellation, int station_id,
                             bool multiple_message = false);

struct Msm7DecodeResult {
    Epoch epoch; /* week resolved against the hint (0 when none given) */
    int station_id = 0;
    Constellation constellation = Constellation::GPS;
    bool multiple_message = false;
    int skipped_cells = 0; /* cells with unknown signal ids */
};

/// Inverse of msm7_encode up to field quantization.
/// Throws UnsupportedMessageError / MalformedMessageError.
Msm7DecodeResult msm7_decode(std::span<const std::uint8_t> payload, int week_hint = 0);

/// All MSM7 frames for an epoch (constellation order G/R/E/C), multiple-message
/// bit set on all but the last.
std::vector<std::vector<std::uint8_t>> encode_epoch_frames(const Epoch& epoch, int station_id);

} // namespace rtkpipe

#endif
