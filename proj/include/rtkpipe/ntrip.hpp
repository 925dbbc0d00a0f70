#ifndef RTKPIPE_NTRIP_HPP
#define RTKPIPE_NTRIP_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rtkpipe/common.hpp"

namespace rtkpipe {

/* NTRIP 1.0 wire dialect: ICY responses, SOURCE publish verb, CRLF lines,
 * Basic authorization. Default port 2101. */

struct SourcetableEntry {
    std::string mountpoint; /* no whitespace, no '/' */
    std::string identifier;
    std::string format = "RTCM 3.2";
    std::string nav_system = "GPS+GLO+GAL+BDS";
    std::string country = "CHN";
    double latitude = 0.0;
    double longitude = 0.0;
    bool auth_required = false;

    std::string str_line() const; /* "STR;<mount>;..." */
};

std::string base64_encode(std::string_view input);
std::string base64_decode(std::string_view input);

/* credentials are stored salted+hashed (SHA-256 of "<salt>:<secret>") */
std::string hash_credential(const std::string& salt, const std::string& secret);
bool verify_credential(const std::string& salt, const std::string& hash_hex,
                       const std::string& secret);

/* ---- request grammar ------------------------------------------------------ */

struct ClientSubscribe {
    std::string mountpoint;
    std::optional<std::pair<std::string, std::string>> credential; /* user, password */
    std::string agent;
};
struct ServerPublish {
    std::string mountpoint;
    std::string password;
    std::string agent;
};
struct SourcetableRequest {};
struct Malformed {
    std::string reason;
};
using NtripRequest = std::variant<ClientSubscribe, ServerPublish, SourcetableRequest, Malformed>;

/// Classifies an initial request block (terminated by CRLF CRLF or the 4096
/// byte cap). "GET /" and unknown verbs follow the grammar only; mountpoint
/// existence is the caster's call.
NtripRequest parse_request(std::string_view block);

inline constexpr std::size_t NTRIP_REQUEST_CAP = 4096;

/* ---- caster ----------------------------------------------------------------- */

struct CasterMountConfig {
    SourcetableEntry entry;
    std::string source_salt, source_hash; /* publisher password */
    /* user -> (salt, hash); consulted when entry.auth_required */
    std::map<std::string, std::pair<std::string, std::string>> users;
};

struct CasterConfig {
    std::uint16_t port = 2101;
    std::size_t subscriber_buffer_limit = 262144; /* bytes; overflow disconnects */
    double idle_timeout = 30.0;                   /* s, half-open connections */
    std::map<std::string, CasterMountConfig> mounts;
};

/* caster config file: key = value lines; see docs/ntrip.md */
CasterConfig parse_caster_config(const std::string& text);
CasterConfig read_caster_config(const std::string& path);

struct MountpointStats {
    bool publisher_active = false;
    int subscribers = 0;
    std::uint64_t bytes_relayed = 0;
};

/// NTRIP caster service: one publisher and any number of subscribers per
/// mountpoint, byte-exact fan-out in publication order.
class Caster {
public:
    explicit Caster(CasterConfig config);
    ~Caster();

    Caster(const Caster&) = delete;
    Caster& operator=(const Caster&) = delete;

    void start(); /* binds and serves; throws Error on bind failure */
    void stop();

    std::uint16_t port() const; /* actual port (config port 0 picks one) */
    MountpointStats stats(const std::string& mount) const;
    std::string sourcetable_text() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/* ---- client / publisher sessions -------------------------------------------- */

struct NtripClientConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 2101;
    std::string mountpoint;
    std::string user, password;
    bool auto_reconnect = true;
    double reconnect_base_s = 1.0; /* doubles per attempt, capped at 60 s */
    double reconnect_cap_s = 60.0;
    double io_timeout_s = 10.0;
};

struct NtripRejected : Error {
    NtripRejected(const std::string& status, std::string sourcetable_text = {})
        : Error("ntrip: " + status), status_line(status),
          sourcetable(std::move(sourcetable_text)) {}
    std::string status_line;
    std::string sourcetable; /* filled when the caster answered with one */
};

/// Subscribing session: handshake then a relayed byte stream, reconnecting
/// with exponential backoff when enabled. Single-owner.
class NtripClient {
public:
    explicit NtripClient(NtripClientConfig config);
    ~NtripClient();

    NtripClient(const NtripClient&) = delete;
    NtripClient& operator=(const NtripClient&) = delete;

    void connect(); /* throws NtripRejected / Error */

    /// Bytes from the stream; 0 on orderly end when reconnect is off.
    std::size_t read(std::uint8_t* buf, std::size_t len);
    void close();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Publishing session (the NtripServer role): SOURCE handshake then a byte
/// sink. Single-owner.
class NtripPublisher {
public:
    NtripPublisher(const std::string& host, std::uint16_t port, const std::string& mountpoint,
                   const std::string& password);
    ~NtripPublisher();

    NtripPublisher(const NtripPublisher&) = delete;
    NtripPublisher& operator=(const NtripPublisher&) = delete;

    void connect(); /* throws NtripRejected / Error */
    void publish(std::span<const std::uint8_t> bytes);
    void close();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace rtkpipe

#endif
