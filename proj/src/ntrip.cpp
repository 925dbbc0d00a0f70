#include "rtkpipe/ntrip.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace rtkpipe {

/* ---- base64 / credential hashing ------------------------------------------ */

static const char B64_ALPHABET[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(std::string_view input) {
    std::string out;
    out.reserve((input.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < input.size()) {
        const unsigned v = (static_cast<unsigned char>(input[i]) << 16) |
                           (static_cast<unsigned char>(input[i + 1]) << 8) |
                           static_cast<unsigned char>(input[i + 2]);
        out += B64_ALPHABET[(v >> 18) & 63];
        out += B64_ALPHABET[(v >> 12) & 63];
        out += B64_ALPHABET[(v >> 6) & 63];
        out += B64_ALPHABET[v & 63];
        i += 3;
    }
    const std::size_t rest = input.size() - i;
    if (rest == 1) {
        const unsigned v = static_cast<unsigned char>(input[i]) << 16;
        out += B64_ALPHABET[(v >> 18) & 63];
        out += B64_ALPHABET[(v >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        const unsigned v = (static_cast<unsigned char>(input[i]) << 16) |
                           (static_cast<unsigned char>(input[i + 1]) << 8);
        out += B64_ALPHABET[(v >> 18) & 63];
        out += B64_ALPHABET[(v >> 12) & 63];
        out += B64_ALPHABET[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::string base64_decode(std::string_view input) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    int acc = 0, bits = 0;
    for (const char c : input) {
        if (c == '=') break;
        const int v = value(c);
        if (v < 0) continue;
        acc = (acc << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((acc >> bits) & 0xFF);
        }
    }
    return out;
}

std::string hash_credential(const std::string& salt, const std::string& secret) {
    const std::string data = salt + ":" + secret;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    static const char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xF];
    }
    return out;
}

bool verify_credential(const std::string& salt, const std::string& hash_hex,
                       const std::string& secret) {
    return hash_credential(salt, secret) == hash_hex;
}

/* ---- sourcetable ------------------------------------------------------------ */

std::string SourcetableEntry::str_line() const {
    char buf[512];
    std::snprintf(buf, sizeof buf, "STR;%s;%s;%s;;2;%s;;%s;%.4f;%.4f;0;0;;;%c;N;0;;",
                  mountpoint.c_str(), identifier.c_str(), format.c_str(), nav_system.c_str(),
                  country.c_str(), latitude, longitude, auth_required ? 'B' : 'N');
    return buf;
}

/* ---- request grammar --------------------------------------------------------- */

namespace {

std::vector<std::string> split_lines(std::string_view block) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < block.size()) {
        std::size_t eol = block.find("\r\n", pos);
        if (eol == std::string_view::npos) eol = block.size();
        lines.emplace_back(block.substr(pos, eol - pos));
        pos = eol + 2;
    }
    return lines;
}

std::string header_value(const std::vector<std::string>& lines, std::string_view name) {
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string& l = lines[i];
        const std::size_t colon = l.find(':');
        if (colon == std::string::npos) continue;
        std::string key = l.substr(0, colon);
        std::transform(key.begin(), key.end(), key.begin(), ::tolower);
        std::string want(name);
        std::transform(want.begin(), want.end(), want.begin(), ::tolower);
        if (key != want) continue;
        std::size_t v = colon + 1;
        while (v < l.size() && l[v] == ' ') ++v;
        return l.substr(v);
    }
    return "";
}

bool valid_mount_token(const std::string& m) {
    if (m.empty()) return false;
    for (const char c : m)
        if (c == '/' || c == ' ' || c == '\t' || c == ';') return false;
    return true;
}

} // namespace

NtripRequest parse_request(std::string_view block) {
    if (block.size() > NTRIP_REQUEST_CAP) return Malformed{"request exceeds cap"};
    const auto lines = split_lines(block);
    if (lines.empty() || lines[0].empty()) return Malformed{"empty request"};

    std::istringstream first(lines[0]);
    std::string verb;
    first >> verb;

    if (verb == "GET") {
        std::string path, version;
        first >> path >> version;
        if (path.empty() || path[0] != '/' || version.rfind("HTTP/", 0) != 0)
            return Malformed{"bad request line"};
        if (path == "/") return SourcetableRequest{};

        const std::string mount = path.substr(1);
        if (!valid_mount_token(mount)) return Malformed{"bad mountpoint token"};

        ClientSubscribe sub;
        sub.mountpoint = mount;
        sub.agent = header_value(lines, "User-Agent");
        const std::string auth = header_value(lines, "Authorization");
        if (auth.rfind("Basic ", 0) == 0) {
            const std::string plain = base64_decode(auth.substr(6));
            const std::size_t colon = plain.find(':');
            if (colon != std::string::npos)
                sub.credential = {plain.substr(0, colon), plain.substr(colon + 1)};
        }
        return sub;
    }

    if (verb == "SOURCE") {
        std::string password, path;
        first >> password >> path;
        if (path.empty() || path[0] != '/') return Malformed{"bad SOURCE line"};
        const std::string mount = path.substr(1);
        if (!valid_mount_token(mount)) return Malformed{"bad mountpoint token"};
        return ServerPublish{mount, password, header_value(lines, "Source-Agent")};
    }

    return Malformed{"unknown verb '" + verb + "'"};
}

/* ---- caster config ------------------------------------------------------------ */

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

CasterConfig parse_caster_config(const std::string& text) {
    CasterConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;

        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("caster config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "port") cfg.port = static_cast<std::uint16_t>(std::stoi(value));
        else if (key == "buffer_limit") cfg.subscriber_buffer_limit = std::stoul(value);
        else if (key == "idle_timeout") cfg.idle_timeout = std::stod(value);
        else if (key == "mount") {
            const auto f = split(value, ';');
            if (f.size() != 6)
                throw Error("caster config: mount wants NAME;identifier;country;lat;lon;B|N");
            CasterMountConfig m;
            m.entry.mountpoint = trim(f[0]);
            m.entry.identifier = trim(f[1]);
            m.entry.country = trim(f[2]);
            m.entry.latitude = std::stod(f[3]);
            m.entry.longitude = std::stod(f[4]);
            m.entry.auth_required = trim(f[5]) == "B";
            if (!valid_mount_token(m.entry.mountpoint))
                throw Error("caster config: bad mountpoint name '" + m.entry.mountpoint + "'");
            if (cfg.mounts.count(m.entry.mountpoint))
                throw Error("caster config: duplicate mountpoint " + m.entry.mountpoint);
            cfg.mounts[m.entry.mountpoint] = std::move(m);
        } else if (key == "source_password") {
            const auto f = split(value, ':');
            if (f.size() != 3)
                throw Error("caster config: source_password wants MOUNT:salt:sha256hex");
            auto it = cfg.mounts.find(trim(f[0]));
            if (it == cfg.mounts.end())
                throw Error("caster config: source_password for unknown mount " + f[0]);
            it->second.source_salt = trim(f[1]);
            it->second.source_hash = trim(f[2]);
        } else if (key == "client_user") {
            const auto f = split(value, ':');
            if (f.size() != 4)
                throw Error("caster config: client_user wants MOUNT:user:salt:sha256hex");
            auto it = cfg.mounts.find(trim(f[0]));
            if (it == cfg.mounts.end())
                throw Error("caster config: client_user for unknown mount " + f[0]);
            it->second.users[trim(f[1])] = {trim(f[2]), trim(f[3])};
        } else {
            throw Error("caster config line " + std::to_string(lineno) + ": unknown key '" + key +
                        "'");
        }
    }
    if (cfg.mounts.empty()) throw Error("caster config: no mountpoints");
    return cfg;
}

CasterConfig read_caster_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open caster config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_caster_config(ss.str());
}

/* ---- socket helpers ------------------------------------------------------------ */

namespace {

void set_recv_timeout(int fd, double seconds) {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(seconds);
    tv.tv_usec = static_cast<suseconds_t>((seconds - static_cast<double>(tv.tv_sec)) * 1e6);
    setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

bool send_all(int fd, const std::uint8_t* data, std::size_t len) {
    std::size_t off = 0;
    while (off < len) {
        const ssize_t n = ::send(fd, data + off, len - off, MSG_NOSIGNAL);
        if (n <= 0) return false;
        off += static_cast<std::size_t>(n);
    }
    return true;
}

bool send_str(int fd, const std::string& s) {
    return send_all(fd, reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

int connect_to(const std::string& host, std::uint16_t port, double timeout_s) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port_str = std::to_string(port);
    if (getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res) != 0 || !res)
        throw Error("ntrip: cannot resolve " + host);

    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        set_recv_timeout(fd, timeout_s);
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0) throw Error("ntrip: cannot connect to " + host + ":" + port_str);
    return fd;
}

/// Reads until CRLFCRLF or cap; returns the block (terminator included) and
/// leaves any surplus in `surplus`. With `single_line_errors`, a complete
/// first line starting with "ERROR" also terminates (NTRIP 1.0 rejections
/// carry no blank line).
bool read_request_block(int fd, double idle_timeout, std::string* block, std::string* surplus,
                        bool single_line_errors = false) {
    block->clear();
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::duration<double>(idle_timeout);
    char buf[1024];
    while (block->size() < NTRIP_REQUEST_CAP) {
        const auto term = block->find("\r\n\r\n");
        if (term != std::string::npos) {
            if (surplus) *surplus = block->substr(term + 4);
            block->resize(term + 4);
            return true;
        }
        if (single_line_errors && block->rfind("ERROR", 0) == 0) {
            const auto eol = block->find("\r\n");
            if (eol != std::string::npos) {
                if (surplus) *surplus = block->substr(eol + 2);
                block->resize(eol + 2);
                return true;
            }
        }
        if (std::chrono::steady_clock::now() > deadline) return false;
        const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
        if (n == 0) return false;
        if (n < 0) {
            if (errno == EAGAIN || errno == EWOULDBLOCK) continue;
            return false;
        }
        block->append(buf, static_cast<std::size_t>(n));
    }
    return false; /* cap exceeded */
}

} // namespace

/* ---- caster --------------------------------------------------------------------- */

struct Caster::Impl {
    struct Subscriber {
        int fd;
        std::mutex m;
        std::condition_variable cv;
        std::deque<std::uint8_t> queue;
        bool overflow = false;
        bool stream_end = false;
    };

    struct Mount {
        CasterMountConfig cfg;
        mutable std::mutex m;
        bool publisher_active = false;
        std::uint64_t bytes_relayed = 0;
        std::vector<std::shared_ptr<Subscriber>> subs;
    };

    CasterConfig cfg;
    std::map<std::string, std::unique_ptr<Mount>> mounts;
    int listen_fd = -1;
    std::uint16_t port = 0;
    std::atomic<bool> running{false};
    std::thread accept_thread;
    std::mutex threads_m;
    std::vector<std::thread> threads;
    std::mutex fds_m;
    std::set<int> fds;

    explicit Impl(CasterConfig c) : cfg(std::move(c)) {
        for (auto& [name, mc] : cfg.mounts) {
            auto mount = std::make_unique<Mount>();
            mount->cfg = mc;
            mounts[name] = std::move(mount);
        }
    }

    void track(int fd) {
        std::lock_guard lk(fds_m);
        fds.insert(fd);
    }
    void untrack_and_close(int fd) {
        {
            std::lock_guard lk(fds_m);
            fds.erase(fd);
        }
        ::close(fd);
    }

    std::string sourcetable() const {
        std::string body;
        for (const auto& [name, mount] : mounts) body += mount->cfg.entry.str_line() + "\r\n";
        body += "ENDSOURCETABLE\r\n";
        std::string head = "SOURCETABLE 200 OK\r\nServer: rtkpipe/1.0\r\n"
                           "Content-Type: text/plain\r\nContent-Length: " +
                           std::to_string(body.size()) + "\r\n\r\n";
        return head + body;
    }

    void serve_connection(int fd) {
        set_recv_timeout(fd, 1.0);
        std::string block, surplus;
        if (!read_request_block(fd, cfg.idle_timeout, &block, &surplus)) {
            send_str(fd, "HTTP/1.0 400 Bad Request\r\n\r\n");
            untrack_and_close(fd);
            return;
        }

        const NtripRequest req = parse_request(block);
        if (std::holds_alternative<Malformed>(req)) {
            send_str(fd, "HTTP/1.0 400 Bad Request\r\n\r\n");
            untrack_and_close(fd);
            return;
        }
        if (std::holds_alternative<SourcetableRequest>(req)) {
            send_str(fd, sourcetable());
            untrack_and_close(fd);
            return;
        }

        if (const auto* sub = std::get_if<ClientSubscribe>(&req)) {
            serve_subscriber(fd, *sub);
            return;
        }
        if (const auto* pub = std::get_if<ServerPublish>(&req)) {
            serve_publisher(fd, *pub, surplus);
            return;
        }
        untrack_and_close(fd);
    }

    void serve_subscriber(int fd, const ClientSubscribe& req) {
        const auto it = mounts.find(req.mountpoint);
        if (it == mounts.end()) {
            /* unknown mountpoint: answer with the sourcetable */
            send_str(fd, sourcetable());
            untrack_and_close(fd);
            return;
        }
        Mount& mount = *it->second;

        if (mount.cfg.entry.auth_required) {
            bool ok = false;
            if (req.credential) {
                const auto user = mount.cfg.users.find(req.credential->first);
                if (user != mount.cfg.users.end())
                    ok = verify_credential(user->second.first, user->second.second,
                                           req.credential->second);
            }
            if (!ok) {
                send_str(fd, "HTTP/1.0 401 Unauthorized\r\n\r\n");
                untrack_and_close(fd);
                return;
            }
        }

        if (!send_str(fd, "ICY 200 OK\r\n\r\n")) {
            untrack_and_close(fd);
            return;
        }

        auto sub = std::make_shared<Subscriber>();
        sub->fd = fd;
        {
            std::lock_guard lk(mount.m);
            mount.subs.push_back(sub);
        }

        std::vector<std::uint8_t> chunk;
        bool ended = false;
        while (running && !ended) {
            chunk.clear();
            {
                std::unique_lock lk(sub->m);
                sub->cv.wait_for(lk, std::chrono::milliseconds(100));
                if (sub->overflow) break;
                ended = sub->stream_end && sub->queue.empty();
                chunk.assign(sub->queue.begin(), sub->queue.end());
                sub->queue.clear();
            }
            if (!chunk.empty() && !send_all(fd, chunk.data(), chunk.size())) break;
        }

        {
            std::lock_guard lk(mount.m);
            std::erase(mount.subs, sub);
        }
        untrack_and_close(fd);
    }

    void serve_publisher(int fd, const ServerPublish& req, const std::string& surplus) {
        const auto it = mounts.find(req.mountpoint);
        if (it == mounts.end()) {
            send_str(fd, "ERROR - Bad Mountpoint\r\n");
            untrack_and_close(fd);
            return;
        }
        Mount& mount = *it->second;

        if (mount.cfg.source_hash.empty() ||
            !verify_credential(mount.cfg.source_salt, mount.cfg.source_hash, req.password)) {
            send_str(fd, "ERROR - Bad Password\r\n");
            untrack_and_close(fd);
            return;
        }

        {
            /* at most one publisher, decided atomically under the mount lock */
            std::lock_guard lk(mount.m);
            if (mount.publisher_active) {
                send_str(fd, "ERROR - Mount Point Taken or Invalid\r\n");
                untrack_and_close(fd);
                return;
            }
            mount.publisher_active = true;
        }

        if (!send_str(fd, "ICY 200 OK\r\n\r\n")) {
            end_stream(mount);
            untrack_and_close(fd);
            return;
        }

        if (!surplus.empty())
            publish(mount, reinterpret_cast<const std::uint8_t*>(surplus.data()), surplus.size());

        std::uint8_t buf[4096];
        while (running) {
            const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
            if (n == 0) break;
            if (n < 0) {
                if (errno == EAGAIN || errno == EWOULDBLOCK) continue;
                break;
            }
            publish(mount, buf, static_cast<std::size_t>(n));
        }

        end_stream(mount);
        untrack_and_close(fd);
    }

    void publish(Mount& mount, const std::uint8_t* data, std::size_t len) {
        std::lock_guard lk(mount.m);
        mount.bytes_relayed += len;
        for (const auto& sub : mount.subs) {
            std::lock_guard sl(sub->m);
            if (sub->overflow) continue;
            if (sub->queue.size() + len > cfg.subscriber_buffer_limit) {
                sub->overflow = true; /* slow reader: cut it loose */
            } else {
                sub->queue.insert(sub->queue.end(), data, data + len);
            }
            sub->cv.notify_one();
        }
    }

    void end_stream(Mount& mount) {
        std::lock_guard lk(mount.m);
        mount.publisher_active = false;
        for (const auto& sub : mount.subs) {
            std::lock_guard sl(sub->m);
            sub->stream_end = true;
            sub->cv.notify_one();
        }
    }

    void accept_loop() {
        while (running) {
            sockaddr_storage addr{};
            socklen_t len = sizeof addr;
            const int fd = ::accept(listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
            if (fd < 0) {
                if (!running) break;
                continue;
            }
            track(fd);
            std::lock_guard lk(threads_m);
            threads.emplace_back([this, fd] { serve_connection(fd); });
        }
    }
};

Caster::Caster(CasterConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Caster::~Caster() { stop(); }

void Caster::start() {
    Impl& im = *impl_;
    im.listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (im.listen_fd < 0) throw Error("caster: cannot create socket");
    const int one = 1;
    setsockopt(im.listen_fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(im.cfg.port);
    if (::bind(im.listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(im.listen_fd);
        throw Error("caster: cannot bind port " + std::to_string(im.cfg.port));
    }
    if (::listen(im.listen_fd, 64) != 0) {
        ::close(im.listen_fd);
        throw Error("caster: listen failed");
    }

    socklen_t len = sizeof addr;
    getsockname(im.listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
    im.port = ntohs(addr.sin_port);

    im.running = true;
    im.accept_thread = std::thread([&im] { im.accept_loop(); });
}

void Caster::stop() {
    Impl& im = *impl_;
    if (!im.running.exchange(false)) return;

    ::shutdown(im.listen_fd, SHUT_RDWR);
    ::close(im.listen_fd);
    {
        std::lock_guard lk(im.fds_m);
        for (const int fd : im.fds) ::shutdown(fd, SHUT_RDWR);
    }
    if (im.accept_thread.joinable()) im.accept_thread.join();
    std::lock_guard lk(im.threads_m);
    for (auto& t : im.threads)
        if (t.joinable()) t.join();
    im.threads.clear();
}

std::uint16_t Caster::port() const { return impl_->port; }

MountpointStats Caster::stats(const std::string& mount) const {
    const auto it = impl_->mounts.find(mount);
    if (it == impl_->mounts.end()) throw Error("caster: unknown mountpoint " + mount);
    std::lock_guard lk(it->second->m);
    return {it->second->publisher_active, static_cast<int>(it->second->subs.size()),
            it->second->bytes_relayed};
}

std::string Caster::sourcetable_text() const { return impl_->sourcetable(); }

/* ---- client session ---------------------------------------------------------------- */

struct NtripClient::Impl {
    NtripClientConfig cfg;
    int fd = -1;
    bool connected = false;
    int attempts = 0;
    std::string pending; /* stream bytes that arrived with the response header */

    void do_handshake() {
        fd = connect_to(cfg.host, cfg.port, cfg.io_timeout_s);
        std::string request = "GET /" + cfg.mountpoint + " HTTP/1.0\r\n"
                              "User-Agent: NTRIP rtkpipe/1.0\r\n"
                              "Accept: */*\r\nConnection: close\r\n";
        if (!cfg.user.empty() || !cfg.password.empty())
            request += "Authorization: Basic " + base64_encode(cfg.user + ":" + cfg.password) +
                       "\r\n";
        request += "\r\n";
        if (!send_str(fd, request)) {
            ::close(fd);
            fd = -1;
            throw Error("ntrip client: send failed");
        }

        std::string block, surplus;
        if (!read_request_block(fd, cfg.io_timeout_s, &block, &surplus, true)) {
            ::close(fd);
            fd = -1;
            throw Error("ntrip client: no response from caster");
        }

        if (block.rfind("ICY 200 OK", 0) == 0) {
            pending = surplus;
            connected = true;
            attempts = 0;
            return;
        }

        if (block.rfind("SOURCETABLE 200 OK", 0) == 0) {
            /* mountpoint unknown: drain the table and report it */
            std::string table = surplus;
            char buf[1024];
            while (table.find("ENDSOURCETABLE") == std::string::npos) {
                const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
                if (n <= 0) break;
                table.append(buf, static_cast<std::size_t>(n));
            }
            ::close(fd);
            fd = -1;
            throw NtripRejected("mountpoint unknown (sourcetable received)", table);
        }

        const std::string status = block.substr(0, block.find("\r\n"));
        ::close(fd);
        fd = -1;
        throw NtripRejected(status.empty() ? "connection rejected" : status);
    }
};

NtripClient::NtripClient(NtripClientConfig config) : impl_(std::make_unique<Impl>()) {
    impl_->cfg = std::move(config);
}

NtripClient::~NtripClient() { close(); }

void NtripClient::connect() { impl_->do_handshake(); }

std::size_t NtripClient::read(std::uint8_t* buf, std::size_t len) {
    Impl& im = *impl_;
    for (;;) {
        if (!im.connected) {
            if (!im.cfg.auto_reconnect) return 0;
            const double backoff = std::min(im.cfg.reconnect_cap_s,
                                            im.cfg.reconnect_base_s * std::pow(2.0, im.attempts));
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
            ++im.attempts;
            try {
                im.do_handshake();
            } catch (const NtripRejected&) {
                throw; /* terminal: the caster answered and said no */
            } catch (const Error&) {
                continue;
            }
        }

        if (!im.pending.empty()) {
            const std::size_t n = std::min(len, im.pending.size());
            std::memcpy(buf, im.pending.data(), n);
            im.pending.erase(0, n);
            return n;
        }

        const ssize_t n = ::recv(im.fd, buf, len, 0);
        if (n > 0) return static_cast<std::size_t>(n);
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) continue;

        ::close(im.fd);
        im.fd = -1;
        im.connected = false;
        if (!im.cfg.auto_reconnect) return 0;
    }
}

void NtripClient::close() {
    if (impl_ && impl_->fd >= 0) {
        ::close(impl_->fd);
        impl_->fd = -1;
        impl_->connected = false;
    }
}

/* ---- publisher session --------------------------------------------------------------- */

struct NtripPublisher::Impl {
    std::string host;
    std::uint16_t port;
    std::string mount, password;
    int fd = -1;
};

NtripPublisher::NtripPublisher(const std::string& host, std::uint16_t port,
                               const std::string& mountpoint, const std::string& password)
    : impl_(std::make_unique<Impl>()) {
    impl_->host = host;
    impl_->port = port;
    impl_->mount = mountpoint;
    impl_->password = password;
}

NtripPublisher::~NtripPublisher() { close(); }

void NtripPublisher::connect() {
    Impl& im = *impl_;
    im.fd = connect_to(im.host, im.port, 10.0);
    const std::string request = "SOURCE " + im.password + " /" + im.mount + "\r\n"
                                "Source-Agent: NTRIP rtkpipe/1.0\r\n\r\n";
    if (!send_str(im.fd, request)) {
        ::close(im.fd);
        im.fd = -1;
        throw Error("ntrip publisher: send failed");
    }

    std::string block, surplus;
    if (!read_request_block(im.fd, 10.0, &block, &surplus, true)) {
        ::close(im.fd);
        im.fd = -1;
        throw Error("ntrip publisher: no response from caster");
    }
    if (block.rfind("ICY 200 OK", 0) != 0) {
        const std::string status = block.substr(0, block.find("\r\n"));
        ::close(im.fd);
        im.fd = -1;
        throw NtripRejected(status);
    }
}

void NtripPublisher::publish(std::span<const std::uint8_t> bytes) {
    if (impl_->fd < 0) throw Error("ntrip publisher: not connected");
    if (bytes.empty()) return;
    if (!send_all(impl_->fd, bytes.data(), bytes.size()))
        throw Error("ntrip publisher: connection lost");
}

void NtripPublisher::close() {
    if (impl_ && impl_->fd >= 0) {
        ::close(impl_->fd);
        impl_->fd = -1;
    }
}

} // namespace rtkpipe
