#pragma once

// Synthetic labelled traffic: beacon check-ins shaped by a profile spec, and
// benign web / library / DNS flows. Flows carry enough payload prefix
// (request lines, ClientHello, DNS messages) for the hint extractors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2flow/app_metadata.hpp"
#include "c2flow/error.hpp"
#include "c2flow/flow.hpp"
#include "c2flow/parallel.hpp"
#include "c2flow/pcap.hpp"

namespace c2flow {

struct SizeRange {
    std::uint32_t min = 0;
    std::uint32_t max = 0;

    friend bool operator==(const SizeRange&, const SizeRange&) = default;
};

inline void to_json(nlohmann::json& j, const SizeRange& r) { j = nlohmann::json::array({r.min, r.max}); }

inline void from_json(const nlohmann::json& j, SizeRange& r) {
    if (!j.is_array() || j.size() != 2) throw ParseError("size range must be [min, max]");
    r.min = j.at(0).get<std::uint32_t>();
    r.max = j.at(1).get<std::uint32_t>();
}

enum class SizeDistribution { Uniform, Bimodal };

struct MalleableProfileSpec {
    std::string name;
    AppProtocol protocol = AppProtocol::HTTP;
    std::string domain;
    double sleeptime = 60.0;
    double jitter = 0.0;
    SizeRange checkin{20, 1480};
    SizeRange response{20, 1480};
    double post_probability = 0.0;
    SizeRange post_size{100, 4000};
    SizeDistribution size_distribution = SizeDistribution::Uniform;
    std::optional<Ipv4> server_ip;

    void validate() const {
        auto range = [&](const SizeRange& r, const char* what) {
            if (r.min > r.max) throw ContractError(name + ": " + what + " min exceeds max");
        };
        range(checkin, "checkin");
        range(response, "response");
        range(post_size, "post_size");
        if (protocol == AppProtocol::Other) throw ContractError(name + ": protocol must be HTTP, HTTPS or DNS");
        if (!(jitter >= 0 && jitter < 1)) throw ContractError(name + ": jitter must be in [0,1)");
        if (!(post_probability >= 0 && post_probability <= 1)) throw ContractError(name + ": post_probability must be in [0,1]");
        if (!(sleeptime >= 0)) throw ContractError(name + ": sleeptime must be non-negative");
        if (domain.empty()) throw ContractError(name + ": domain is required");
        if (protocol != AppProtocol::DNS && checkin.min == 0) throw ContractError(name + ": checkin must be at least 1 byte");
    }
};

enum class BenignTrafficKind { WebBrowsing, LibraryDownload, DnsLookup };

inline std::string to_string(BenignTrafficKind k) {
    switch (k) {
        case BenignTrafficKind::WebBrowsing: return "WebBrowsing";
        case BenignTrafficKind::LibraryDownload: return "LibraryDownload";
        case BenignTrafficKind::DnsLookup: return "DnsLookup";
    }
    return "WebBrowsing";
}

struct BenignTrafficSpec {
    std::string name;
    BenignTrafficKind kind = BenignTrafficKind::WebBrowsing;
    AppProtocol protocol = AppProtocol::HTTPS;
    std::vector<std::string> domains;
    SizeRange request{200, 800};
    SizeRange response{100, 200000};
    SizeRange packets_per_flow{10, 10};
    double ratio_target = 5.0;  // bytes_dst / bytes_src, WebBrowsing only
    double mean_interarrival = 1.0;
    std::optional<Ipv4> server_ip;

    void validate() const {
        if (request.min > request.max || response.min > response.max || packets_per_flow.min > packets_per_flow.max) {
            throw ContractError(name + ": range min exceeds max");
        }
        if (kind == BenignTrafficKind::WebBrowsing && !(ratio_target > 1)) {
            throw ContractError(name + ": WebBrowsing ratio_target must exceed 1");
        }
        if ((kind == BenignTrafficKind::DnsLookup) != (protocol == AppProtocol::DNS)) {
            throw ContractError(name + ": DnsLookup and protocol DNS go together");
        }
        if (protocol == AppProtocol::Other) throw ContractError(name + ": protocol must be HTTP, HTTPS or DNS");
        if (domains.empty()) throw ContractError(name + ": at least one domain is required");
        if (kind != BenignTrafficKind::DnsLookup && request.min == 0) throw ContractError(name + ": request must be at least 1 byte");
        if (!(mean_interarrival > 0)) throw ContractError(name + ": mean_interarrival must be positive");
    }
};

inline void to_json(nlohmann::json& j, const MalleableProfileSpec& s) {
    j = nlohmann::json{{"name", s.name},
                       {"protocol", to_string(s.protocol)},
                       {"domain", s.domain},
                       {"sleeptime", s.sleeptime},
                       {"jitter", s.jitter},
                       {"checkin", s.checkin},
                       {"response", s.response},
                       {"post_probability", s.post_probability},
                       {"post_size", s.post_size},
                       {"size_distribution", s.size_distribution == SizeDistribution::Uniform ? "uniform" : "bimodal"}};
    if (s.server_ip) j["server_ip"] = s.server_ip->to_string();
}

inline void from_json(const nlohmann::json& j, MalleableProfileSpec& s) {
    j.at("name").get_to(s.name);
    s.protocol = app_protocol_from_string(j.at("protocol").get<std::string>());
    s.domain = normalize_domain(j.at("domain").get<std::string>());
    s.sleeptime = j.value("sleeptime", 60.0);
    s.jitter = j.value("jitter", 0.0);
    if (j.contains("checkin")) j.at("checkin").get_to(s.checkin);
    if (j.contains("response")) j.at("response").get_to(s.response);
    s.post_probability = j.value("post_probability", 0.0);
    if (j.contains("post_size")) j.at("post_size").get_to(s.post_size);
    const auto dist = j.value("size_distribution", std::string("uniform"));
    if (dist == "uniform") {
        s.size_distribution = SizeDistribution::Uniform;
    } else if (dist == "bimodal") {
        s.size_distribution = SizeDistribution::Bimodal;
    } else {
        throw ParseError("unknown size_distribution: " + dist);
    }
    if (j.contains("server_ip") && !j.at("server_ip").is_null()) s.server_ip = Ipv4::parse(j.at("server_ip").get<std::string>());
    s.validate();
}

inline void to_json(nlohmann::json& j, const BenignTrafficSpec& s) {
    j = nlohmann::json{{"name", s.name},
                       {"kind", to_string(s.kind)},
                       {"protocol", to_string(s.protocol)},
                       {"domains", s.domains},
                       {"request", s.request},
                       {"response", s.response},
                       {"packets_per_flow", s.packets_per_flow},
                       {"ratio_target", s.ratio_target},
                       {"mean_interarrival", s.mean_interarrival}};
    if (s.server_ip) j["server_ip"] = s.server_ip->to_string();
}

inline void from_json(const nlohmann::json& j, BenignTrafficSpec& s) {
    j.at("name").get_to(s.name);
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "WebBrowsing") {
        s.kind = BenignTrafficKind::WebBrowsing;
    } else if (kind == "LibraryDownload") {
        s.kind = BenignTrafficKind::LibraryDownload;
    } else if (kind == "DnsLookup") {
        s.kind = BenignTrafficKind::DnsLookup;
    } else {
        throw ParseError("unknown benign kind: " + kind);
    }
    s.protocol = app_protocol_from_string(j.at("protocol").get<std::string>());
    s.domains.clear();
    for (const auto& d : j.at("domains").get<std::vector<std::string>>()) s.domains.push_back(normalize_domain(d));
    if (j.contains("request")) j.at("request").get_to(s.request);
    if (j.contains("response")) j.at("response").get_to(s.response);
    if (j.contains("packets_per_flow")) j.at("packets_per_flow").get_to(s.packets_per_flow);
    s.ratio_target = j.value("ratio_target", 5.0);
    s.mean_interarrival = j.value("mean_interarrival", 1.0);
    if (j.contains("server_ip") && !j.at("server_ip").is_null()) s.server_ip = Ipv4::parse(j.at("server_ip").get<std::string>());
    s.validate();
}

// Where a generator places its traffic.
struct GenOptions {
    std::optional<Ipv4> client_ip;  // default: derived from the spec name
    double start_time = 1.7e9;
    std::uint16_t first_port = 49152;
};

namespace synth_detail {

inline constexpr std::uint32_t kMss = 1460;

inline std::uint32_t fnv1a(const std::string& s) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : s) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

inline Ipv4 derived_ip(const std::string& name, std::uint32_t base) {
    const std::uint32_t h = fnv1a(name);
    return Ipv4(base | ((h >> 8) & 0xff) << 8 | (1 + h % 254));
}

inline double quantize(double t) { return static_cast<double>(std::llround(t * 1e6)) / 1e6; }

inline std::uint32_t draw(std::mt19937_64& rng, const SizeRange& r, SizeDistribution dist = SizeDistribution::Uniform) {
    if (dist == SizeDistribution::Bimodal && r.max > r.min) {
        // half the mass on each tenth-wide end of the range
        const std::uint32_t w = std::max<std::uint32_t>(1, (r.max - r.min) / 10);
        const bool high = std::bernoulli_distribution(0.5)(rng);
        const SizeRange part = high ? SizeRange{r.max - w, r.max} : SizeRange{r.min, r.min + w};
        return std::uniform_int_distribution<std::uint32_t>(part.min, part.max)(rng);
    }
    return std::uniform_int_distribution<std::uint32_t>(r.min, r.max)(rng);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline void put16(Bytes& b, std::size_t v) {
    b.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void put24(Bytes& b, std::size_t v) {
    b.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    put16(b, v);
}

// Minimal TLS 1.3-style ClientHello record carrying SNI, padded to 517 bytes
// when the name is short.
inline Bytes client_hello(const std::string& sni, std::mt19937_64& rng) {
    auto random_bytes = [&](Bytes& b, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(rng() & 0xff));
    };
    Bytes ext;
    // server_name
    put16(ext, 0x0000);
    put16(ext, sni.size() + 5);
    put16(ext, sni.size() + 3);
    ext.push_back(0);
    put16(ext, sni.size());
    ext.insert(ext.end(), sni.begin(), sni.end());
    // supported_groups: x25519, secp256r1
    for (int v : {0x000a, 6, 4, 0x001d, 0x0017}) put16(ext, static_cast<std::size_t>(v));
    // signature_algorithms
    for (int v : {0x000d, 8, 6, 0x0403, 0x0804, 0x0401}) put16(ext, static_cast<std::size_t>(v));
    // supported_versions: TLS 1.3, 1.2
    for (int v : {0x002b, 5}) put16(ext, static_cast<std::size_t>(v));
    ext.push_back(4);
    put16(ext, 0x0304);
    put16(ext, 0x0303);
    // key_share: x25519
    for (int v : {0x0033, 38, 36, 0x001d, 32}) put16(ext, static_cast<std::size_t>(v));
    random_bytes(ext, 32);

    Bytes body;
    put16(body, 0x0303);
    random_bytes(body, 32);
    body.push_back(32);
    random_bytes(body, 32);
    const std::array<int, 8> suites = {0x1301, 0x1302, 0x1303, 0xc02b, 0xc02f, 0xc02c, 0xc030, 0xcca9};
    put16(body, suites.size() * 2);
    for (int s : suites) put16(body, static_cast<std::size_t>(s));
    body.push_back(1);
    body.push_back(0);
    // padding extension up to a 512-byte handshake message
    const std::size_t base = 4 + body.size() + 2 + ext.size();
    if (base + 4 < 512) {
        const std::size_t pad = 512 - base - 4;
        put16(ext, 0x0015);
        put16(ext, pad);
        ext.insert(ext.end(), pad, 0);
    }
    put16(body, ext.size());
    body.insert(body.end(), ext.begin(), ext.end());

    Bytes rec = {0x16, 0x03, 0x01};
    put16(rec, body.size() + 4);
    rec.push_back(0x01);
    put24(rec, body.size());
    rec.insert(rec.end(), body.begin(), body.end());
    return rec;
}

inline void put_name(Bytes& b, const std::vector<std::string>& labels) {
    for (const auto& l : labels) {
        b.push_back(static_cast<std::uint8_t>(l.size()));
        b.insert(b.end(), l.begin(), l.end());
    }
    b.push_back(0);
}

inline std::vector<std::string> split_labels(const std::string& name) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= name.size()) {
        auto dot = name.find('.', pos);
        if (dot == std::string::npos) dot = name.size();
        if (dot > pos) out.push_back(name.substr(pos, dot - pos));
        pos = dot + 1;
    }
    return out;
}

inline std::size_t name_wire_length(const std::vector<std::string>& labels) {
    std::size_t n = 1;
    for (const auto& l : labels) n += 1 + l.size();
    return n;
}

inline Bytes dns_query(std::uint16_t id, const std::vector<std::string>& labels, std::uint16_t qtype) {
    Bytes q;
    put16(q, id);
    put16(q, 0x0100);  // RD
    put16(q, 1);
    put16(q, 0);
    put16(q, 0);
    put16(q, 0);
    put_name(q, labels);
    put16(q, qtype);
    put16(q, 1);
    return q;
}

// Response echoing the question with one answer: an A record, or a TXT record
// of `rdata_len` bytes.
inline Bytes dns_response(const Bytes& query, bool txt, std::size_t rdata_len, std::mt19937_64& rng) {
    if (!txt) rdata_len = 4;
    Bytes r = query;
    r[2] = 0x81;
    r[3] = 0x80;
    r[7] = 1;  // ANCOUNT
    put16(r, 0xc00c);
    put16(r, txt ? 16 : 1);
    put16(r, 1);
    put16(r, 0);
    put16(r, 300);
    put16(r, rdata_len);
    if (txt) {
        std::size_t left = rdata_len;
        while (left > 0) {
            const std::size_t chunk = std::min<std::size_t>(255, left - 1);
            r.push_back(static_cast<std::uint8_t>(chunk));
            for (std::size_t i = 0; i < chunk; ++i) r.push_back(static_cast<std::uint8_t>('a' + rng() % 26));
            left -= chunk + 1;
        }
    } else {
        for (int i = 0; i < 4; ++i) r.push_back(static_cast<std::uint8_t>(rng() & 0xff));
    }
    return r;
}

// Labels of random hex under `domain` so that the whole name takes
// `wire_len` bytes on the wire (or as close as the domain allows).
inline std::vector<std::string> beacon_name(const std::string& domain, std::size_t wire_len, std::mt19937_64& rng) {
    auto labels = split_labels(domain);
    std::size_t need = wire_len > name_wire_length(labels) ? wire_len - name_wire_length(labels) : 0;
    need = std::min<std::size_t>(need, 255 - name_wire_length(labels));
    std::vector<std::string> prefix;
    static constexpr char hex[] = "0123456789abcdef";
    while (need >= 2) {
        std::size_t l = std::min<std::size_t>(63, need - 1);
        if (need - (l + 1) == 1) --l;  // never leave a single byte behind
        std::string s;
        for (std::size_t i = 0; i < l; ++i) s += hex[rng() % 16];
        prefix.push_back(std::move(s));
        need -= l + 1;
    }
    prefix.insert(prefix.end(), labels.begin(), labels.end());
    return prefix;
}

// Accumulates packets for one flow.
class FlowBuilder {
public:
    FlowBuilder(FlowKey key, double t0, double rtt) : t_(t0), rtt_(rtt) {
        flow_.key = key;
        flow_.first_ts = quantize(t0);
    }

    void packet(Direction dir, std::uint8_t flags, std::uint32_t l4, Bytes payload = {}) {
        PacketMeta pm;
        pm.timestamp = quantize(t_);
        pm.direction = dir;
        const std::uint32_t l4hdr = flow_.key.transport == Transport::TCP ? 20 : 8;
        pm.l4_payload = l4;
        pm.l3_payload = l4hdr + l4;
        pm.ip_total_length = 20 + pm.l3_payload;
        pm.tcp_flags = flags;
        if (payload.size() > l4) payload.resize(l4);
        flow_.packets.push_back(pm);
        flow_.payloads.push_back(std::move(payload));
        t_ += 1e-4;  // serialization gap between back-to-back packets
    }

    void wait(double dt) { t_ += dt; }
    void half_rtt() { t_ += rtt_ / 2; }

    // TCP data burst segmented at the MSS; `content` covers a prefix.
    void burst(Direction dir, std::uint32_t size, const Bytes& content = {}) {
        std::uint32_t off = 0;
        while (off < size) {
            const std::uint32_t seg = std::min(kMss, size - off);
            Bytes part;
            if (off < content.size()) {
                const auto end = std::min<std::size_t>(content.size(), off + seg);
                part.assign(content.begin() + off, content.begin() + static_cast<std::ptrdiff_t>(end));
            }
            const bool last = off + seg == size;
            packet(dir, static_cast<std::uint8_t>(tcp_flag::ACK | (last ? tcp_flag::PSH : 0)), seg, std::move(part));
            off += seg;
        }
    }

    // One request/response exchange: request burst, server ACK, response
    // burst, client ACK.
    void exchange(std::uint32_t req, const Bytes& req_content, std::uint32_t resp, const Bytes& resp_content, double think) {
        burst(Direction::ClientToServer, req, req_content);
        half_rtt();
        packet(Direction::ServerToClient, tcp_flag::ACK, 0);
        wait(think);
        burst(Direction::ServerToClient, resp, resp_content);
        half_rtt();
        packet(Direction::ClientToServer, tcp_flag::ACK, 0);
        wait(0.002);
    }

    void handshake() {
        packet(Direction::ClientToServer, tcp_flag::SYN, 0);
        half_rtt();
        packet(Direction::ServerToClient, tcp_flag::SYN | tcp_flag::ACK, 0);
        half_rtt();
        packet(Direction::ClientToServer, tcp_flag::ACK, 0);
    }

    void teardown() {
        wait(0.001);
        packet(Direction::ClientToServer, tcp_flag::FIN | tcp_flag::ACK, 0);
        half_rtt();
        packet(Direction::ServerToClient, tcp_flag::FIN | tcp_flag::ACK, 0);
        half_rtt();
        packet(Direction::ClientToServer, tcp_flag::ACK, 0);
    }

    [[nodiscard]] double now() const { return t_; }

    FlowRecord finish(Label label) {
        flow_.last_ts = flow_.packets.back().timestamp;
        flow_.duration = flow_.last_ts - flow_.first_ts;
        flow_.label = label;
        flow_.hints = compute_hints(flow_, flow_.payloads);
        return std::move(flow_);
    }

private:
    FlowRecord flow_;
    double t_;
    double rtt_;
};

// Hands out client endpoints: sequential ephemeral ports, moving to the next
// client address when the port range is exhausted.
class Endpoints {
public:
    Endpoints(Ipv4 client, std::uint16_t first_port) : ip_(client.value()), port_(first_port), first_(first_port) {}

    std::pair<Ipv4, std::uint16_t> next() {
        auto out = std::make_pair(Ipv4(ip_), port_);
        if (port_ == 65535) {
            port_ = first_;
            ++ip_;
        } else {
            ++port_;
        }
        return out;
    }

private:
    std::uint32_t ip_;
    std::uint16_t port_;
    std::uint16_t first_;
};

inline std::uint16_t server_port_for(AppProtocol p) {
    switch (p) {
        case AppProtocol::HTTP: return 80;
        case AppProtocol::HTTPS: return 443;
        case AppProtocol::DNS: return 53;
        default: return 0;
    }
}

inline std::string random_token(std::mt19937_64& rng, std::size_t n) {
    static constexpr char alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string s;
    s.reserve(n);
    for (std::size_t i = 0; i < n; ++i) s += alphabet[rng() % 64];
    return s;
}

// HTTP request text of exactly `size` bytes when the headers fit (the body
// or cookie pads it), otherwise the first `size` bytes of the headers.
inline Bytes http_request(const std::string& method, const std::string& path, const std::string& host, std::uint32_t size,
                          std::mt19937_64& rng) {
    std::string head = method + " " + path + " HTTP/1.1\r\nHost: " + host + "\r\nAccept: */*\r\n";
    std::string text;
    if (method == "GET") {
        const std::string open = "Cookie: ";
        const std::size_t fixed = head.size() + open.size() + 4;
        if (size > fixed) {
            text = head + open + random_token(rng, size - fixed) + "\r\n\r\n";
        } else {
            text = head + "\r\n";
        }
    } else {
        std::string h = head + "Content-Length: ";
        std::string body_len = "0";
        for (int i = 0; i < 3; ++i) {
            const std::size_t hl = h.size() + body_len.size() + 4;
            body_len = std::to_string(size > hl ? size - hl : 0);
        }
        text = h + body_len + "\r\n\r\n";
    }
    if (text.size() > size) text.resize(size);
    return Bytes(text.begin(), text.end());
}

inline Bytes http_response(std::uint32_t size) {
    std::string head = "HTTP/1.1 200 OK\r\nContent-Type: application/octet-stream\r\nContent-Length: ";
    std::string len = std::to_string(size > head.size() + 8 ? size - head.size() - 8 : 0);
    std::string text = head + len + "\r\n\r\n";
    if (text.size() > size) text.resize(size);
    return Bytes(text.begin(), text.end());
}

// TLS server flight (ServerHello .. Finished) and client Finished sizes.
inline constexpr SizeRange kServerFlight{1500, 4000};
inline constexpr std::uint32_t kClientFinished = 80;

}  // namespace synth_detail

inline Ipv4 default_server_ip(const std::string& name) { return synth_detail::derived_ip("srv:" + name, 0xC6120000u); }  // 198.18/16
inline Ipv4 default_client_ip(const std::string& name) { return synth_detail::derived_ip("cli:" + name, 0x0A000000u); }   // 10/8

// Check-in size drawn from the spec (exposed for distribution checks).
inline std::uint32_t sample_checkin_size(const MalleableProfileSpec& spec, std::mt19937_64& rng) {
    return synth_detail::draw(rng, spec.checkin, spec.size_distribution);
}

inline std::vector<FlowRecord> gen_c2_flows(const MalleableProfileSpec& spec, std::size_t n_beacons, std::uint64_t seed,
                                            const GenOptions& opts = {}) {
    using namespace synth_detail;
    spec.validate();
    std::mt19937_64 rng(seed);
    const Ipv4 server = spec.server_ip.value_or(default_server_ip(spec.name));
    Endpoints ep(opts.client_ip.value_or(default_client_ip(spec.name)), opts.first_port);
    const std::uint16_t sport = server_port_for(spec.protocol);
    std::vector<FlowRecord> flows;
    double t = opts.start_time + uniform(rng, 0, 1);
    std::uint16_t dns_id = static_cast<std::uint16_t>(rng());

    auto dns_flow = [&](double at, std::uint32_t qsize, std::uint32_t rsize) {
        auto [cip, cport] = ep.next();
        FlowBuilder fb({cip, server, cport, sport, Transport::UDP}, at, uniform(rng, 0.01, 0.08));
        // question = 12-byte header + name + 4; pick the name to hit qsize
        const std::size_t wire = qsize > 16 ? qsize - 16 : 0;
        const auto labels = beacon_name(spec.domain, wire, rng);
        Bytes q = dns_query(dns_id++, labels, 1);
        // an A answer adds 16 bytes; anything larger is carried in TXT
        const bool txt = rsize > q.size() + 16;
        if (txt) q[q.size() - 3] = 16;
        const Bytes r = dns_response(q, txt, txt ? rsize - q.size() - 12 : 4, rng);
        fb.packet(Direction::ClientToServer, 0, static_cast<std::uint32_t>(q.size()), q);
        fb.half_rtt();
        fb.half_rtt();
        fb.packet(Direction::ServerToClient, 0, static_cast<std::uint32_t>(r.size()), r);
        flows.push_back(fb.finish(Label::Malicious));
    };

    for (std::size_t b = 0; b < n_beacons; ++b) {
        const std::uint32_t checkin = sample_checkin_size(spec, rng);
        const std::uint32_t response = draw(rng, spec.response, spec.size_distribution);
        const bool post = std::bernoulli_distribution(spec.post_probability)(rng);
        const std::uint32_t post_size = post ? draw(rng, spec.post_size) : 0;

        if (spec.protocol == AppProtocol::DNS) {
            dns_flow(t, checkin, response);
            double at = t + 0.2;
            // command output goes out as further queries of maximal size
            std::uint32_t left = post_size;
            const std::uint32_t chunk = std::max<std::uint32_t>(spec.checkin.max, 32);
            while (left > 0) {
                const std::uint32_t q = std::min(left, chunk);
                dns_flow(at, std::max<std::uint32_t>(q, spec.checkin.min), spec.response.min);
                left -= q;
                at += 0.05;
            }
        } else {
            auto [cip, cport] = ep.next();
            FlowBuilder fb({cip, server, cport, sport, Transport::TCP}, t, uniform(rng, 0.01, 0.08));
            fb.handshake();
            const double think = uniform(rng, 0.005, 0.03);
            if (spec.protocol == AppProtocol::HTTPS) {
                const Bytes ch = client_hello(spec.domain, rng);
                fb.exchange(static_cast<std::uint32_t>(ch.size()), ch, draw(rng, kServerFlight), {}, 0.002);
                fb.burst(Direction::ClientToServer, kClientFinished);
                fb.exchange(checkin, {}, response, {}, think);
                if (post) fb.exchange(post_size, {}, spec.response.min, {}, think);
            } else {
                fb.exchange(checkin, http_request("GET", "/" + random_token(rng, 8), spec.domain, checkin, rng), response,
                            http_response(response), think);
                if (post) {
                    fb.exchange(post_size, http_request("POST", "/submit.php?id=" + std::to_string(rng() % 100000), spec.domain, post_size, rng),
                                spec.response.min, http_response(spec.response.min), think);
                }
            }
            fb.teardown();
            flows.push_back(fb.finish(Label::Malicious));
        }
        const double gap = spec.sleeptime * (1 + uniform(rng, -spec.jitter, spec.jitter));
        t += std::max(gap, 0.5);
    }
    std::stable_sort(flows.begin(), flows.end(), [](const FlowRecord& a, const FlowRecord& b) {
        return std::tie(a.first_ts, a.key) < std::tie(b.first_ts, b.key);
    });
    return flows;
}

inline std::vector<FlowRecord> gen_benign_flows(const BenignTrafficSpec& spec, std::size_t n_flows, std::uint64_t seed,
                                                const GenOptions& opts = {}) {
    using namespace synth_detail;
    spec.validate();
    std::mt19937_64 rng(seed);
    const Ipv4 server = spec.server_ip.value_or(default_server_ip(spec.name));
    Endpoints ep(opts.client_ip.value_or(default_client_ip(spec.name)), opts.first_port);
    const std::uint16_t sport = server_port_for(spec.protocol);
    std::exponential_distribution<double> gap(1.0 / spec.mean_interarrival);
    std::vector<FlowRecord> flows;
    double t = opts.start_time + uniform(rng, 0, 1);
    std::uint16_t dns_id = static_cast<std::uint16_t>(rng());

    for (std::size_t n = 0; n < n_flows; ++n) {
        const std::string& domain = spec.domains[rng() % spec.domains.size()];
        auto [cip, cport] = ep.next();
        const double rtt = uniform(rng, 0.01, 0.08);

        if (spec.kind == BenignTrafficKind::DnsLookup) {
            FlowBuilder fb({cip, server, cport, sport, Transport::UDP}, t, rtt);
            const std::uint32_t target = draw(rng, spec.packets_per_flow);
            const std::uint32_t pairs = std::max<std::uint32_t>(1, target / 2);
            for (std::uint32_t p = 0; p < pairs; ++p) {
                const Bytes q = dns_query(dns_id++, split_labels(domain), 1);
                const std::uint32_t answers = 1 + static_cast<std::uint32_t>(rng() % 4);
                Bytes r = dns_response(q, false, 4, rng);
                // further A records
                for (std::uint32_t a = 1; a < answers; ++a) {
                    for (int v : {0xc00c, 1, 1, 0, 300, 4}) put16(r, static_cast<std::size_t>(v));
                    for (int i = 0; i < 4; ++i) r.push_back(static_cast<std::uint8_t>(rng() & 0xff));
                    r[7] = static_cast<std::uint8_t>(a + 1);
                }
                fb.packet(Direction::ClientToServer, 0, static_cast<std::uint32_t>(q.size()), q);
                if (target % 2 == 1 && p + 1 == pairs) {
                    // retransmitted query before the answer
                    fb.wait(0.5);
                    fb.packet(Direction::ClientToServer, 0, static_cast<std::uint32_t>(q.size()), q);
                }
                fb.half_rtt();
                fb.half_rtt();
                fb.packet(Direction::ServerToClient, 0, static_cast<std::uint32_t>(r.size()), r);
                fb.wait(0.01);
            }
            flows.push_back(fb.finish(Label::Benign));
            t += gap(rng);
            continue;
        }

        FlowBuilder fb({cip, server, cport, sport, Transport::TCP}, t, rtt);
        fb.handshake();
        const bool tls = spec.protocol == AppProtocol::HTTPS;
        Bytes ch;
        std::uint32_t flight = 0;
        if (tls) {
            ch = client_hello(domain, rng);
            flight = draw(rng, kServerFlight);
        }

        // Exchanges per flow follow the packet budget: ~7 packets of fixed
        // overhead, ~4 per exchange.
        const std::uint32_t budget = draw(rng, spec.packets_per_flow);
        const std::uint32_t exchanges = std::clamp<std::uint32_t>(budget > 7 ? (budget - 7) / 4 : 1, 1, 32);
        std::vector<std::uint32_t> requests(exchanges);
        for (auto& r : requests) r = draw(rng, spec.request);

        std::vector<std::uint32_t> responses(exchanges);
        if (spec.kind == BenignTrafficKind::WebBrowsing) {
            // Server L3 bytes aimed at ratio * client L3 bytes.
            const double ratio = spec.ratio_target * uniform(rng, 0.8, 1.2);
            auto segs = [](std::uint64_t l4) { return (l4 + kMss - 1) / kMss; };
            double client = 20.0 * 4;  // SYN, ACK, FIN, final ACK
            double server_fixed = 20.0 * 2 + 20.0 * exchanges;  // SYN-ACK, FIN, per-request ACKs
            if (tls) {
                client += ch.size() + 20.0 * segs(ch.size()) + 20 + kClientFinished + 20;
                server_fixed += 20 + flight + 20.0 * segs(flight);
            }
            double req_total = 0;
            for (auto r : requests) {
                client += r + 20.0 * segs(r) + 20;
                req_total += r;
            }
            const double share_total = std::max(0.0, ratio * client - server_fixed);
            for (std::uint32_t e = 0; e < exchanges; ++e) {
                const double share = share_total * requests[e] / req_total;
                const double l4 = share - 20.0 * std::ceil(share / (kMss + 20));
                responses[e] = std::clamp<std::uint32_t>(static_cast<std::uint32_t>(std::max(1.0, std::round(l4))),
                                                         std::max<std::uint32_t>(1, spec.response.min), spec.response.max);
            }
        } else {
            for (auto& r : responses) r = std::max<std::uint32_t>(1, draw(rng, spec.response));
        }

        if (tls) {
            fb.exchange(static_cast<std::uint32_t>(ch.size()), ch, flight, {}, 0.002);
            fb.burst(Direction::ClientToServer, kClientFinished);
        }
        for (std::uint32_t e = 0; e < exchanges; ++e) {
            const double think = uniform(rng, 0.01, 0.15);
            if (tls) {
                fb.exchange(requests[e], {}, responses[e], {}, think);
            } else {
                const std::string path = spec.kind == BenignTrafficKind::LibraryDownload ? "/jquery-3.6.0.min.js" : "/" + random_token(rng, 10);
                fb.exchange(requests[e], http_request("GET", path, domain, requests[e], rng), responses[e],
                            http_response(responses[e]), think);
            }
        }
        fb.teardown();
        flows.push_back(fb.finish(Label::Benign));
        t += gap(rng);
    }
    std::stable_sort(flows.begin(), flows.end(), [](const FlowRecord& a, const FlowRecord& b) {
        return std::tie(a.first_ts, a.key) < std::tie(b.first_ts, b.key);
    });
    return flows;
}

// Writes every packet of every flow, merged in time order. Sequence numbers
// are reconstructed from the packet sizes; payload bytes not carried by the
// flow are filled deterministically.
inline Bytes emit_capture(const std::vector<FlowRecord>& flows) {
    struct Ref {
        double ts;
        std::size_t flow;
        std::size_t pkt;
    };
    std::vector<Ref> refs;
    for (std::size_t f = 0; f < flows.size(); ++f) {
        for (std::size_t p = 0; p < flows[f].packets.size(); ++p) refs.push_back({flows[f].packets[p].timestamp, f, p});
    }
    std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.ts < b.ts; });

    // Per-flow TCP sequence state: next sequence number per direction.
    std::vector<std::array<std::uint32_t, 2>> next_seq(flows.size());
    for (std::size_t f = 0; f < flows.size(); ++f) {
        const auto& k = flows[f].key;
        const auto h = mix_seed(k.client_ip.value() ^ (std::uint64_t{k.client_port} << 32), k.server_port);
        next_seq[f] = {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    }

    PcapWriter w;
    for (const auto& r : refs) {
        const auto& flow = flows[r.flow];
        const auto& pm = flow.packets[r.pkt];
        const bool c2s = pm.direction == Direction::ClientToServer;
        OutgoingPacket out;
        out.timestamp = pm.timestamp;
        out.src_ip = c2s ? flow.key.client_ip : flow.key.server_ip;
        out.dst_ip = c2s ? flow.key.server_ip : flow.key.client_ip;
        out.src_port = c2s ? flow.key.client_port : flow.key.server_port;
        out.dst_port = c2s ? flow.key.server_port : flow.key.client_port;
        out.transport = flow.key.transport;
        out.tcp_flags = pm.tcp_flags;
        out.l4_payload_length = pm.l4_payload;
        if (r.pkt < flow.payloads.size()) out.payload = flow.payloads[r.pkt];
        if (flow.key.transport == Transport::TCP) {
            auto& mine = next_seq[r.flow][c2s ? 0 : 1];
            const auto& theirs = next_seq[r.flow][c2s ? 1 : 0];
            out.seq = mine;
            out.ack = (pm.tcp_flags & tcp_flag::ACK) ? theirs : 0;
            mine += pm.l4_payload + ((pm.tcp_flags & (tcp_flag::SYN | tcp_flag::FIN)) ? 1 : 0);
        }
        w.write(out, mix_seed(r.flow, r.pkt));
    }
    return std::move(w).bytes();
}

// ---------------------------------------------------------- Default specs

inline std::vector<MalleableProfileSpec> default_c2_specs() {
    std::vector<MalleableProfileSpec> v;
    auto add = [&](std::string name, AppProtocol p, std::string domain, SizeRange checkin, SizeRange response, double post,
                   SizeRange post_size, double sleep, double jitter) {
        MalleableProfileSpec s;
        s.name = std::move(name);
        s.protocol = p;
        s.domain = std::move(domain);
        s.checkin = checkin;
        s.response = response;
        s.post_probability = post;
        s.post_size = post_size;
        s.sleeptime = sleep;
        s.jitter = jitter;
        v.push_back(std::move(s));
    };
    add("amazon-http", AppProtocol::HTTP, "www.amazon.com", {20, 1480}, {20, 400}, 0.3, {500, 4000}, 60, 0.2);
    add("amazon-https", AppProtocol::HTTPS, "www.amazon.com", {20, 1480}, {20, 400}, 0.3, {500, 4000}, 60, 0.2);
    add("amazon-dns", AppProtocol::DNS, "ns1.amazon.com", {40, 120}, {50, 200}, 0.2, {100, 400}, 60, 0.2);
    add("jquery-http", AppProtocol::HTTP, "code.jquery.com", {300, 600}, {4000, 6000}, 0.3, {500, 3000}, 60, 0.3);
    add("smashburger-https", AppProtocol::HTTPS, "www.smashburger.com", {100, 900}, {50, 800}, 0.3, {500, 4000}, 45, 0.25);
    add("default-https", AppProtocol::HTTPS, "c2.example.net", {50, 300}, {20, 100}, 0.2, {200, 2000}, 60, 0.0);
    add("default-dns", AppProtocol::DNS, "dns.example.net", {50, 250}, {40, 120}, 0.2, {100, 400}, 60, 0.0);
    add("unknown-sni-https", AppProtocol::HTTPS, "updates.cdn-metrics.net", {20, 1480}, {20, 400}, 0.3, {500, 4000}, 60, 0.2);
    return v;
}

inline std::vector<BenignTrafficSpec> default_benign_specs() {
    std::vector<BenignTrafficSpec> v;
    BenignTrafficSpec web;
    web.name = "web-https";
    web.kind = BenignTrafficKind::WebBrowsing;
    web.protocol = AppProtocol::HTTPS;
    web.domains = {"www.wikipedia.org", "news.example.com", "www.github.com", "static.shop.example", "mail.example.org"};
    web.request = {200, 1200};
    web.response = {100, 400000};
    web.packets_per_flow = {8, 24};
    web.ratio_target = 5;
    v.push_back(web);

    BenignTrafficSpec web_http = web;
    web_http.name = "web-http";
    web_http.protocol = AppProtocol::HTTP;
    web_http.domains = {"www.example.com", "blog.example.org", "intranet.example"};
    v.push_back(web_http);

    BenignTrafficSpec lib;
    lib.name = "jquery-library";
    lib.kind = BenignTrafficKind::LibraryDownload;
    lib.protocol = AppProtocol::HTTP;
    lib.domains = {"code.jquery.com"};
    lib.request = {350, 550};
    lib.response = {30000, 90000};
    lib.packets_per_flow = {8, 12};
    v.push_back(lib);

    BenignTrafficSpec dns;
    dns.name = "dns-lookup";
    dns.kind = BenignTrafficKind::DnsLookup;
    dns.protocol = AppProtocol::DNS;
    dns.domains = {"www.wikipedia.org", "www.github.com", "time.example.net", "updates.example.com", "cdn.example.org"};
    dns.packets_per_flow = {2, 2};
    dns.server_ip = Ipv4::parse("192.0.2.53");
    dns.mean_interarrival = 0.5;
    v.push_back(dns);
    return v;
}

// ------------------------------------------------------------------ Plans

struct SynthPlan {
    std::vector<std::pair<MalleableProfileSpec, std::size_t>> c2;
    std::vector<std::pair<BenignTrafficSpec, std::size_t>> benign;
};

inline SynthPlan plan_from_json(const nlohmann::json& j) {
    SynthPlan p;
    try {
        for (const auto& e : j.value("c2", nlohmann::json::array())) p.c2.emplace_back(e.get<MalleableProfileSpec>(), e.value("count", std::size_t{100}));
        for (const auto& e : j.value("benign", nlohmann::json::array())) {
            p.benign.emplace_back(e.get<BenignTrafficSpec>(), e.value("count", std::size_t{100}));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("synth plan: ") + e.what());
    } catch (const ContractError& e) {
        throw ParseError(std::string("synth plan: ") + e.what());
    }
    return p;
}

inline nlohmann::json plan_to_json(const SynthPlan& p) {
    nlohmann::json c2 = nlohmann::json::array(), benign = nlohmann::json::array();
    for (const auto& [s, n] : p.c2) {
        nlohmann::json e = s;
        e["count"] = n;
        c2.push_back(e);
    }
    for (const auto& [s, n] : p.benign) {
        nlohmann::json e = s;
        e["count"] = n;
        benign.push_back(e);
    }
    return {{"c2", c2}, {"benign", benign}};
}

// Generates every entry of the plan; entry i uses client network 10.(i+1).0.0
// and seed mix_seed(seed, i). Output is sorted by (first_ts, key).
inline std::vector<FlowRecord> generate_plan(const SynthPlan& plan, std::uint64_t seed, unsigned jobs = 1) {
    const std::size_t n = plan.c2.size() + plan.benign.size();
    if (n > 250) throw ContractError("synth plan has too many entries");
    std::vector<std::vector<FlowRecord>> parts(n);
    parallel_for(n, jobs, [&](std::size_t i) {
        GenOptions opts;
        opts.client_ip = Ipv4(0x0A000000u | static_cast<std::uint32_t>(i + 1) << 16 | 10u);
        if (i < plan.c2.size()) {
            parts[i] = gen_c2_flows(plan.c2[i].first, plan.c2[i].second, mix_seed(seed, i), opts);
        } else {
            const auto& b = plan.benign[i - plan.c2.size()];
            parts[i] = gen_benign_flows(b.first, b.second, mix_seed(seed, i), opts);
        }
    });
    std::vector<FlowRecord> all;
    for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(all));
    std::stable_sort(all.begin(), all.end(), [](const FlowRecord& a, const FlowRecord& b) {
        return std::tie(a.first_ts, a.key) < std::tie(b.first_ts, b.key);
    });
    return all;
}

}  // namespace c2flow
