#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2flow/error.hpp"
#include "c2flow/net.hpp"
#include "c2flow/pcap.hpp"

namespace c2flow {

enum class Direction : std::uint8_t { ClientToServer, ServerToClient };

enum class Label : std::uint8_t { Benign = 0, Malicious = 1 };

enum class AppProtocol : std::uint8_t { HTTP, HTTPS, DNS, Other };

inline std::string to_string(Label l) { return l == Label::Malicious ? "Malicious" : "Benign"; }

inline Label label_from_string(const std::string& s) {
    if (s == "Malicious" || s == "malicious" || s == "1") return Label::Malicious;
    if (s == "Benign" || s == "benign" || s == "0") return Label::Benign;
    throw ParseError("unknown label: " + s);
}

inline std::string to_string(AppProtocol p) {
    switch (p) {
        case AppProtocol::HTTP: return "HTTP";
        case AppProtocol::HTTPS: return "HTTPS";
        case AppProtocol::DNS: return "DNS";
        case AppProtocol::Other: return "Other";
    }
    return "Other";
}

inline AppProtocol app_protocol_from_string(const std::string& s) {
    if (s == "HTTP" || s == "http") return AppProtocol::HTTP;
    if (s == "HTTPS" || s == "https") return AppProtocol::HTTPS;
    if (s == "DNS" || s == "dns") return AppProtocol::DNS;
    if (s == "Other" || s == "other") return AppProtocol::Other;
    throw ParseError("unknown protocol: " + s);
}

struct PacketMeta {
    double timestamp = 0.0;
    Direction direction = Direction::ClientToServer;
    std::uint32_t ip_total_length = 0;
    std::uint32_t l3_payload = 0;
    std::uint32_t l4_payload = 0;
    std::uint8_t tcp_flags = 0;

    friend bool operator==(const PacketMeta&, const PacketMeta&) = default;
};

struct FlowKey {
    Ipv4 client_ip;
    Ipv4 server_ip;
    std::uint16_t client_port = 0;
    std::uint16_t server_port = 0;
    Transport transport = Transport::TCP;

    friend auto operator<=>(const FlowKey&, const FlowKey&) = default;

    [[nodiscard]] std::string to_string() const {
        return std::string(c2flow::to_string(transport)) + ' ' + client_ip.to_string() + ':' +
               std::to_string(client_port) + " > " + server_ip.to_string() + ':' + std::to_string(server_port);
    }
};

struct AppHints {
    std::optional<std::string> http_host;
    std::optional<std::string> tls_sni;
    std::vector<std::string> dns_qnames;
    AppProtocol inferred_protocol = AppProtocol::Other;

    friend bool operator==(const AppHints&, const AppHints&) = default;
};

struct FlowRecord {
    FlowKey key;
    std::vector<PacketMeta> packets;
    double first_ts = 0.0;
    double last_ts = 0.0;
    double duration = 0.0;
    std::optional<Label> label;
    AppHints hints;
    // Captured transport payload per packet (aligned with `packets`); may be
    // empty or hold only a prefix of each payload. Not serialized.
    std::vector<Bytes> payloads;

    [[nodiscard]] std::uint64_t total_l4_payload() const {
        std::uint64_t s = 0;
        for (const auto& p : packets) s += p.l4_payload;
        return s;
    }
};

// Equality over every serialized field (payload bytes excluded).
inline bool same_flow(const FlowRecord& a, const FlowRecord& b) {
    return a.key == b.key && a.packets == b.packets && a.first_ts == b.first_ts && a.last_ts == b.last_ts &&
           a.duration == b.duration && a.label == b.label && a.hints == b.hints;
}

inline void to_json(nlohmann::json& j, const PacketMeta& p) {
    j = nlohmann::json{{"timestamp", p.timestamp},
                       {"direction", p.direction == Direction::ClientToServer ? "ClientToServer" : "ServerToClient"},
                       {"ip_total_length", p.ip_total_length},
                       {"l3_payload", p.l3_payload},
                       {"l4_payload", p.l4_payload},
                       {"tcp_flags", p.tcp_flags}};
}

inline void from_json(const nlohmann::json& j, PacketMeta& p) {
    j.at("timestamp").get_to(p.timestamp);
    const auto dir = j.at("direction").get<std::string>();
    if (dir == "ClientToServer") {
        p.direction = Direction::ClientToServer;
    } else if (dir == "ServerToClient") {
        p.direction = Direction::ServerToClient;
    } else {
        throw ParseError("unknown direction: " + dir);
    }
    j.at("ip_total_length").get_to(p.ip_total_length);
    j.at("l3_payload").get_to(p.l3_payload);
    j.at("l4_payload").get_to(p.l4_payload);
    j.at("tcp_flags").get_to(p.tcp_flags);
}

inline void to_json(nlohmann::json& j, const FlowKey& k) {
    j = nlohmann::json{{"client_ip", k.client_ip.to_string()},
                       {"server_ip", k.server_ip.to_string()},
                       {"client_port", k.client_port},
                       {"server_port", k.server_port},
                       {"transport", std::string(to_string(k.transport))}};
}

inline void from_json(const nlohmann::json& j, FlowKey& k) {
    k.client_ip = Ipv4::parse(j.at("client_ip").get<std::string>());
    k.server_ip = Ipv4::parse(j.at("server_ip").get<std::string>());
    j.at("client_port").get_to(k.client_port);
    j.at("server_port").get_to(k.server_port);
    k.transport = transport_from_string(j.at("transport").get<std::string>());
}

inline void to_json(nlohmann::json& j, const AppHints& h) {
    j = nlohmann::json{{"http_host", h.http_host ? nlohmann::json(*h.http_host) : nlohmann::json(nullptr)},
                       {"tls_sni", h.tls_sni ? nlohmann::json(*h.tls_sni) : nlohmann::json(nullptr)},
                       {"dns_qnames", h.dns_qnames},
                       {"inferred_protocol", to_string(h.inferred_protocol)}};
}

inline void from_json(const nlohmann::json& j, AppHints& h) {
    auto opt = [&](const char* name) -> std::optional<std::string> {
        if (!j.contains(name) || j.at(name).is_null()) return std::nullopt;
        return j.at(name).get<std::string>();
    };
    h.http_host = opt("http_host");
    h.tls_sni = opt("tls_sni");
    h.dns_qnames = j.value("dns_qnames", std::vector<std::string>{});
    h.inferred_protocol = app_protocol_from_string(j.value("inferred_protocol", std::string("Other")));
}

inline void to_json(nlohmann::json& j, const FlowRecord& f) {
    j = nlohmann::json{{"key", f.key},
                       {"packets", f.packets},
                       {"first_ts", f.first_ts},
                       {"last_ts", f.last_ts},
                       {"duration", f.duration},
                       {"label", f.label ? nlohmann::json(to_string(*f.label)) : nlohmann::json(nullptr)},
                       {"hints", f.hints}};
}

inline void from_json(const nlohmann::json& j, FlowRecord& f) {
    j.at("key").get_to(f.key);
    j.at("packets").get_to(f.packets);
    if (f.packets.empty()) throw ParseError("flow record without packets");
    j.at("first_ts").get_to(f.first_ts);
    j.at("last_ts").get_to(f.last_ts);
    j.at("duration").get_to(f.duration);
    if (j.contains("label") && !j.at("label").is_null()) {
        f.label = label_from_string(j.at("label").get<std::string>());
    } else {
        f.label.reset();
    }
    if (j.contains("hints")) j.at("hints").get_to(f.hints);
    f.payloads.clear();
}

inline std::string flows_to_jsonl(const std::vector<FlowRecord>& flows) {
    std::string out;
    for (const auto& f : flows) {
        out += nlohmann::json(f).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<FlowRecord> flows_from_jsonl(const std::string& text) {
    std::vector<FlowRecord> flows;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        ++line_no;
        std::string_view line(text.data() + pos, nl - pos);
        pos = nl + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            flows.push_back(nlohmann::json::parse(line).get<FlowRecord>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("flow dump line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return flows;
}

}  // namespace c2flow
