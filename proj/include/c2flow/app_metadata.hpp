#pragma once

// Domain hints carried in flow payloads: HTTP Host header, TLS ClientHello
// server_name, DNS query names; plus longest-prefix subnet lookup.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "c2flow/error.hpp"
#include "c2flow/flow.hpp"
#include "c2flow/net.hpp"

namespace c2flow {

using PayloadView = std::span<const Bytes>;

struct ParseWarnings {
    std::size_t tls_framing = 0;
    std::size_t dns_decode = 0;
};

inline std::string normalize_domain(std::string_view raw) {
    std::string d(raw);
    while (!d.empty() && (d.back() == '.' || std::isspace(static_cast<unsigned char>(d.back())))) d.pop_back();
    std::size_t start = 0;
    while (start < d.size() && std::isspace(static_cast<unsigned char>(d[start]))) ++start;
    d.erase(0, start);
    std::transform(d.begin(), d.end(), d.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return d;
}

// True when `name` equals `suffix` or is a subdomain of it.
inline bool domain_matches(std::string_view name, std::string_view suffix) {
    if (suffix.empty() || name.size() < suffix.size()) return false;
    if (name.substr(name.size() - suffix.size()) != suffix) return false;
    return name.size() == suffix.size() || name[name.size() - suffix.size() - 1] == '.';
}

// ---------------------------------------------------------------- HTTP Host

namespace http_detail {

inline bool plausible_request_line(std::string_view line) {
    auto sp1 = line.find(' ');
    if (sp1 == std::string_view::npos || sp1 == 0 || sp1 > 16) return false;
    for (std::size_t i = 0; i < sp1; ++i) {
        if (line[i] < 'A' || line[i] > 'Z') return false;
    }
    auto sp2 = line.rfind(' ');
    if (sp2 == sp1) return false;
    auto version = line.substr(sp2 + 1);
    return version == "HTTP/1.0" || version == "HTTP/1.1";
}

inline bool valid_host_chars(std::string_view v) {
    if (v.empty()) return false;
    return std::all_of(v.begin(), v.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '-' || c == '.' || c == '_';
    });
}

}  // namespace http_detail

// Host header of an HTTP/1.x request held in one payload.
inline std::optional<std::string> parse_http_host(std::span<const std::uint8_t> payload) {
    std::string_view text(reinterpret_cast<const char*>(payload.data()), payload.size());
    auto eol = text.find("\r\n");
    if (eol == std::string_view::npos) return std::nullopt;
    if (!http_detail::plausible_request_line(text.substr(0, eol))) return std::nullopt;
    std::size_t pos = eol + 2;
    while (pos < text.size()) {
        auto next = text.find("\r\n", pos);
        if (next == std::string_view::npos) next = text.size();
        auto line = text.substr(pos, next - pos);
        if (line.empty()) break;
        pos = next + 2;
        auto colon = line.find(':');
        if (colon == std::string_view::npos) continue;
        std::string name = normalize_domain(line.substr(0, colon));
        if (name != "host") continue;
        auto value = line.substr(colon + 1);
        while (!value.empty() && (value.front() == ' ' || value.front() == '\t')) value.remove_prefix(1);
        while (!value.empty() && (value.back() == ' ' || value.back() == '\t')) value.remove_suffix(1);
        if (auto port = value.rfind(':'); port != std::string_view::npos) value = value.substr(0, port);
        if (!http_detail::valid_host_chars(value)) return std::nullopt;
        return normalize_domain(value);
    }
    return std::nullopt;
}

inline std::optional<std::string> extract_http_host(const FlowRecord& flow, PayloadView payloads) {
    if (flow.key.transport != Transport::TCP) return std::nullopt;
    const std::size_t n = std::min(flow.packets.size(), payloads.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (flow.packets[i].direction != Direction::ClientToServer || payloads[i].empty()) continue;
        if (auto host = parse_http_host(payloads[i])) return host;
    }
    return std::nullopt;
}

inline std::optional<std::string> extract_http_host(const FlowRecord& flow) {
    return extract_http_host(flow, flow.payloads);
}

// ----------------------------------------------------------------- TLS SNI

struct SniParse {
    std::optional<std::string> sni;
    bool framing_error = false;
};

namespace tls_detail {

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> d) : d_(d) {}
    [[nodiscard]] bool has(std::size_t n) const { return d_.size() - pos_ >= n; }
    std::uint32_t u8() { return d_[pos_++]; }
    std::uint32_t u16() {
        std::uint32_t v = (std::uint32_t{d_[pos_]} << 8) | d_[pos_ + 1];
        pos_ += 2;
        return v;
    }
    std::uint32_t u24() {
        std::uint32_t v = (std::uint32_t{d_[pos_]} << 16) | (std::uint32_t{d_[pos_ + 1]} << 8) | d_[pos_ + 2];
        pos_ += 3;
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        auto s = d_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    void skip(std::size_t n) { pos_ += n; }
    [[nodiscard]] std::size_t remaining() const { return d_.size() - pos_; }

private:
    std::span<const std::uint8_t> d_;
    std::size_t pos_ = 0;
};

inline constexpr std::uint32_t kExtServerName = 0x0000;
inline constexpr std::uint32_t kExtEncryptedClientHello = 0xfe0d;

}  // namespace tls_detail

// Parses one TLS record (header included). Never reads out of bounds.
inline SniParse parse_client_hello_sni(std::span<const std::uint8_t> record) {
    using tls_detail::Cursor;
    SniParse out;
    Cursor rec(record);
    if (!rec.has(5)) return out;
    const auto content_type = rec.u8();
    const auto major = rec.u8();
    rec.u8();
    if (content_type != 22 || major != 3) return out;
    const auto rec_len = rec.u16();
    if (!rec.has(rec_len)) {
        out.framing_error = true;
        return out;
    }
    Cursor hs(rec.take(rec_len));
    if (!hs.has(4)) {
        out.framing_error = true;
        return out;
    }
    if (hs.u8() != 1) return out;  // not a ClientHello
    const auto hs_len = hs.u24();
    if (!hs.has(hs_len)) {
        out.framing_error = true;
        return out;
    }
    Cursor ch(hs.take(hs_len));
    auto fail = [&out]() {
        out.framing_error = true;
        out.sni.reset();
        return out;
    };
    if (!ch.has(2 + 32 + 1)) return fail();
    ch.skip(2 + 32);
    const auto sid_len = ch.u8();
    if (!ch.has(sid_len + 2)) return fail();
    ch.skip(sid_len);
    const auto cs_len = ch.u16();
    if (!ch.has(cs_len + 1)) return fail();
    ch.skip(cs_len);
    const auto comp_len = ch.u8();
    if (!ch.has(comp_len)) return fail();
    ch.skip(comp_len);
    if (ch.remaining() == 0) return out;  // no extensions block
    if (!ch.has(2)) return fail();
    const auto ext_total = ch.u16();
    if (!ch.has(ext_total)) return fail();
    Cursor exts(ch.take(ext_total));
    std::optional<std::string> found;
    bool encrypted = false;
    while (exts.remaining() > 0) {
        if (!exts.has(4)) return fail();
        const auto type = exts.u16();
        const auto len = exts.u16();
        if (!exts.has(len)) return fail();
        Cursor ext(exts.take(len));
        if (type == tls_detail::kExtEncryptedClientHello) encrypted = true;
        if (type != tls_detail::kExtServerName || found) continue;
        if (!ext.has(2)) return fail();
        const auto list_len = ext.u16();
        if (!ext.has(list_len)) return fail();
        Cursor list(ext.take(list_len));
        while (list.remaining() > 0) {
            if (!list.has(3)) return fail();
            const auto name_type = list.u8();
            const auto name_len = list.u16();
            if (!list.has(name_len)) return fail();
            auto name = list.take(name_len);
            if (name_type == 0 && !found) {
                std::string host(name.begin(), name.end());
                if (http_detail::valid_host_chars(host)) found = normalize_domain(host);
            }
        }
    }
    if (!encrypted) out.sni = std::move(found);
    return out;
}

// First client-to-server TLS record, reassembled across consecutive client
// segments when the record spans several packets.
inline std::optional<std::string> extract_tls_sni(const FlowRecord& flow, PayloadView payloads,
                                                  ParseWarnings* warnings = nullptr) {
    if (flow.key.transport != Transport::TCP) return std::nullopt;
    const std::size_t n = std::min(flow.packets.size(), payloads.size());
    std::size_t i = 0;
    while (i < n && (flow.packets[i].direction != Direction::ClientToServer || payloads[i].empty())) ++i;
    if (i == n) return std::nullopt;
    Bytes record(payloads[i].begin(), payloads[i].end());
    if (record.size() >= 5 && record[0] == 22) {
        const std::size_t want = 5 + ((std::size_t{record[3]} << 8) | record[4]);
        for (std::size_t j = i + 1; j < n && record.size() < want; ++j) {
            if (flow.packets[j].direction != Direction::ClientToServer) {
                if (!payloads[j].empty()) break;
                continue;
            }
            record.insert(record.end(), payloads[j].begin(), payloads[j].end());
        }
        if (record.size() > want) record.resize(want);
    }
    auto parsed = parse_client_hello_sni(record);
    if (parsed.framing_error && warnings) ++warnings->tls_framing;
    return parsed.sni;
}

inline std::optional<std::string> extract_tls_sni(const FlowRecord& flow, ParseWarnings* warnings = nullptr) {
    return extract_tls_sni(flow, flow.payloads, warnings);
}

// --------------------------------------------------------------------- DNS

struct DnsNameResult {
    std::optional<std::string> name;
    std::size_t next_offset = 0;  // offset after the name in the original position
    bool error = false;
};

// Decodes the (possibly compressed) domain name at `offset` in `msg`.
inline DnsNameResult decode_dns_name(std::span<const std::uint8_t> msg, std::size_t offset) {
    DnsNameResult res;
    std::string name;
    std::size_t pos = offset;
    bool jumped = false;
    std::set<std::size_t> visited;
    std::size_t total_len = 0;
    while (true) {
        if (pos >= msg.size()) {
            res.error = true;
            return res;
        }
        const std::uint8_t len = msg[pos];
        if ((len & 0xc0) == 0xc0) {
            if (pos + 1 >= msg.size()) {
                res.error = true;
                return res;
            }
            const std::size_t target = (std::size_t{len & 0x3fu} << 8) | msg[pos + 1];
            if (!jumped) res.next_offset = pos + 2;
            jumped = true;
            if (!visited.insert(target).second) {
                res.error = true;  // pointer loop
                return res;
            }
            pos = target;
            continue;
        }
        if ((len & 0xc0) != 0) {
            res.error = true;  // reserved label types
            return res;
        }
        if (len == 0) {
            if (!jumped) res.next_offset = pos + 1;
            break;
        }
        if (pos + 1 + len > msg.size()) {
            res.error = true;
            return res;
        }
        total_len += len + 1u;
        if (total_len > 255) {
            res.error = true;
            return res;
        }
        if (!name.empty()) name += '.';
        name.append(reinterpret_cast<const char*>(msg.data() + pos + 1), len);
        pos += 1 + len;
    }
    res.name = normalize_domain(name);
    return res;
}

// Question names of one DNS query message (header included). Names decoded
// before an error are kept.
inline std::vector<std::string> dns_query_names(std::span<const std::uint8_t> msg, bool* error = nullptr) {
    std::vector<std::string> names;
    if (msg.size() < 12) {
        if (error) *error = true;
        return names;
    }
    const bool is_response = (msg[2] & 0x80) != 0;
    if (is_response) return names;
    const std::size_t qdcount = (std::size_t{msg[4]} << 8) | msg[5];
    std::size_t off = 12;
    for (std::size_t q = 0; q < qdcount; ++q) {
        auto r = decode_dns_name(msg, off);
        if (r.error || r.next_offset + 4 > msg.size()) {
            if (error) *error = true;
            break;
        }
        if (r.name && !r.name->empty()) names.push_back(*r.name);
        off = r.next_offset + 4;
    }
    return names;
}

inline std::vector<std::string> extract_dns_qnames(const FlowRecord& flow, PayloadView payloads,
                                                   ParseWarnings* warnings = nullptr) {
    std::vector<std::string> names;
    const std::size_t n = std::min(flow.packets.size(), payloads.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (flow.packets[i].direction != Direction::ClientToServer || payloads[i].empty()) continue;
        std::span<const std::uint8_t> msg = payloads[i];
        if (flow.key.transport == Transport::TCP) {
            if (msg.size() < 2) continue;
            const std::size_t len = (std::size_t{msg[0]} << 8) | msg[1];
            msg = msg.subspan(2, std::min(len, msg.size() - 2));
        }
        bool error = false;
        auto qnames = dns_query_names(msg, &error);
        if (error && warnings) ++warnings->dns_decode;
        names.insert(names.end(), qnames.begin(), qnames.end());
    }
    return names;
}

inline std::vector<std::string> extract_dns_qnames(const FlowRecord& flow, ParseWarnings* warnings = nullptr) {
    return extract_dns_qnames(flow, flow.payloads, warnings);
}

// ------------------------------------------------------------------ Subnets

struct SubnetRule {
    Cidr cidr;
    std::string group_id;

    friend bool operator==(const SubnetRule&, const SubnetRule&) = default;
};

inline void validate_subnet_rules(std::span<const SubnetRule> rules) {
    std::set<Cidr> seen;
    for (const auto& r : rules) {
        if (!seen.insert(r.cidr).second) throw ContractError("duplicate subnet rule " + r.cidr.to_string());
    }
}

inline std::optional<std::string> match_subnet(Ipv4 ip, std::span<const SubnetRule> rules) {
    const SubnetRule* best = nullptr;
    for (const auto& r : rules) {
        if (!r.cidr.contains(ip)) continue;
        // Equal prefixes only arise from duplicate rules; keep the smaller group id for order independence.
        if (!best || r.cidr.prefix_len > best->cidr.prefix_len ||
            (r.cidr.prefix_len == best->cidr.prefix_len && r.group_id < best->group_id)) {
            best = &r;
        }
    }
    if (!best) return std::nullopt;
    return best->group_id;
}

// ---------------------------------------------------------------- Port map

class PortMap {
public:
    PortMap() {
        map_[{Transport::UDP, 53}] = AppProtocol::DNS;
        map_[{Transport::TCP, 80}] = AppProtocol::HTTP;
        map_[{Transport::TCP, 443}] = AppProtocol::HTTPS;
    }

    void set(Transport t, std::uint16_t port, AppProtocol p) { map_[{t, port}] = p; }

    [[nodiscard]] AppProtocol lookup(Transport t, std::uint16_t port) const {
        auto it = map_.find({t, port});
        return it == map_.end() ? AppProtocol::Other : it->second;
    }

    [[nodiscard]] AppProtocol infer(const FlowKey& key) const { return lookup(key.transport, key.server_port); }

    [[nodiscard]] const std::map<std::pair<Transport, std::uint16_t>, AppProtocol>& entries() const { return map_; }

private:
    std::map<std::pair<Transport, std::uint16_t>, AppProtocol> map_;
};

inline AppHints compute_hints(const FlowRecord& flow, PayloadView payloads, const PortMap& ports = {},
                              ParseWarnings* warnings = nullptr) {
    AppHints h;
    h.inferred_protocol = ports.infer(flow.key);
    if (flow.key.transport == Transport::TCP) {
        h.http_host = extract_http_host(flow, payloads);
        h.tls_sni = extract_tls_sni(flow, payloads, warnings);
    }
    if (h.inferred_protocol == AppProtocol::DNS) h.dns_qnames = extract_dns_qnames(flow, payloads, warnings);
    return h;
}

// Domain used for dispatch: Host header, then SNI, then first DNS name.
inline std::optional<std::string> primary_domain(const AppHints& h) {
    if (h.http_host) return h.http_host;
    if (h.tls_sni) return h.tls_sni;
    if (!h.dns_qnames.empty()) return h.dns_qnames.front();
    return std::nullopt;
}

inline bool hint_conflict(const AppHints& h) { return h.http_host && h.tls_sni && *h.http_host != *h.tls_sni; }

}  // namespace c2flow
