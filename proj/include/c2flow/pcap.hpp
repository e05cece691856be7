#pragma once

// Minimal libpcap-format reader/writer. Reads classic pcap (microsecond and
// nanosecond magic, either byte order) with Ethernet or raw-IPv4 link types and
// yields one PacketEvent per IPv4 TCP/UDP packet.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "c2flow/error.hpp"
#include "c2flow/net.hpp"

namespace c2flow {

using Bytes = std::vector<std::uint8_t>;

struct PacketEvent {
    double timestamp = 0.0;
    Ipv4 src_ip;
    Ipv4 dst_ip;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    Transport transport = Transport::TCP;
    std::uint16_t ip_total_length = 0;
    std::uint16_t ip_header_length = 0;
    std::uint16_t l4_header_length = 0;
    std::uint8_t tcp_flags = 0;
    Bytes payload;  // captured transport payload, may be shorter than the declared length

    [[nodiscard]] std::uint32_t l3_payload() const { return ip_total_length - ip_header_length; }
    [[nodiscard]] std::uint32_t l4_payload() const {
        return ip_total_length - ip_header_length - l4_header_length;
    }
};

struct CaptureStats {
    std::size_t records = 0;
    std::size_t parsed = 0;
    std::size_t skipped = 0;          // non-IP, non-TCP/UDP, IPv6, fragments
    std::size_t skipped_ipv6 = 0;
    std::size_t skipped_fragments = 0;
    std::size_t truncated = 0;        // record or header cut short; warning only
};

struct Capture {
    std::vector<PacketEvent> events;
    CaptureStats stats;
};

namespace pcap_detail {

inline constexpr std::uint32_t kMagicMicro = 0xa1b2c3d4;
inline constexpr std::uint32_t kMagicNano = 0xa1b23c4d;
inline constexpr std::uint32_t kLinkEthernet = 1;
inline constexpr std::uint32_t kLinkRaw = 101;
inline constexpr std::uint32_t kLinkIpv4 = 228;

inline std::uint16_t be16(const std::uint8_t* p) { return static_cast<std::uint16_t>((p[0] << 8) | p[1]); }
inline std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

class FieldReader {
public:
    FieldReader(bool swapped) : swapped_(swapped) {}
    [[nodiscard]] std::uint32_t u32(const std::uint8_t* p) const {
        std::uint32_t v;
        std::memcpy(&v, p, 4);
        return swapped_ ? __builtin_bswap32(v) : v;
    }

private:
    bool swapped_;
};

// Decodes one IPv4 datagram; returns false when the packet is skipped.
inline bool decode_ipv4(std::span<const std::uint8_t> ip, PacketEvent& ev, CaptureStats& stats) {
    if (ip.size() < 20) {
        ++stats.truncated;
        ++stats.skipped;
        return false;
    }
    const int version = ip[0] >> 4;
    if (version == 6) {
        ++stats.skipped_ipv6;
        ++stats.skipped;
        return false;
    }
    if (version != 4) {
        ++stats.skipped;
        return false;
    }
    const std::uint16_t ihl = static_cast<std::uint16_t>((ip[0] & 0x0f) * 4);
    const std::uint16_t total = be16(&ip[2]);
    const std::uint16_t frag = be16(&ip[6]);
    const std::uint8_t proto = ip[9];
    if (ihl < 20 || total < ihl) {
        ++stats.truncated;
        ++stats.skipped;
        return false;
    }
    if (proto != 6 && proto != 17) {
        ++stats.skipped;
        return false;
    }
    if ((frag & 0x1fff) != 0 || (frag & 0x2000) != 0) {
        ++stats.skipped_fragments;
        ++stats.skipped;
        return false;
    }
    if (ip.size() < static_cast<std::size_t>(ihl) + (proto == 6 ? 20u : 8u)) {
        ++stats.truncated;
        ++stats.skipped;
        return false;
    }
    ev.src_ip = Ipv4(be32(&ip[12]));
    ev.dst_ip = Ipv4(be32(&ip[16]));
    ev.ip_total_length = total;
    ev.ip_header_length = ihl;
    const std::uint8_t* l4 = ip.data() + ihl;
    ev.src_port = be16(l4);
    ev.dst_port = be16(l4 + 2);
    if (proto == 6) {
        ev.transport = Transport::TCP;
        ev.l4_header_length = static_cast<std::uint16_t>((l4[12] >> 4) * 4);
        ev.tcp_flags = l4[13];
        if (ev.l4_header_length < 20) {
            ++stats.truncated;
            ++stats.skipped;
            return false;
        }
    } else {
        ev.transport = Transport::UDP;
        ev.l4_header_length = 8;
        ev.tcp_flags = 0;
    }
    if (static_cast<std::uint32_t>(ihl) + ev.l4_header_length > total) {
        ++stats.truncated;
        ++stats.skipped;
        return false;
    }
    const std::size_t payload_start = static_cast<std::size_t>(ihl) + ev.l4_header_length;
    const std::size_t payload_end = std::min<std::size_t>(ip.size(), total);
    if (payload_end > payload_start) ev.payload.assign(ip.begin() + payload_start, ip.begin() + payload_end);
    return true;
}

}  // namespace pcap_detail

inline Capture parse_capture(std::span<const std::uint8_t> data) {
    using namespace pcap_detail;
    if (data.size() < 24) throw ParseError("pcap: global header truncated");
    std::uint32_t magic;
    std::memcpy(&magic, data.data(), 4);
    bool swapped = false;
    bool nano = false;
    if (magic == kMagicMicro) {
    } else if (magic == __builtin_bswap32(kMagicMicro)) {
        swapped = true;
    } else if (magic == kMagicNano) {
        nano = true;
    } else if (magic == __builtin_bswap32(kMagicNano)) {
        swapped = nano = true;
    } else {
        throw ParseError("pcap: bad magic number");
    }
    FieldReader rd(swapped);
    const std::uint32_t linktype = rd.u32(data.data() + 20) & 0x0fffffff;
    if (linktype != kLinkEthernet && linktype != kLinkRaw && linktype != kLinkIpv4) {
        throw ParseError("pcap: unsupported link type " + std::to_string(linktype));
    }

    Capture out;
    std::size_t off = 24;
    while (off < data.size()) {
        if (data.size() - off < 16) {
            ++out.stats.truncated;
            break;
        }
        const std::uint8_t* rec = data.data() + off;
        const std::uint32_t sec = rd.u32(rec);
        const std::uint32_t frac = rd.u32(rec + 4);
        const std::uint32_t caplen = rd.u32(rec + 8);
        off += 16;
        if (caplen > data.size() - off) {
            ++out.stats.truncated;
            break;
        }
        ++out.stats.records;
        std::span<const std::uint8_t> frame(data.data() + off, caplen);
        off += caplen;

        std::span<const std::uint8_t> ip = frame;
        if (linktype == kLinkEthernet) {
            if (frame.size() < 14) {
                ++out.stats.truncated;
                ++out.stats.skipped;
                continue;
            }
            std::size_t l2 = 14;
            std::uint16_t ethertype = be16(&frame[12]);
            while ((ethertype == 0x8100 || ethertype == 0x88a8) && frame.size() >= l2 + 4) {
                ethertype = be16(&frame[l2 + 2]);
                l2 += 4;
            }
            if (ethertype == 0x86dd) {
                ++out.stats.skipped_ipv6;
                ++out.stats.skipped;
                continue;
            }
            if (ethertype != 0x0800) {
                ++out.stats.skipped;
                continue;
            }
            ip = frame.subspan(l2);
        }

        PacketEvent ev;
        if (!decode_ipv4(ip, ev, out.stats)) continue;
        if (nano) {
            ev.timestamp = static_cast<double>(std::int64_t{sec} * 1'000'000'000 + frac) / 1e9;
        } else {
            ev.timestamp = static_cast<double>(std::int64_t{sec} * 1'000'000 + frac) / 1e6;
        }
        out.events.push_back(std::move(ev));
        ++out.stats.parsed;
    }
    return out;
}

// A packet to be written; payload bytes beyond `payload.size()` up to
// `l4_payload_length` are filled with `filler`.
struct OutgoingPacket {
    double timestamp = 0.0;
    Ipv4 src_ip;
    Ipv4 dst_ip;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    Transport transport = Transport::TCP;
    std::uint8_t tcp_flags = 0;
    std::uint32_t seq = 0;
    std::uint32_t ack = 0;
    std::uint32_t l4_payload_length = 0;
    std::span<const std::uint8_t> payload;
};

class PcapWriter {
public:
    PcapWriter() {
        put32(pcap_detail::kMagicMicro);
        put16(2);
        put16(4);
        put32(0);
        put32(0);
        put32(65535);
        put32(pcap_detail::kLinkEthernet);
    }

    // Filler bytes are a deterministic function of `filler_seed` and offset.
    void write(const OutgoingPacket& pkt, std::uint64_t filler_seed = 0) {
        const std::uint16_t l4_header = pkt.transport == Transport::TCP ? 20 : 8;
        const std::uint32_t ip_total = 20u + l4_header + pkt.l4_payload_length;
        if (ip_total > 65535) throw ContractError("pcap writer: IP datagram too large");
        const std::uint32_t frame_len = 14 + ip_total;

        const auto us_total = static_cast<std::int64_t>(std::llround(pkt.timestamp * 1e6));
        put32(static_cast<std::uint32_t>(us_total / 1'000'000));
        put32(static_cast<std::uint32_t>(us_total % 1'000'000));
        put32(frame_len);
        put32(frame_len);

        static constexpr std::uint8_t kDstMac[6] = {0x02, 0x00, 0x00, 0x00, 0x00, 0x02};
        static constexpr std::uint8_t kSrcMac[6] = {0x02, 0x00, 0x00, 0x00, 0x00, 0x01};
        buf_.insert(buf_.end(), kDstMac, kDstMac + 6);
        buf_.insert(buf_.end(), kSrcMac, kSrcMac + 6);
        put16be(0x0800);

        const std::size_t ip_off = buf_.size();
        buf_.push_back(0x45);
        buf_.push_back(0);
        put16be(static_cast<std::uint16_t>(ip_total));
        put16be(static_cast<std::uint16_t>(ip_id_++));
        put16be(0x4000);  // DF
        buf_.push_back(64);
        buf_.push_back(static_cast<std::uint8_t>(pkt.transport));
        put16be(0);
        put32be(pkt.src_ip.value());
        put32be(pkt.dst_ip.value());
        std::uint32_t sum = 0;
        for (std::size_t i = 0; i < 20; i += 2) sum += pcap_detail::be16(&buf_[ip_off + i]);
        while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
        const auto csum = static_cast<std::uint16_t>(~sum);
        buf_[ip_off + 10] = static_cast<std::uint8_t>(csum >> 8);
        buf_[ip_off + 11] = static_cast<std::uint8_t>(csum & 0xff);

        put16be(pkt.src_port);
        put16be(pkt.dst_port);
        if (pkt.transport == Transport::TCP) {
            put32be(pkt.seq);
            put32be(pkt.ack);
            buf_.push_back(0x50);
            buf_.push_back(pkt.tcp_flags);
            put16be(64240);
            put16be(0);
            put16be(0);
        } else {
            put16be(static_cast<std::uint16_t>(8 + pkt.l4_payload_length));
            put16be(0);
        }

        const std::size_t given = std::min<std::size_t>(pkt.payload.size(), pkt.l4_payload_length);
        buf_.insert(buf_.end(), pkt.payload.begin(), pkt.payload.begin() + static_cast<std::ptrdiff_t>(given));
        std::uint64_t state = filler_seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL;
        for (std::size_t i = given; i < pkt.l4_payload_length; ++i) {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            buf_.push_back(static_cast<std::uint8_t>(state >> 24));
        }
    }

    [[nodiscard]] const Bytes& bytes() const& { return buf_; }
    [[nodiscard]] Bytes bytes() && { return std::move(buf_); }

private:
    void put16(std::uint16_t v) { buf_.insert(buf_.end(), reinterpret_cast<std::uint8_t*>(&v), reinterpret_cast<std::uint8_t*>(&v) + 2); }
    void put32(std::uint32_t v) { buf_.insert(buf_.end(), reinterpret_cast<std::uint8_t*>(&v), reinterpret_cast<std::uint8_t*>(&v) + 4); }
    void put16be(std::uint16_t v) {
        buf_.push_back(static_cast<std::uint8_t>(v >> 8));
        buf_.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    void put32be(std::uint32_t v) {
        put16be(static_cast<std::uint16_t>(v >> 16));
        put16be(static_cast<std::uint16_t>(v & 0xffff));
    }

    Bytes buf_;
    std::uint16_t ip_id_ = 1;
};

}  // namespace c2flow
