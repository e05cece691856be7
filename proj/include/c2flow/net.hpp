#pragma once

#include <array>
#include <charconv>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "c2flow/error.hpp"

namespace c2flow {

class Ipv4 {
public:
    constexpr Ipv4() = default;
    constexpr explicit Ipv4(std::uint32_t host_order) : value_(host_order) {}
    constexpr Ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d)
        : value_((std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) | (std::uint32_t{c} << 8) | d) {}

    static Ipv4 parse(std::string_view text) {
        std::uint32_t out = 0;
        const char* p = text.data();
        const char* end = text.data() + text.size();
        for (int octet = 0; octet < 4; ++octet) {
            unsigned v = 0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{} || next == p || v > 255) {
                throw ParseError("invalid IPv4 address: " + std::string(text));
            }
            out = (out << 8) | v;
            p = next;
            if (octet < 3) {
                if (p == end || *p != '.') throw ParseError("invalid IPv4 address: " + std::string(text));
                ++p;
            }
        }
        if (p != end) throw ParseError("invalid IPv4 address: " + std::string(text));
        return Ipv4(out);
    }

    [[nodiscard]] constexpr std::uint32_t value() const { return value_; }

    [[nodiscard]] std::string to_string() const {
        return std::to_string(value_ >> 24) + '.' + std::to_string((value_ >> 16) & 0xff) + '.' +
               std::to_string((value_ >> 8) & 0xff) + '.' + std::to_string(value_ & 0xff);
    }

    friend constexpr auto operator<=>(const Ipv4&, const Ipv4&) = default;

private:
    std::uint32_t value_ = 0;
};

struct Cidr {
    Ipv4 network;
    int prefix_len = 0;

    static Cidr parse(std::string_view text) {
        auto slash = text.find('/');
        if (slash == std::string_view::npos) throw ParseError("CIDR without prefix length: " + std::string(text));
        Cidr c;
        c.network = Ipv4::parse(text.substr(0, slash));
        auto len_text = text.substr(slash + 1);
        auto [ptr, ec] = std::from_chars(len_text.data(), len_text.data() + len_text.size(), c.prefix_len);
        if (ec != std::errc{} || ptr != len_text.data() + len_text.size() || c.prefix_len < 0 || c.prefix_len > 32) {
            throw ParseError("invalid CIDR prefix length: " + std::string(text));
        }
        c.network = Ipv4(c.network.value() & c.mask());
        return c;
    }

    [[nodiscard]] constexpr std::uint32_t mask() const {
        return prefix_len == 0 ? 0u : ~std::uint32_t{0} << (32 - prefix_len);
    }

    [[nodiscard]] constexpr bool contains(Ipv4 ip) const { return (ip.value() & mask()) == network.value(); }

    [[nodiscard]] std::string to_string() const { return network.to_string() + '/' + std::to_string(prefix_len); }

    friend constexpr auto operator<=>(const Cidr&, const Cidr&) = default;
};

enum class Transport : std::uint8_t { TCP = 6, UDP = 17 };

inline std::string_view to_string(Transport t) { return t == Transport::TCP ? "tcp" : "udp"; }

inline Transport transport_from_string(std::string_view s) {
    if (s == "tcp" || s == "TCP") return Transport::TCP;
    if (s == "udp" || s == "UDP") return Transport::UDP;
    throw ParseError("unknown transport: " + std::string(s));
}

namespace tcp_flag {
inline constexpr std::uint8_t FIN = 0x01;
inline constexpr std::uint8_t SYN = 0x02;
inline constexpr std::uint8_t RST = 0x04;
inline constexpr std::uint8_t PSH = 0x08;
inline constexpr std::uint8_t ACK = 0x10;
inline constexpr std::uint8_t URG = 0x20;
inline constexpr std::uint8_t ECE = 0x40;
inline constexpr std::uint8_t CWR = 0x80;
}  // namespace tcp_flag

}  // namespace c2flow
