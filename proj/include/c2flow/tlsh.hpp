#pragma once

// TLSH locality-sensitive hash: 128 buckets, 1-byte checksum, 5-byte sliding
// window. Digest strings follow the usual "T1" + 70 hex characters layout.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <string_view>

#include "c2flow/error.hpp"

namespace c2flow::tlsh {

inline constexpr std::size_t kMinLength = 50;
inline constexpr std::size_t kBuckets = 128;
inline constexpr std::size_t kCodeSize = kBuckets / 4;

namespace detail {

inline constexpr std::array<std::uint8_t, 256> kPearson = {
    1,   87,  49,  12,  176, 178, 102, 166, 121, 193, 6,   84,  249, 230, 44,  163, 14,  197, 213, 181, 161, 85,
    218, 80,  64,  239, 24,  226, 236, 142, 38,  200, 110, 177, 104, 103, 141, 253, 255, 50,  77,  101, 81,  18,
    45,  96,  31,  222, 25,  107, 190, 70,  86,  237, 240, 34,  72,  242, 20,  214, 244, 227, 149, 235, 97,  234,
    57,  22,  60,  250, 82,  175, 208, 5,   127, 199, 111, 62,  135, 248, 174, 169, 211, 58,  66,  154, 106, 195,
    245, 171, 17,  187, 182, 179, 0,   243, 132, 56,  148, 75,  128, 133, 158, 100, 130, 126, 91,  13,  153, 246,
    216, 219, 119, 68,  223, 78,  83,  88,  201, 99,  122, 11,  92,  32,  136, 114, 52,  10,  138, 30,  48,  183,
    156, 35,  61,  26,  143, 74,  251, 94,  129, 162, 63,  152, 170, 7,   115, 167, 241, 206, 3,   150, 55,  59,
    151, 220, 90,  53,  23,  131, 125, 173, 15,  238, 79,  95,  89,  16,  105, 137, 225, 224, 217, 160, 37,  123,
    118, 73,  2,   157, 46,  116, 9,   145, 134, 228, 207, 212, 202, 215, 69,  229, 27,  188, 67,  124, 168, 252,
    42,  4,   29,  108, 21,  247, 19,  205, 39,  203, 233, 40,  186, 147, 198, 192, 155, 33,  164, 191, 98,  204,
    165, 180, 117, 76,  140, 36,  210, 172, 41,  54,  159, 8,   185, 232, 113, 196, 231, 47,  146, 120, 51,  65,
    28,  144, 254, 221, 93,  189, 194, 139, 112, 43,  71,  109, 184, 209};

// Upper bound of each log-length bucket.
inline constexpr std::array<std::uint32_t, 170> kTopVal = {
    1,          2,          3,          5,          7,          11,         17,         25,         38,
    57,         86,         129,        194,        291,        437,        656,        854,        1110,
    1443,       1876,       2439,       3171,       3475,       3823,       4205,       4626,       5088,
    5597,       6157,       6772,       7450,       8195,       9014,       9916,       10907,      11998,
    13198,      14518,      15970,      17567,      19323,      21256,      23382,      25720,      28292,
    31121,      34233,      37656,      41422,      45564,      50121,      55133,      60646,      66711,
    73382,      80721,      88793,      97672,      107439,     118183,     130002,     143002,     157302,
    173032,     190335,     209369,     230306,     253337,     278670,     306538,     337191,     370911,
    408002,     448802,     493682,     543050,     597356,     657091,     722800,     795081,     874589,
    962048,     1058252,    1164078,    1280486,    1408534,    1549388,    1704327,    1874759,    2062236,
    2268459,    2495305,    2744836,    3019320,    3321252,    3653374,    4018711,    4420582,    4862641,
    5348905,    5883796,    6472176,    7119394,    7831333,    8614467,    9475909,    10423501,   11465851,
    12612437,   13873681,   15261050,   16787154,   18465870,   20312458,   22343706,   24578077,   27035886,
    29739474,   32713425,   35984770,   39583245,   43541573,   47895730,   52685306,   57953837,   63749221,
    70124148,   77136564,   84850228,   93335252,   102668779,  112935659,  124229227,  136652151,  150317384,
    165349128,  181884040,  200072456,  220079703,  242087671,  266296456,  292926096,  322218735,  354440623,
    389884688,  428873168,  471760495,  518936559,  570830240,  627913311,  690704607,  759775136,  835752671,
    919327967,  1011260767, 1112386880, 1223623232, 1345985727, 1480584256, 1628642751, 1791507135, 1970657856,
    2167723648, 2384496256, 2622945920, 2885240448, 3173764736, 3491141248, 3840255616, 4224281216};

inline std::uint8_t pearson3(std::uint8_t salt, std::uint8_t a, std::uint8_t b, std::uint8_t c) {
    return kPearson[kPearson[kPearson[salt ^ a] ^ b] ^ c];
}

inline std::uint8_t length_code(std::uint64_t len) {
    const auto it = std::lower_bound(kTopVal.begin(), kTopVal.end(), len);
    return static_cast<std::uint8_t>(it - kTopVal.begin());
}

inline std::uint8_t swap_nibbles(std::uint8_t b) { return static_cast<std::uint8_t>((b << 4) | (b >> 4)); }

inline int mod_diff(int x, int y, int range) {
    const int d = std::abs(x - y);
    return std::min(d, range - d);
}

}  // namespace detail

struct Digest {
    std::uint8_t checksum = 0;
    std::uint8_t lvalue = 0;
    std::uint8_t q1ratio = 0;
    std::uint8_t q2ratio = 0;
    std::array<std::uint8_t, kCodeSize> code{};  // code[i] covers buckets 4i..4i+3

    friend bool operator==(const Digest&, const Digest&) = default;

    [[nodiscard]] std::string to_string() const {
        static constexpr char hex[] = "0123456789ABCDEF";
        std::string out = "T1";
        auto put = [&](std::uint8_t b) {
            out += hex[b >> 4];
            out += hex[b & 0xF];
        };
        put(detail::swap_nibbles(checksum));
        put(detail::swap_nibbles(lvalue));
        put(static_cast<std::uint8_t>((q1ratio << 4) | q2ratio));
        for (std::size_t i = 0; i < kCodeSize; ++i) put(code[kCodeSize - 1 - i]);
        return out;
    }

    // Accepts the 70-character body with or without the "T1" prefix.
    static Digest parse(std::string_view s) {
        if (s.size() == 72 && (s[0] == 'T' || s[0] == 't') && s[1] == '1') s.remove_prefix(2);
        if (s.size() != 70) throw ParseError("TLSH digest must have 70 hex characters: " + std::string(s));
        auto nib = [&](char c) -> std::uint8_t {
            if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
            if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
            if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
            throw ParseError("bad hex character in TLSH digest");
        };
        auto byte = [&](std::size_t i) { return static_cast<std::uint8_t>(nib(s[2 * i]) << 4 | nib(s[2 * i + 1])); };
        Digest d;
        d.checksum = detail::swap_nibbles(byte(0));
        d.lvalue = detail::swap_nibbles(byte(1));
        d.q1ratio = byte(2) >> 4;
        d.q2ratio = byte(2) & 0xF;
        for (std::size_t i = 0; i < kCodeSize; ++i) d.code[kCodeSize - 1 - i] = byte(3 + i);
        return d;
    }
};

inline Digest digest(std::span<const std::uint8_t> data) {
    using detail::pearson3;
    if (data.size() < kMinLength) {
        throw NotHashableError("input of " + std::to_string(data.size()) + " bytes is shorter than " +
                               std::to_string(kMinLength));
    }
    std::array<std::uint32_t, 256> buckets{};
    std::uint8_t checksum = 0;
    for (std::size_t i = 4; i < data.size(); ++i) {
        const std::uint8_t a4 = data[i], a3 = data[i - 1], a2 = data[i - 2], a1 = data[i - 3], a0 = data[i - 4];
        checksum = pearson3(1, a4, a3, checksum);
        ++buckets[pearson3(49, a4, a3, a2)];
        ++buckets[pearson3(12, a4, a3, a1)];
        ++buckets[pearson3(178, a4, a2, a1)];
        ++buckets[pearson3(166, a4, a2, a0)];
        ++buckets[pearson3(84, a4, a3, a0)];
        ++buckets[pearson3(230, a4, a1, a0)];
    }

    std::array<std::uint32_t, kBuckets> sorted{};
    std::copy_n(buckets.begin(), kBuckets, sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    const std::uint32_t q1 = sorted[kBuckets / 4 - 1];
    const std::uint32_t q2 = sorted[kBuckets / 2 - 1];
    const std::uint32_t q3 = sorted[kBuckets - kBuckets / 4 - 1];
    if (q3 == 0) throw NotHashableError("input has too little variation to hash");
    const auto nonzero = std::count_if(buckets.begin(), buckets.begin() + kBuckets, [](std::uint32_t c) { return c > 0; });
    if (nonzero <= static_cast<long>(kBuckets / 2)) throw NotHashableError("input has too little variation to hash");

    Digest d;
    d.checksum = checksum;
    for (std::size_t i = 0; i < kCodeSize; ++i) {
        std::uint8_t h = 0;
        for (unsigned j = 0; j < 4; ++j) {
            const std::uint32_t k = buckets[4 * i + j];
            if (q3 < k) {
                h = static_cast<std::uint8_t>(h + (3u << (2 * j)));
            } else if (q2 < k) {
                h = static_cast<std::uint8_t>(h + (2u << (2 * j)));
            } else if (q1 < k) {
                h = static_cast<std::uint8_t>(h + (1u << (2 * j)));
            }
        }
        d.code[i] = h;
    }
    d.lvalue = detail::length_code(data.size());
    d.q1ratio = static_cast<std::uint8_t>((static_cast<std::uint64_t>(q1) * 100 / q3) % 16);
    d.q2ratio = static_cast<std::uint8_t>((static_cast<std::uint64_t>(q2) * 100 / q3) % 16);
    return d;
}

inline Digest digest(std::string_view text) {
    return digest(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Standard TLSH distance including the length term.
inline int distance(const Digest& a, const Digest& b) {
    using detail::mod_diff;
    int diff = 0;
    const int ldiff = mod_diff(a.lvalue, b.lvalue, 256);
    diff += ldiff <= 1 ? ldiff : ldiff * 12;
    for (auto [x, y] : {std::pair{a.q1ratio, b.q1ratio}, std::pair{a.q2ratio, b.q2ratio}}) {
        const int q = mod_diff(x, y, 16);
        diff += q <= 1 ? q : (q - 1) * 12;
    }
    if (a.checksum != b.checksum) ++diff;
    for (std::size_t i = 0; i < kCodeSize; ++i) {
        int x = a.code[i], y = b.code[i];
        for (int p = 0; p < 4; ++p) {
            const int d = std::abs((x & 3) - (y & 3));
            diff += d == 3 ? 6 : d;
            x >>= 2;
            y >>= 2;
        }
    }
    return diff;
}

inline int distance(std::string_view a, std::string_view b) { return distance(Digest::parse(a), Digest::parse(b)); }

}  // namespace c2flow::tlsh
