#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "c2flow/features.hpp"
#include "c2flow/flow.hpp"
#include "c2flow/ingest.hpp"

namespace testutil {

inline std::string data_path(const std::string& name) { return std::string(C2FLOW_TEST_DATA) + "/" + name; }

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("c2flow_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

inline c2flow::PacketMeta packet(double ts, c2flow::Direction d, std::uint32_t l4, std::uint8_t flags = 0,
                                 bool tcp = true) {
    const std::uint32_t hdr = tcp ? 20 : 8;
    return {ts, d, 20 + hdr + l4, hdr + l4, l4, flags};
}

inline c2flow::FlowRecord make_flow(const std::string& client, std::uint16_t cport, const std::string& server,
                                    std::uint16_t sport, c2flow::Transport t,
                                    std::vector<c2flow::PacketMeta> packets) {
    c2flow::FlowRecord f;
    f.key.client_ip = c2flow::Ipv4::parse(client);
    f.key.server_ip = c2flow::Ipv4::parse(server);
    f.key.client_port = cport;
    f.key.server_port = sport;
    f.key.transport = t;
    f.packets = std::move(packets);
    f.first_ts = f.packets.front().timestamp;
    f.last_ts = f.packets.back().timestamp;
    f.duration = f.last_ts - f.first_ts;
    return f;
}

// xorshift32 as used by the vector generators.
struct XorShift32 {
    std::uint32_t s;
    explicit XorShift32(std::uint32_t seed) : s(seed ? seed : 1) {}
    std::uint32_t next() {
        s ^= s << 13;
        s ^= s >> 17;
        s ^= s << 5;
        return s;
    }
};

// NetflowV5-shaped dataset of random values. The label is 1 when the first
// feature exceeds 0.5; `noise` flips that fraction of labels.
inline c2flow::Dataset toy_dataset(std::size_t n, std::uint64_t seed, double noise = 0.0) {
    using namespace c2flow;
    Dataset ds;
    ds.set = FeatureSetId::NetflowV5;
    ds.schema = full_schema(ds.set);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        FeatureVector fv;
        fv.set = ds.set;
        for (const auto& name : ds.schema.numeric) fv.numeric.emplace_back(name, u(rng));
        int label = fv.numeric[0].second > 0.5 ? 1 : 0;
        if (u(rng) < noise) label = 1 - label;
        ds.rows.push_back(std::move(fv));
        ds.labels.push_back(label);
    }
    return ds;
}

inline std::uint8_t map_byte(std::uint32_t v, unsigned mode) {
    static constexpr char alpha[] = "abcdefghijklmnopqrstuvwxyz     ";
    if (mode == 0) return static_cast<std::uint8_t>((v >> 8) & 0xff);
    if (mode == 1) return static_cast<std::uint8_t>(alpha[(v >> 8) % 31]);
    return static_cast<std::uint8_t>("ab"[(v >> 8) % 2]);
}

// Byte string of `length` drawn from xorshift32(seed), then `mut_count`
// point mutations driven by xorshift32(mut_seed).
inline std::vector<std::uint8_t> recipe_bytes(unsigned seed, unsigned length, unsigned mode, unsigned mut_seed,
                                              unsigned mut_count) {
    std::vector<std::uint8_t> out;
    out.reserve(length);
    XorShift32 g(seed);
    for (unsigned i = 0; i < length; ++i) out.push_back(map_byte(g.next(), mode));
    XorShift32 m(mut_seed);
    for (unsigned i = 0; i < mut_count; ++i) {
        const auto pos = m.next() % length;
        out[pos] = map_byte(m.next(), mode);
    }
    return out;
}

}  // namespace testutil
