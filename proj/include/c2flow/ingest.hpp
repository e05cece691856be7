#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "c2flow/app_metadata.hpp"
#include "c2flow/error.hpp"
#include "c2flow/flow.hpp"
#include "c2flow/pcap.hpp"

namespace c2flow {

struct AssembleOptions {
    double udp_idle_timeout = 60.0;
    bool keep_payloads = true;
    PortMap ports;
};

namespace ingest_detail {

// Endpoint-order-free connection identity.
using ConnId = std::tuple<std::uint32_t, std::uint16_t, std::uint32_t, std::uint16_t, std::uint8_t>;

inline ConnId conn_id(const PacketEvent& ev) {
    auto a = std::make_pair(ev.src_ip.value(), ev.src_port);
    auto b = std::make_pair(ev.dst_ip.value(), ev.dst_port);
    if (b < a) std::swap(a, b);
    return {a.first, a.second, b.first, b.second, static_cast<std::uint8_t>(ev.transport)};
}

struct OpenFlow {
    std::size_t index = 0;
    bool finished = false;  // FIN or RST observed
};

}  // namespace ingest_detail

inline std::vector<FlowRecord> assemble_flows(std::span<const PacketEvent> events, const AssembleOptions& opts = {}) {
    using namespace ingest_detail;
    std::vector<FlowRecord> flows;
    std::map<ConnId, OpenFlow> open;

    auto start_flow = [&](const PacketEvent& ev) {
        FlowRecord f;
        const bool syn_ack = (ev.tcp_flags & tcp_flag::SYN) && (ev.tcp_flags & tcp_flag::ACK);
        const bool sender_is_server = ev.transport == Transport::TCP && syn_ack;
        if (sender_is_server) {
            f.key = {ev.dst_ip, ev.src_ip, ev.dst_port, ev.src_port, ev.transport};
        } else {
            f.key = {ev.src_ip, ev.dst_ip, ev.src_port, ev.dst_port, ev.transport};
        }
        f.first_ts = ev.timestamp;
        flows.push_back(std::move(f));
        return flows.size() - 1;
    };

    for (const auto& ev : events) {
        const auto id = conn_id(ev);
        auto it = open.find(id);
        bool fresh = it == open.end();
        if (!fresh) {
            const auto& cur = flows[it->second.index];
            if (ev.transport == Transport::UDP) {
                fresh = ev.timestamp - cur.last_ts > opts.udp_idle_timeout;
            } else {
                const bool pure_syn = (ev.tcp_flags & tcp_flag::SYN) && !(ev.tcp_flags & tcp_flag::ACK);
                fresh = pure_syn && it->second.finished;
            }
        }
        if (fresh) {
            const auto idx = start_flow(ev);
            it = open.insert_or_assign(id, OpenFlow{idx, false}).first;
        }
        auto& flow = flows[it->second.index];
        PacketMeta pm;
        pm.timestamp = ev.timestamp;
        pm.direction = (ev.src_ip == flow.key.client_ip && ev.src_port == flow.key.client_port)
                           ? Direction::ClientToServer
                           : Direction::ServerToClient;
        pm.ip_total_length = ev.ip_total_length;
        pm.l3_payload = ev.l3_payload();
        pm.l4_payload = ev.l4_payload();
        pm.tcp_flags = ev.tcp_flags;
        flow.packets.push_back(pm);
        if (opts.keep_payloads) flow.payloads.push_back(ev.payload);
        flow.last_ts = ev.timestamp;
        if (ev.tcp_flags & (tcp_flag::FIN | tcp_flag::RST)) it->second.finished = true;
    }

    for (auto& f : flows) {
        f.duration = f.last_ts - f.first_ts;
        ParseWarnings warnings;
        f.hints = compute_hints(f, f.payloads, opts.ports, &warnings);
        if (!opts.keep_payloads) f.payloads.clear();
    }
    return flows;
}

struct FilterOptions {
    std::uint32_t mtu_limit = 1500;
    bool drop_empty = true;
};

struct FilterStats {
    std::size_t dropped_mtu = 0;
    std::size_t dropped_empty = 0;
};

inline std::vector<FlowRecord> filter_flows(std::vector<FlowRecord> flows, const FilterOptions& opts = {},
                                            FilterStats* stats = nullptr) {
    std::vector<FlowRecord> kept;
    kept.reserve(flows.size());
    for (auto& f : flows) {
        bool over_mtu = false;
        for (const auto& p : f.packets) {
            if (p.ip_total_length > opts.mtu_limit) {
                over_mtu = true;
                break;
            }
        }
        if (over_mtu) {
            if (stats) ++stats->dropped_mtu;
            continue;
        }
        if (opts.drop_empty && f.total_l4_payload() == 0) {
            if (stats) ++stats->dropped_empty;
            continue;
        }
        kept.push_back(std::move(f));
    }
    return kept;
}

inline Bytes read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string read_file_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Loads flows from a pcap or a JSON-lines flow dump (chosen by content).
inline std::vector<FlowRecord> load_flows(const std::string& path, const AssembleOptions& assemble = {},
                                          CaptureStats* stats = nullptr) {
    Bytes data = read_file_bytes(path);
    if (data.empty()) return {};
    if (data[0] == '{' || data[0] == '\n' || data[0] == ' ') {
        return flows_from_jsonl(std::string(data.begin(), data.end()));
    }
    auto cap = parse_capture(data);
    if (stats) *stats = cap.stats;
    return assemble_flows(cap.events, assemble);
}

}  // namespace c2flow
