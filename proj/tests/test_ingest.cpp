#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "c2flow/app_metadata.hpp"
#include "c2flow/ingest.hpp"
#include "helpers.hpp"

using namespace c2flow;
using testutil::data_path;

namespace {

nlohmann::json expected_flows() { return nlohmann::json::parse(read_file_text(data_path("mixed_expected.json"))); }

void expect_matches_oracle(const std::vector<FlowRecord>& flows, const nlohmann::json& want) {
    ASSERT_EQ(flows.size(), want.size());
    for (std::size_t i = 0; i < flows.size(); ++i) {
        SCOPED_TRACE("flow " + std::to_string(i));
        const auto& f = flows[i];
        const auto& w = want[i];
        EXPECT_EQ(f.key, w.at("key").get<FlowKey>());
        EXPECT_NEAR(f.first_ts, w.at("first_ts").get<double>(), 1e-6);
        EXPECT_NEAR(f.last_ts, w.at("last_ts").get<double>(), 1e-6);
        EXPECT_NEAR(f.duration, w.at("duration").get<double>(), 1e-6);
        const auto pkts = w.at("packets").get<std::vector<PacketMeta>>();
        ASSERT_EQ(f.packets.size(), pkts.size());
        for (std::size_t k = 0; k < pkts.size(); ++k) {
            EXPECT_NEAR(f.packets[k].timestamp, pkts[k].timestamp, 1e-6);
            EXPECT_EQ(f.packets[k].direction, pkts[k].direction);
            EXPECT_EQ(f.packets[k].ip_total_length, pkts[k].ip_total_length);
            EXPECT_EQ(f.packets[k].l3_payload, pkts[k].l3_payload);
            EXPECT_EQ(f.packets[k].l4_payload, pkts[k].l4_payload);
            EXPECT_EQ(f.packets[k].tcp_flags, pkts[k].tcp_flags);
        }
    }
}

}  // namespace

TEST(Ingest, MixedCaptureMatchesOracle) {
    CaptureStats stats;
    auto flows = load_flows(data_path("mixed.pcap"), {}, &stats);
    expect_matches_oracle(flows, expected_flows());
    EXPECT_EQ(stats.skipped_ipv6, 1u);
    EXPECT_GE(stats.skipped, 2u);  // IPv6 + ICMP
    EXPECT_EQ(stats.truncated, 0u);
}

TEST(Ingest, NanosecondAndBigEndianVariantsAgree) {
    const auto want = expected_flows();
    expect_matches_oracle(load_flows(data_path("mixed_ns.pcap")), want);
    expect_matches_oracle(load_flows(data_path("mixed_be.pcap")), want);
}

TEST(Ingest, HintsFromPayloads) {
    auto flows = load_flows(data_path("mixed.pcap"));
    ASSERT_EQ(flows.size(), 8u);
    EXPECT_EQ(flows[0].hints.http_host, "www.example.com");
    EXPECT_EQ(flows[0].hints.inferred_protocol, AppProtocol::HTTP);
    EXPECT_EQ(flows[1].hints.http_host, "second.example");
    EXPECT_EQ(flows[2].hints.tls_sni, "amazon.com");
    EXPECT_EQ(flows[2].hints.inferred_protocol, AppProtocol::HTTPS);
    EXPECT_EQ(flows[3].hints.dns_qnames, std::vector<std::string>{"mail.example.org"});
    EXPECT_EQ(flows[3].hints.inferred_protocol, AppProtocol::DNS);
    EXPECT_EQ(flows[4].hints.inferred_protocol, AppProtocol::Other);
    EXPECT_EQ(primary_domain(flows[2].hints), "amazon.com");
}

TEST(Ingest, RawIpLinkType) {
    auto flows = load_flows(data_path("dns_raw.pcap"));
    ASSERT_EQ(flows.size(), 1u);
    EXPECT_EQ(flows[0].packets.size(), 2u);
    EXPECT_EQ(flows[0].hints.dns_qnames, std::vector<std::string>{"mail.example.org"});
}

TEST(Ingest, TruncatedTailIsAWarningNotAnError) {
    CaptureStats stats;
    auto flows = load_flows(data_path("truncated.pcap"), {}, &stats);
    EXPECT_EQ(stats.truncated, 1u);
    auto want = expected_flows();
    // the last record (the RST of the empty flow) is lost
    ASSERT_EQ(flows.size(), want.size());
    EXPECT_EQ(flows.back().packets.size(), 1u);
}

TEST(Ingest, BadHeaderThrows) {
    Bytes junk = {0xde, 0xad, 0xbe, 0xef, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    EXPECT_THROW(parse_capture(junk), ParseError);
    Bytes short_header = {0xd4, 0xc3, 0xb2, 0xa1, 2, 0};
    EXPECT_THROW(parse_capture(short_header), ParseError);
}

TEST(Ingest, FiltersDropJumboAndEmptyFlows) {
    FilterStats fs;
    auto flows = filter_flows(load_flows(data_path("mixed.pcap")), {}, &fs);
    EXPECT_EQ(fs.dropped_mtu, 1u);
    EXPECT_EQ(fs.dropped_empty, 1u);
    EXPECT_EQ(flows.size(), 6u);
    for (const auto& f : flows) {
        for (const auto& p : f.packets) EXPECT_LE(p.ip_total_length, 1500u);
    }
    auto keep = filter_flows(load_flows(data_path("mixed.pcap")), {1500, false});
    EXPECT_EQ(keep.size(), 7u);
}

TEST(Ingest, UdpIdleTimeoutBoundary) {
    using testutil::packet;
    auto ev = [](double ts, bool from_client) {
        PacketEvent e;
        e.timestamp = ts;
        e.src_ip = Ipv4::parse(from_client ? "10.0.0.1" : "10.0.0.2");
        e.dst_ip = Ipv4::parse(from_client ? "10.0.0.2" : "10.0.0.1");
        e.src_port = from_client ? 5000 : 6000;
        e.dst_port = from_client ? 6000 : 5000;
        e.transport = Transport::UDP;
        e.ip_total_length = 40;
        e.ip_header_length = 20;
        e.l4_header_length = 8;
        return e;
    };
    std::vector<PacketEvent> events = {ev(0, true), ev(60.0, false), ev(120.5, true)};
    auto flows = assemble_flows(events);
    ASSERT_EQ(flows.size(), 2u);  // a gap of exactly 60 s stays in the flow
    EXPECT_EQ(flows[0].packets.size(), 2u);
    EXPECT_EQ(flows[1].packets.size(), 1u);
}

TEST(Ingest, JsonlRoundTrip) {
    auto flows = load_flows(data_path("mixed.pcap"));
    flows[0].label = Label::Malicious;
    auto back = flows_from_jsonl(flows_to_jsonl(flows));
    ASSERT_EQ(back.size(), flows.size());
    for (std::size_t i = 0; i < flows.size(); ++i) EXPECT_TRUE(same_flow(flows[i], back[i])) << i;
}

TEST(Ingest, JsonlErrorsCarryLineNumber) {
    auto flows = load_flows(data_path("mixed.pcap"));
    std::string text = flows_to_jsonl({flows[0]}) + "{not json\n";
    try {
        flows_from_jsonl(text);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(Ingest, EmptyFileGivesNoFlows) {
    auto dir = testutil::scratch_dir("empty_input");
    testutil::write_text(dir / "empty.pcap", "");
    EXPECT_TRUE(load_flows((dir / "empty.pcap").string()).empty());
}
