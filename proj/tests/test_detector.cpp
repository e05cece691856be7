#include <gtest/gtest.h>

#include "c2flow/detector.hpp"
#include "c2flow/synth.hpp"
#include "helpers.hpp"

using namespace c2flow;

namespace {

const MalleableProfileSpec& c2_spec(const std::string& name) {
    static const auto specs = default_c2_specs();
    for (const auto& s : specs) {
        if (s.name == name) return s;
    }
    throw std::runtime_error(name);
}

const BenignTrafficSpec& benign_spec(const std::string& name) {
    static const auto specs = default_benign_specs();
    for (const auto& s : specs) {
        if (s.name == name) return s;
    }
    throw std::runtime_error(name);
}

std::vector<FlowRecord> concat(std::vector<FlowRecord> a, const std::vector<FlowRecord>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

// A model whose every tree is a single leaf voting `label`.
ForestModel constant_model(int label) {
    auto flows = gen_benign_flows(benign_spec("web-http"), 20, 1);
    auto ds = build_dataset(flows, FeatureSetId::NetflowV9, FeatureMask::none());
    std::fill(ds.labels.begin(), ds.labels.end(), label);
    return train_model(ds, {3, Criterion::Gini, 4, 2}, 1);
}

void save(const std::filesystem::path& p, const ForestModel& m) { testutil::write_text(p, model_to_string(m)); }

// Registry with a trained jquery HTTP specific model and a generic HTTP
// fan-out of the given constant models.
struct Fixture {
    std::filesystem::path dir;
    ModelRegistry reg;
};

Fixture make_fixture(const std::string& name, const std::vector<int>& generic_votes) {
    Fixture fx;
    fx.dir = testutil::scratch_dir("detector_" + name);
    auto train = concat(gen_c2_flows(c2_spec("jquery-http"), 150, 1), gen_benign_flows(benign_spec("jquery-library"), 150, 2));
    auto ds = build_dataset(train, FeatureSetId::NetflowV9, FeatureMask::none());
    save(fx.dir / "jquery.json", train_model(ds, {15, Criterion::Gini, 6, 2}, 3));

    nlohmann::json models = nlohmann::json::array();
    models.push_back({{"protocol", "HTTP"}, {"group", "jquery"}, {"benign", "specific"}, {"path", "jquery.json"}});
    for (std::size_t i = 0; i < generic_votes.size(); ++i) {
        const auto file = "generic" + std::to_string(i) + ".json";
        save(fx.dir / file, constant_model(generic_votes[i]));
        models.push_back({{"protocol", "HTTP"}, {"group", "g" + std::to_string(i)}, {"benign", "generic"}, {"path", file}});
    }
    nlohmann::json groups = nlohmann::json::array();
    groups.push_back({{"group_id", "jquery"}, {"members", {"p1"}}, {"representative_id", "p1"}, {"domains", {"code.jquery.com"}},
                      {"subnets", nlohmann::json::array()}});
    groups.push_back({{"group_id", "hosted"}, {"members", {"p2"}}, {"representative_id", "p2"}, {"domains", nlohmann::json::array()},
                      {"subnets", {"203.0.113.0/24"}}});
    nlohmann::json j{{"groups", groups}, {"models", models}, {"port_map", {{{"transport", "tcp"}, {"port", 8080}, {"protocol", "HTTP"}}}}};
    testutil::write_text(fx.dir / "registry.json", j.dump(2));
    fx.reg = load_registry(fx.dir / "registry.json");
    return fx;
}

FlowRecord http_flow(const std::string& host, std::uint16_t port = 80) {
    auto spec = c2_spec("jquery-http");
    spec.domain = host;
    spec.name = "probe-" + host;
    auto f = gen_c2_flows(spec, 1, 4).front();
    f.key.server_port = port;
    return f;
}

}  // namespace

TEST(Detector, SpecificModelForKnownDomain) {
    auto fx = make_fixture("specific", {0});
    auto v = classify_flow(http_flow("code.jquery.com"), fx.reg);
    EXPECT_TRUE(v.specific);
    EXPECT_EQ(v.group, "jquery");
    ASSERT_EQ(v.scores.size(), 1u);
    EXPECT_EQ(v.scores[0].model, "HTTP/jquery/specific");
    EXPECT_EQ(v.label, Label::Malicious);
    EXPECT_EQ(v.domain_hint, "code.jquery.com");
}

TEST(Detector, HostWinsOverConflictingSni) {
    auto fx = make_fixture("conflict", {0});
    auto f = http_flow("code.jquery.com");
    f.hints.tls_sni = "other.example";
    auto v = classify_flow(f, fx.reg);
    EXPECT_TRUE(v.hint_conflict);
    EXPECT_EQ(v.domain_hint, "code.jquery.com");
    EXPECT_TRUE(v.specific);
    BatchReport rep;
    rep.entries.push_back({f.key, f.first_ts, std::nullopt, v, ""});
    EXPECT_NE(report_to_jsonl(rep).find("\"hint_conflict\":true"), std::string::npos);
}

TEST(Detector, SubdomainsResolveToTheGroup) {
    auto fx = make_fixture("subdomain", {0});
    EXPECT_EQ(resolve_group(http_flow("cdn.code.jquery.com"), fx.reg), "jquery");
    EXPECT_EQ(resolve_group(http_flow("notcode.jquery.com"), fx.reg), std::nullopt);
}

TEST(Detector, UnknownDomainFansOutToGenericModels) {
    auto fx = make_fixture("fanout", {0, 0});
    auto v = classify_flow(http_flow("unknown.example"), fx.reg);
    EXPECT_FALSE(v.specific);
    EXPECT_FALSE(v.group.has_value());
    EXPECT_EQ(v.scores.size(), 2u);
    EXPECT_EQ(v.label, Label::Benign);
}

TEST(Detector, SubnetOnlyAppliesWithoutDomainHint) {
    auto fx = make_fixture("subnet", {0});
    auto f = http_flow("x.example");
    f.key.server_ip = Ipv4::parse("203.0.113.7");
    EXPECT_EQ(resolve_group(f, fx.reg), std::nullopt);
    f.hints = {};
    EXPECT_EQ(resolve_group(f, fx.reg), "hosted");
    f.key.server_ip = Ipv4::parse("198.51.100.1");
    EXPECT_EQ(resolve_group(f, fx.reg), std::nullopt);
}

TEST(Detector, OrVersusMajority) {
    auto fx = make_fixture("agg", {1, 0, 0});
    const auto f = http_flow("unknown.example");
    auto any = classify_flow(f, fx.reg, Aggregation::Or);
    EXPECT_EQ(any.label, Label::Malicious);
    EXPECT_DOUBLE_EQ(any.score, 1.0);
    auto maj = classify_flow(f, fx.reg, Aggregation::Majority);
    EXPECT_EQ(maj.label, Label::Benign);
    EXPECT_DOUBLE_EQ(maj.score, 1.0 / 3.0);

    auto tie = make_fixture("tie", {1, 0});
    EXPECT_EQ(classify_flow(f, tie.reg, Aggregation::Majority).label, Label::Malicious);
}

TEST(Detector, UnclassifiableFlows) {
    auto fx = make_fixture("uncl", {0});
    EXPECT_THROW(classify_flow(http_flow("code.jquery.com", 9000), fx.reg), UnclassifiableFlow);
    // the registry maps tcp/8080 to HTTP
    EXPECT_NO_THROW(classify_flow(http_flow("code.jquery.com", 8080), fx.reg));
    // HTTPS has no models at all
    auto tls = gen_c2_flows(c2_spec("amazon-https"), 1, 1).front();
    try {
        classify_flow(tls, fx.reg);
        FAIL();
    } catch (const UnclassifiableFlow& e) {
        EXPECT_EQ(e.key(), tls.key);
    }
}

TEST(Detector, RegistryRoundTripAndErrors) {
    auto fx = make_fixture("json", {1});
    const auto j = registry_to_json(fx.reg);
    auto back = registry_from_json(j, fx.dir);
    EXPECT_EQ(registry_to_json(back), j);
    EXPECT_EQ(back.models.size(), 2u);
    EXPECT_EQ(back.ports.lookup(Transport::TCP, 8080), AppProtocol::HTTP);

    auto missing = j;
    missing["models"][0]["path"] = "nope.json";
    EXPECT_THROW(registry_from_json(missing, fx.dir), ParseError);
    auto dup = j;
    dup["models"].push_back(dup["models"][0]);
    EXPECT_THROW(registry_from_json(dup, fx.dir), ParseError);
    auto other = j;
    other["models"][0]["protocol"] = "Other";
    EXPECT_THROW(registry_from_json(other, fx.dir), ParseError);
    testutil::write_text(fx.dir / "broken.json", "{");
    EXPECT_THROW(load_registry(fx.dir / "broken.json"), ParseError);
}

TEST(Detector, LabelsCsvRoundTrip) {
    auto flows = concat(gen_c2_flows(c2_spec("amazon-dns"), 10, 1), gen_benign_flows(benign_spec("dns-lookup"), 10, 1));
    const auto labels = labels_from_csv(labels_to_csv(flows));
    EXPECT_EQ(labels.size(), flows.size());
    auto copy = flows;
    for (auto& f : copy) f.label.reset();
    EXPECT_EQ(apply_labels(copy, labels), flows.size());
    for (std::size_t i = 0; i < flows.size(); ++i) EXPECT_EQ(copy[i].label, flows[i].label);
    EXPECT_THROW(labels_from_csv("tcp,1.2.3.4,1\n"), ParseError);
    EXPECT_THROW(labels_from_csv("tcp,1.2.3.4,x,5.6.7.8,80,1.5,Benign\n"), ParseError);
}

TEST(Detector, BatchIsDeterministicAcrossJobs) {
    auto fx = make_fixture("batch", {1, 0});
    auto flows = concat(gen_c2_flows(c2_spec("jquery-http"), 40, 8), gen_benign_flows(benign_spec("web-http"), 40, 9));
    flows.push_back(http_flow("code.jquery.com", 9000));
    std::reverse(flows.begin(), flows.end());
    auto one = run_batch(flows, fx.reg, Aggregation::Or, 1);
    auto four = run_batch(flows, fx.reg, Aggregation::Or, 4);
    EXPECT_EQ(report_to_jsonl(one), report_to_jsonl(four));
    EXPECT_EQ(report_summary_csv(one), report_summary_csv(four));
    EXPECT_EQ(one.unclassifiable, 1u);
    EXPECT_EQ(one.specific, 40u);
    EXPECT_EQ(one.fanout, 40u);
    EXPECT_TRUE(one.has_labels);
    EXPECT_EQ(one.tp + one.fp + one.tn + one.fn, 80u);
    for (std::size_t i = 1; i < one.entries.size(); ++i) {
        EXPECT_LE(one.entries[i - 1].first_ts, one.entries[i].first_ts);
    }
    EXPECT_NE(report_to_jsonl(one).find("\"error\":\"UnclassifiableFlow\""), std::string::npos);
}
