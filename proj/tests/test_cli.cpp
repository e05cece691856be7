#include <gtest/gtest.h>

#include "c2flow/cli.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace c2flow;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "c2flow");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string first_line(const fs::path& p) {
    const auto text = read_file_text(p.string());
    return text.substr(0, text.find('\n'));
}

std::size_t line_count(const fs::path& p) {
    const auto text = read_file_text(p.string());
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// A small synthetic capture: jquery C2 beacons and jquery library downloads.
fs::path small_plan(const fs::path& dir, std::size_t n) {
    SynthPlan plan;
    for (const auto& s : default_c2_specs()) {
        if (s.name == "jquery-http") plan.c2.emplace_back(s, n);
    }
    for (const auto& s : default_benign_specs()) {
        if (s.name == "jquery-library") plan.benign.emplace_back(s, n);
    }
    testutil::write_text(dir / "plan.json", plan_to_json(plan).dump(2));
    return dir / "plan.json";
}

}  // namespace

TEST(Cli, SynthThenExtract) {
    const auto dir = testutil::scratch_dir("cli_extract");
    const auto plan = small_plan(dir, 20);
    ASSERT_EQ(run_cli({"synth", "--plan", plan.string(), "--seed", "4", "--out", (dir / "syn").string()}), 0);
    for (const char* f : {"capture.pcap", "flows.jsonl", "labels.csv", "run.json"}) EXPECT_TRUE(fs::exists(dir / "syn" / f)) << f;

    ASSERT_EQ(run_cli({"extract", "--in", (dir / "syn" / "capture.pcap").string(), "--labels", (dir / "syn" / "labels.csv").string(),
                       "--out", (dir / "ex").string()}),
              0);
    auto names = masked_schema(FeatureSetId::NetflowV9, FeatureMask::default_for(FeatureSetId::NetflowV9)).all_names();
    std::string header;
    for (const auto& n : names) header += (header.empty() ? "" : ",") + n;
    EXPECT_EQ(first_line(dir / "ex" / "features.csv"), header + ",label");
    EXPECT_EQ(header.find("duration"), std::string::npos);
    EXPECT_EQ(header.find("flag_cwr"), std::string::npos);
    EXPECT_EQ(line_count(dir / "ex" / "features.csv"), 41u);

    const auto manifest = nlohmann::json::parse(read_file_text((dir / "ex" / "run.json").string()));
    EXPECT_EQ(manifest["subcommand"], "extract");
    EXPECT_EQ(manifest["seed"], 1);  // default seed is recorded
    EXPECT_EQ(manifest["inputs"].size(), 2u);
    EXPECT_EQ(manifest["inputs"][0]["fnv1a64"].get<std::string>().size(), 16u);
}

TEST(Cli, TrainWithGrid) {
    const auto dir = testutil::scratch_dir("cli_train");
    const auto plan = small_plan(dir, 30);
    ASSERT_EQ(run_cli({"synth", "--plan", plan.string(), "--seed", "5", "--out", (dir / "syn").string()}), 0);
    ASSERT_EQ(run_cli({"train", "--in", (dir / "syn" / "flows.jsonl").string(), "--grid", "--k", "3", "--seed", "2", "--out",
                       (dir / "model").string()}),
              0);
    EXPECT_EQ(line_count(dir / "model" / "grid.csv"), 121u);
    const auto model = model_from_string(read_file_text((dir / "model" / "model.json").string()));
    EXPECT_EQ(model.prep.set, FeatureSetId::NetflowV9);
    EXPECT_EQ(model.seed, 2u);
}

TEST(Cli, ExitCodes) {
    const auto dir = testutil::scratch_dir("cli_codes");
    const auto plan = small_plan(dir, 5);
    EXPECT_EQ(run_cli({"synth", "--plan", plan.string(), "--out", (dir / "a").string()}), 2);  // no seed
    EXPECT_EQ(run_cli({"frobnicate", "--out", dir.string()}), 2);
    EXPECT_EQ(run_cli({"extract", "--in", plan.string(), "--features", "nfv7", "--out", (dir / "b").string()}), 2);
    EXPECT_EQ(run_cli({"evaluate", "--out", (dir / "c").string()}), 2);  // no data
    EXPECT_EQ(run_cli({"synth", "--seed", "-3", "--out", (dir / "d").string()}), 2);

    testutil::write_text(dir / "corrupt.pcap", std::string("\xd4\xc3\xb2\xa1garbage", 11));
    EXPECT_EQ(run_cli({"extract", "--in", (dir / "corrupt.pcap").string(), "--out", (dir / "e").string()}), 1);
    EXPECT_EQ(run_cli({"train", "--in", (dir / "corrupt.pcap").string(), "--seed", "1", "--out", (dir / "f").string()}), 1);
}

TEST(Cli, DetectIsReproducible) {
    const auto dir = testutil::scratch_dir("cli_detect");
    const auto plan = small_plan(dir, 30);
    ASSERT_EQ(run_cli({"synth", "--plan", plan.string(), "--seed", "6", "--out", (dir / "syn").string()}), 0);
    ASSERT_EQ(run_cli({"train", "--in", (dir / "syn" / "flows.jsonl").string(), "--trees", "10", "--seed", "2", "--out",
                       (dir / "model").string()}),
              0);
    nlohmann::json reg{{"groups", {{{"group_id", "jquery"}, {"members", {"p1"}}, {"representative_id", "p1"},
                                    {"domains", {"code.jquery.com"}}, {"subnets", nlohmann::json::array()}}}},
                       {"models", {{{"protocol", "HTTP"}, {"group", "jquery"}, {"benign", "specific"}, {"path", "model/model.json"}}}}};
    testutil::write_text(dir / "registry.json", reg.dump());
    for (const char* out : {"d1", "d2"}) {
        ASSERT_EQ(run_cli({"detect", "--registry", (dir / "registry.json").string(), "--in", (dir / "syn" / "capture.pcap").string(),
                           "--labels", (dir / "syn" / "labels.csv").string(), "--jobs", out[1] == '1' ? "1" : "3", "--out",
                           (dir / out).string()}),
                  0);
    }
    const auto v1 = read_file_text((dir / "d1" / "verdicts.jsonl").string());
    EXPECT_EQ(v1, read_file_text((dir / "d2" / "verdicts.jsonl").string()));
    EXPECT_EQ(line_count(dir / "d1" / "verdicts.jsonl"), 60u);
    EXPECT_NE(v1.find("\"path\":\"SpecificModel\""), std::string::npos);
    EXPECT_NE(read_file_text((dir / "d1" / "summary.csv").string()).find("f1,"), std::string::npos);
}

TEST(Cli, ClusterProfiles) {
    const auto dir = testutil::scratch_dir("cli_cluster");
    const auto corpus = oracle::profile_corpus(3, 30);
    fs::create_directories(dir / "profiles");
    std::string sidecar = "profile_id,mimicked_domain,instance_count\n";
    for (const auto& p : corpus) {
        testutil::write_text(dir / "profiles" / (p.profile_id + ".profile"), p.text);
        sidecar += p.profile_id + ',' + p.mimicked_domain + ',' + std::to_string(p.instance_count) + '\n';
    }
    testutil::write_text(dir / "sidecar.csv", sidecar);
    ASSERT_EQ(run_cli({"cluster-profiles", "--dir", (dir / "profiles").string(), "--sidecar", (dir / "sidecar.csv").string(), "--out",
                       (dir / "out").string()}),
              0);
    EXPECT_EQ(line_count(dir / "out" / "digests.csv"), 31u);
    const auto groups = nlohmann::json::parse(read_file_text((dir / "out" / "groups.json").string()));
    std::size_t members = 0;
    for (const auto& g : groups["groups"]) members += g["members"].size();
    EXPECT_EQ(members, 30u);
    EXPECT_EQ(first_line(dir / "out" / "ranking.csv").substr(0, 7), "domain,");
}
