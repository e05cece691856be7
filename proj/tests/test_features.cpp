#include <gtest/gtest.h>

#include "c2flow/features.hpp"
#include "golden.hpp"
#include "helpers.hpp"

using namespace c2flow;

TEST(Features, GoldenFlowsAllSets) {
    std::size_t checked = 0;
    auto bad = golden::compare_all(checked);
    for (const auto& m : bad) {
        ADD_FAILURE() << "flow " << m.flow << " " << m.set << "." << m.feature << ": got " << m.got << " want "
                      << m.want;
    }
    EXPECT_GT(checked, 400u);
}

TEST(Features, SchemaWidths) {
    EXPECT_EQ(full_schema(FeatureSetId::NetflowV5).all_names().size(), 11u);
    EXPECT_EQ(full_schema(FeatureSetId::NetflowV5Ext).all_names().size(), 12u);
    EXPECT_EQ(full_schema(FeatureSetId::NetflowV9).all_names().size(), 15u);
    EXPECT_EQ(full_schema(FeatureSetId::NetflowV9Ext).all_names().size(), 22u);
    EXPECT_EQ(full_schema(FeatureSetId::RamosBaseline).all_names().size(), 5u);
}

TEST(Features, DefaultMaskIntersectsSchema) {
    auto m = FeatureMask::default_for(FeatureSetId::NetflowV9);
    EXPECT_EQ(m.exclude, (std::set<std::string>{"duration", "flag_cwr", "flag_ece"}));
    auto s = masked_schema(FeatureSetId::NetflowV9, m);
    EXPECT_EQ(s.numeric.size(), 12u);
    EXPECT_TRUE(FeatureMask::default_for(FeatureSetId::RamosBaseline).exclude.empty());
    EXPECT_THROW(masked_schema(FeatureSetId::RamosBaseline, FeatureMask::parse("duration", FeatureSetId::RamosBaseline)),
                 ContractError);
    auto custom = FeatureMask::parse("flag_urg,duration", FeatureSetId::NetflowV5);
    EXPECT_EQ(masked_schema(FeatureSetId::NetflowV5, custom).numeric.size(), 9u);
}

TEST(Features, ZeroDenominatorsCounted) {
    auto flows = golden::flows();
    FeatureCounters counters;
    // flow 3 has no client packets: mean_src, ratio_bytes, ratio_pkts
    auto fv = compute_features(flows[3], FeatureSetId::NetflowV9Ext, FeatureMask::none(), &counters);
    EXPECT_EQ(counters.zero_denominator, 3u);
    EXPECT_EQ(fv.value("ratio_pkts"), 0.0);
    EXPECT_EQ(fv.value("min_pkt_size_src"), 0.0);
}

TEST(Features, EmptyFlowRejected) {
    FlowRecord f;
    EXPECT_THROW(compute_features(f, FeatureSetId::NetflowV5, {}), ContractError);
}

TEST(Features, OneHotSortedVocabularyUnseenIsZero) {
    auto flows = golden::flows();
    std::vector<FeatureVector> rows;
    for (const auto& f : flows) rows.push_back(compute_features(f, FeatureSetId::RamosBaseline, {}));
    std::vector<FeatureVector> train(rows.begin(), rows.begin() + 5);
    auto enc = encode_categoricals(train, CategoricalStrategy::OneHot);
    const auto& proto_vocab = enc.encoder.vocab[1];
    EXPECT_EQ(proto_vocab, (std::vector<std::string>{"tcp", "udp"}));
    EXPECT_TRUE(std::is_sorted(enc.encoder.vocab[0].begin(), enc.encoder.vocab[0].end()));
    // flow 5 has an unseen history (its block is all zero) and a seen service
    std::vector<double> out(enc.encoder.width());
    enc.encoder.transform_into(rows[5], out);
    double hist_sum = 0, svc_sum = 0;
    const auto h = enc.encoder.vocab[0].size(), p = enc.encoder.vocab[1].size();
    for (std::size_t i = 0; i < h; ++i) hist_sum += out[i];
    for (std::size_t i = h + p; i < out.size(); ++i) svc_sum += out[i];
    EXPECT_EQ(hist_sum, 0.0);
    EXPECT_EQ(svc_sum, 1.0);
}

TEST(Features, FrequencyRankUnseenGetsMaxPlusOne) {
    auto flows = golden::flows();
    std::vector<FeatureVector> rows;
    for (const auto& f : flows) rows.push_back(compute_features(f, FeatureSetId::RamosBaseline, {}));
    CategoricalEncoder enc;
    enc.strategy = CategoricalStrategy::FrequencyRank;
    enc.fit(std::span(rows).first(5));
    // protocols in flows 0..4: tcp x3, udp x2
    EXPECT_EQ(enc.vocab[1], (std::vector<std::string>{"tcp", "udp"}));
    std::vector<double> out(3);
    enc.transform_into(rows[5], out);
    EXPECT_EQ(out[1], 1.0);
    EXPECT_EQ(out[0], static_cast<double>(enc.vocab[0].size() + 1));  // history "ShADd" unseen
}

TEST(Features, ScalerUsesPopulationStd) {
    Matrix m(4, 2);
    const double a[] = {1, 2, 3, 4};
    for (int r = 0; r < 4; ++r) {
        m(r, 0) = a[r];
        m(r, 1) = 7;
    }
    auto s = fit_scaler(m);
    EXPECT_DOUBLE_EQ(s.mean[0], 2.5);
    EXPECT_DOUBLE_EQ(s.stddev[0], std::sqrt(1.25));
    EXPECT_EQ(s.stddev[1], 0.0);
    auto t = apply_scaler(s, m);
    EXPECT_EQ(t(0, 1), 0.0);
    EXPECT_NEAR(t(3, 0), 1.5 / std::sqrt(1.25), 1e-12);
}

TEST(Features, PreprocessorJsonRoundTripAndSchemaGuard) {
    auto flows = golden::flows();
    std::vector<FeatureVector> rows;
    for (const auto& f : flows) rows.push_back(compute_features(f, FeatureSetId::RamosBaseline, {}));
    Preprocessor p;
    p.set = FeatureSetId::RamosBaseline;
    p.schema = full_schema(p.set);
    p.fit(rows, CategoricalStrategy::OneHot);
    nlohmann::json j = p;
    auto q = j.get<Preprocessor>();
    auto a = p.transform(rows), b = q.transform(rows);
    EXPECT_EQ(a.data, b.data);
    auto other = compute_features(flows[0], FeatureSetId::NetflowV5, {});
    std::vector<double> out(p.columns.size());
    EXPECT_THROW(p.transform_into(other, out), ContractError);
}

TEST(Features, CsvHeaderAndLabels) {
    auto flows = golden::flows();
    std::vector<FeatureVector> rows = {compute_features(flows[1], FeatureSetId::NetflowV5, FeatureMask::none())};
    std::vector<std::optional<Label>> labels = {Label::Malicious};
    auto csv = features_to_csv(full_schema(FeatureSetId::NetflowV5), rows, labels);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "pkt_count_bi,bytes_total_bi,duration,flag_fin,flag_syn,flag_rst,flag_psh,flag_ack,flag_urg,flag_ece,"
              "flag_cwr,label");
    EXPECT_EQ(csv.back(), '\n');
    EXPECT_NE(csv.find(",1\n"), std::string::npos);
}

TEST(Features, DatasetRequiresLabels) {
    auto flows = golden::flows();
    EXPECT_THROW(build_dataset(flows, FeatureSetId::NetflowV9, {}), ContractError);
    for (auto& f : flows) f.label = Label::Benign;
    auto ds = build_dataset(flows, FeatureSetId::NetflowV9, FeatureMask::default_for(FeatureSetId::NetflowV9));
    EXPECT_EQ(ds.size(), 10u);
    EXPECT_EQ(ds.rows[0].numeric.size(), 12u);
}
