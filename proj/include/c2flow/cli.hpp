#pragma once

// Command-line front end. Every subcommand writes its artifacts plus a
// run.json manifest under --out.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "c2flow/detector.hpp"
#include "c2flow/error.hpp"
#include "c2flow/features.hpp"
#include "c2flow/forest.hpp"
#include "c2flow/ingest.hpp"
#include "c2flow/log.hpp"
#include "c2flow/profile_catalog.hpp"
#include "c2flow/synth.hpp"

namespace c2flow::cli {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string fnv1a64_hex(const std::string& data) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

struct Options {
    // data
    std::vector<std::string> inputs, malicious, benign;
    std::string labels;
    bool keep_empty = false;
    // features
    std::string features = "nfv9";
    std::string mask = "default";
    std::string categorical = "onehot";
    // model
    int trees = 100;
    std::string criterion = "gini";
    int depth = 10;
    int min_split = 2;
    bool grid = false;
    bool nested = false;
    std::size_t k = 10;
    std::optional<std::uint64_t> seed;
    unsigned jobs = 1;
    std::string out;
    std::string model;
    // learning curve
    std::size_t points = 20;
    std::size_t start = 50;
    // detect
    std::string registry;
    std::string agg = "or";
    // catalog
    std::string profile_dir, sidecar;
    int epsilon = 30;
    std::size_t min_pts = 2;
    // synth
    std::string plan;
    std::size_t beacons = 200, benign_flows = 200;
};

struct Context {
    std::string subcommand;
    Options opt;
    nlohmann::ordered_json manifest;
    std::vector<std::string> argv;

    [[nodiscard]] std::filesystem::path out_dir() const { return opt.out; }

    void record_input(const std::string& path) {
        manifest["inputs"].push_back({{"path", path}, {"fnv1a64", fnv1a64_hex(read_file_text(path))}});
    }

    void record_output(const std::string& name, const std::string& text) {
        write_text(out_dir() / name, text);
        manifest["outputs"].push_back(name);
    }
};

inline HyperParams hyperparams(const Options& o) {
    HyperParams hp;
    hp.n_trees = o.trees;
    hp.criterion = criterion_from_string(o.criterion);
    hp.max_depth = o.depth;
    hp.min_samples_split = o.min_split;
    if (hp.n_trees < 1 || hp.max_depth < 1 || hp.min_samples_split < 2) throw UsageError("invalid hyperparameters");
    return hp;
}

inline std::vector<FlowRecord> load_labelled_flows(Context& ctx, bool require_labels) {
    const auto& o = ctx.opt;
    std::vector<FlowRecord> flows;
    auto add = [&](const std::string& path, std::optional<Label> forced) {
        ctx.record_input(path);
        CaptureStats stats;
        auto part = load_flows(path, {}, &stats);
        if (stats.truncated || stats.skipped) {
            log().info("{}: {} records, {} skipped, {} truncated", path, stats.records, stats.skipped, stats.truncated);
        }
        for (auto& f : part) {
            if (forced) f.label = forced;
        }
        std::move(part.begin(), part.end(), std::back_inserter(flows));
    };
    for (const auto& p : o.inputs) add(p, std::nullopt);
    for (const auto& p : o.malicious) add(p, Label::Malicious);
    for (const auto& p : o.benign) add(p, Label::Benign);
    if (!o.labels.empty()) {
        ctx.record_input(o.labels);
        const auto matched = apply_labels(flows, labels_from_csv(read_file_text(o.labels)));
        log().info("labels matched {} of {} flows", matched, flows.size());
    }
    FilterStats fs;
    flows = filter_flows(std::move(flows), FilterOptions{1500, !o.keep_empty}, &fs);
    ctx.manifest["filter"] = {{"dropped_mtu", fs.dropped_mtu}, {"dropped_empty", fs.dropped_empty}, {"kept", flows.size()}};
    if (require_labels) {
        std::size_t unlabelled = 0;
        for (const auto& f : flows) unlabelled += f.label ? 0 : 1;
        if (unlabelled) {
            log().warn("{} flows have no label and are ignored", unlabelled);
            std::erase_if(flows, [](const FlowRecord& f) { return !f.label; });
        }
        if (flows.empty()) throw std::runtime_error("no labelled flows in the input");
    }
    return flows;
}

inline Dataset load_dataset(Context& ctx) {
    const auto flows = load_labelled_flows(ctx, true);
    const auto set = feature_set_from_string(ctx.opt.features);
    const auto mask = FeatureMask::parse(ctx.opt.mask, set);
    auto ds = build_dataset(flows, set, mask);
    if (ds.counters.zero_denominator) log().info("{} zero-denominator ratios set to 0", ds.counters.zero_denominator);
    ctx.manifest["dataset"] = {{"rows", ds.size()},
                               {"malicious", std::count(ds.labels.begin(), ds.labels.end(), 1)},
                               {"columns", ds.schema.all_names()}};
    return ds;
}

inline TrainOptions train_options(const Options& o) {
    TrainOptions t;
    t.strategy = categorical_strategy_from_string(o.categorical);
    t.jobs = o.jobs;
    return t;
}

inline std::uint64_t seed_or_default(const Options& o) { return o.seed.value_or(1); }

inline nlohmann::ordered_json report_json(const CvReport& r) {
    nlohmann::ordered_json j;
    j["mean_f1"] = r.mean_f1;
    j["ci95_f1"] = r.ci_f1;
    j["mean_precision"] = r.mean_precision;
    j["ci95_precision"] = r.ci_precision;
    j["mean_recall"] = r.mean_recall;
    j["ci95_recall"] = r.ci_recall;
    j["f1"] = format_metric(r.mean_f1, r.ci_f1);
    j["precision"] = format_metric(r.mean_precision, r.ci_precision);
    j["recall"] = format_metric(r.mean_recall, r.ci_recall);
    j["pooled"] = {{"tp", r.pooled.tp}, {"fp", r.pooled.fp}, {"tn", r.pooled.tn}, {"fn", r.pooled.fn}};
    return j;
}

inline std::string folds_csv(const CvReport& r) {
    std::string out = "fold,tp,fp,tn,fn,precision,recall,f1\n";
    for (std::size_t i = 0; i < r.folds.size(); ++i) {
        const auto& m = r.folds[i];
        out += std::to_string(i) + ',' + std::to_string(m.tp) + ',' + std::to_string(m.fp) + ',' + std::to_string(m.tn) + ',' +
               std::to_string(m.fn) + ',' + format_number(m.precision) + ',' + format_number(m.recall) + ',' +
               format_number(m.f1) + '\n';
    }
    return out;
}

// ------------------------------------------------------------ Subcommands

inline void cmd_extract(Context& ctx) {
    const auto flows = load_labelled_flows(ctx, false);
    const auto set = feature_set_from_string(ctx.opt.features);
    const auto mask = FeatureMask::parse(ctx.opt.mask, set);
    const auto schema = masked_schema(set, mask);
    std::vector<FeatureVector> rows;
    std::vector<std::optional<int>> labels;
    FeatureCounters counters;
    for (const auto& f : flows) {
        rows.push_back(compute_features(f, set, mask, &counters));
        labels.push_back(f.label ? std::optional<int>(*f.label == Label::Malicious ? 1 : 0) : std::nullopt);
    }
    const bool any_label = std::any_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
    std::string csv;
    {
        auto names = schema.all_names();
        for (std::size_t i = 0; i < names.size(); ++i) csv += (i ? "," : "") + names[i];
        if (any_label) csv += ",label";
        csv += '\n';
        for (std::size_t r = 0; r < rows.size(); ++r) {
            bool first = true;
            for (const auto& [n, v] : rows[r].numeric) {
                csv += (first ? "" : ",") + format_number(v);
                first = false;
            }
            for (const auto& [n, t] : rows[r].categorical) {
                csv += (first ? "" : ",") + t;
                first = false;
            }
            if (any_label) csv += "," + (labels[r] ? std::to_string(*labels[r]) : std::string());
            csv += '\n';
        }
    }
    ctx.record_output("features.csv", csv);
    ctx.record_output("flows.jsonl", flows_to_jsonl(flows));
    ctx.manifest["zero_denominator"] = counters.zero_denominator;
}

inline void cmd_train(Context& ctx) {
    const auto& o = ctx.opt;
    const auto ds = load_dataset(ctx);
    const auto seed = *o.seed;
    auto hp = hyperparams(o);
    if (o.grid) {
        const auto g = grid_search(ds, ParamGrid::standard(), o.k, seed, train_options(o));
        ctx.record_output("grid.csv", grid_to_csv(g));
        hp = g.best;
    }
    ctx.manifest["hyperparams"] = nlohmann::json(hp);
    const auto model = train_model(ds, hp, seed, train_options(o));
    ctx.record_output("model.json", model_to_string(model));
}

inline void cmd_grid_search(Context& ctx) {
    const auto& o = ctx.opt;
    const auto ds = load_dataset(ctx);
    const auto seed = seed_or_default(o);
    const auto g = grid_search(ds, ParamGrid::standard(), o.k, seed, train_options(o));
    ctx.record_output("grid.csv", grid_to_csv(g));
    nlohmann::ordered_json best;
    best["hyperparams"] = nlohmann::json(g.best);
    best["report"] = report_json(g.cells[g.best_index].report);
    if (o.nested) {
        const auto n = nested_cross_validate(ds, ParamGrid::standard(), o.k, seed, train_options(o));
        best["nested"] = report_json(n.outer);
        best["nested_choices"] = nlohmann::json(n.chosen);
    } else {
        log().warn("grid-search score is selected on the same folds it reports; use --nested for an unbiased estimate");
    }
    ctx.record_output("best.json", best.dump(2) + "\n");
}

inline void cmd_evaluate(Context& ctx) {
    const auto& o = ctx.opt;
    const auto ds = load_dataset(ctx);
    if (!o.model.empty()) {
        ctx.record_input(o.model);
        const auto model = model_from_string(read_file_text(o.model));
        if (model.prep.set != ds.set) throw UsageError("model was trained on " + to_string(model.prep.set));
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const auto m = evaluate_model(model, ds, all);
        nlohmann::ordered_json j = {{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn},
                                    {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
        ctx.record_output("metrics.json", j.dump(2) + "\n");
        return;
    }
    const auto seed = seed_or_default(o);
    CvReport rep;
    nlohmann::ordered_json j;
    if (o.nested) {
        auto n = nested_cross_validate(ds, o.grid ? ParamGrid::standard() : ParamGrid::single(hyperparams(o)), o.k, seed,
                                       train_options(o));
        rep = n.outer;
        j["nested_choices"] = nlohmann::json(n.chosen);
    } else {
        rep = cross_validate(ds, hyperparams(o), o.k, seed, train_options(o));
    }
    j["report"] = report_json(rep);
    ctx.record_output("metrics.json", j.dump(2) + "\n");
    ctx.record_output("folds.csv", folds_csv(rep));
}

inline void cmd_learning_curve(Context& ctx) {
    const auto& o = ctx.opt;
    const auto ds = load_dataset(ctx);
    const auto lc = learning_curve(ds, hyperparams(o), o.k, seed_or_default(o), train_options(o), o.points, o.start);
    ctx.manifest["clamped"] = lc.clamped;
    ctx.record_output("learning_curve.csv", learning_curve_to_csv(lc));
}

inline void cmd_importance(Context& ctx) {
    const auto& o = ctx.opt;
    ForestModel model;
    if (!o.model.empty()) {
        ctx.record_input(o.model);
        model = model_from_string(read_file_text(o.model));
    } else {
        const auto ds = load_dataset(ctx);
        model = train_model(ds, hyperparams(o), seed_or_default(o), train_options(o));
    }
    ctx.record_output("mdi.csv", mdi_to_csv(mdi(model)));
}

inline void cmd_detect(Context& ctx) {
    const auto& o = ctx.opt;
    ctx.record_input(o.registry);
    const auto reg = load_registry(o.registry);
    AssembleOptions assemble;
    assemble.ports = reg.ports;
    std::vector<FlowRecord> flows;
    for (const auto& p : o.inputs) {
        ctx.record_input(p);
        auto part = load_flows(p, assemble);
        std::move(part.begin(), part.end(), std::back_inserter(flows));
    }
    if (!o.labels.empty()) {
        ctx.record_input(o.labels);
        apply_labels(flows, labels_from_csv(read_file_text(o.labels)));
    }
    flows = filter_flows(std::move(flows), FilterOptions{1500, !o.keep_empty});
    const auto rep = run_batch(flows, reg, aggregation_from_string(o.agg), o.jobs);
    ctx.record_output("verdicts.jsonl", report_to_jsonl(rep));
    ctx.record_output("summary.csv", report_summary_csv(rep));
    if (rep.unclassifiable) log().warn("{} flows could not be classified", rep.unclassifiable);
}

inline void cmd_cluster_profiles(Context& ctx) {
    const auto& o = ctx.opt;
    ctx.record_input(o.sidecar);
    const auto corpus = load_profile_corpus(o.profile_dir, o.sidecar);
    for (const auto& p : corpus) {
        ctx.manifest["profiles"].push_back({{"id", p.profile_id}, {"fnv1a64", fnv1a64_hex(p.text)}});
    }
    const auto batch = digest_profiles(corpus, o.jobs);
    ClusterParams params{o.epsilon, o.min_pts};
    const auto clusters = dbscan(batch.digests, params, o.jobs);
    std::string digests = "profile_id,mimicked_domain,instance_count,tlsh,cluster\n";
    for (std::size_t i = 0; i < batch.digests.size(); ++i) {
        const auto& d = batch.digests[i];
        digests += d.profile_id + ',' + d.mimicked_domain + ',' + std::to_string(d.instance_count) + ',' + d.digest.to_string() +
                   ',' + std::to_string(clusters.labels[i]) + '\n';
    }
    ctx.manifest["unhashable"] = batch.unhashable;
    ctx.record_output("digests.csv", digests);
    ctx.record_output("groups.json", groups_to_json(build_groups(batch.digests, clusters)));
    ctx.record_output("ranking.csv", ranks_to_csv(rank_groups(batch.digests, clusters)));
}

inline void cmd_synth(Context& ctx) {
    const auto& o = ctx.opt;
    SynthPlan plan;
    if (!o.plan.empty()) {
        ctx.record_input(o.plan);
        try {
            plan = plan_from_json(nlohmann::json::parse(read_file_text(o.plan)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("synth plan: ") + e.what());
        }
    } else {
        for (const auto& s : default_c2_specs()) plan.c2.emplace_back(s, o.beacons);
        for (const auto& s : default_benign_specs()) plan.benign.emplace_back(s, o.benign_flows);
    }
    const auto flows = generate_plan(plan, *o.seed, o.jobs);
    ctx.manifest["plan"] = plan_to_json(plan);
    const auto pcap = emit_capture(flows);
    ctx.record_output("capture.pcap", std::string(pcap.begin(), pcap.end()));
    ctx.record_output("flows.jsonl", flows_to_jsonl(flows));
    ctx.record_output("labels.csv", labels_to_csv(flows));
}

// ------------------------------------------------------------------ Entry

inline int run(int argc, const char* const* argv) {
    CLI::App app{"c2flow: flow-based detection of malleable C2 traffic"};
    app.require_subcommand(1);
    Options o;
    std::string seed_text;

    auto data_opts = [&](CLI::App* s) {
        s->add_option("--in", o.inputs, "Capture (pcap) or flow dump (JSON lines)")->check(CLI::ExistingFile);
        s->add_option("--malicious", o.malicious, "Input whose flows are all malicious")->check(CLI::ExistingFile);
        s->add_option("--benign", o.benign, "Input whose flows are all benign")->check(CLI::ExistingFile);
        s->add_option("--labels", o.labels, "Label sidecar CSV")->check(CLI::ExistingFile);
        s->add_flag("--keep-empty", o.keep_empty, "Keep flows without transport payload");
        s->add_option("--features", o.features, "nfv5|nfv5ext|nfv9|nfv9ext|ramos")->capture_default_str();
        s->add_option("--mask", o.mask, "default|none|comma-separated features")->capture_default_str();
        s->add_option("--categorical", o.categorical, "onehot|rank")->capture_default_str();
    };
    auto model_opts = [&](CLI::App* s) {
        s->add_option("--trees", o.trees)->capture_default_str();
        s->add_option("--criterion", o.criterion, "gini|entropy")->capture_default_str();
        s->add_option("--depth", o.depth)->capture_default_str();
        s->add_option("--min-split", o.min_split)->capture_default_str();
        s->add_option("--k", o.k, "Cross-validation folds")->capture_default_str();
    };
    auto common = [&](CLI::App* s) {
        s->add_option("--out", o.out, "Output directory")->required();
        s->add_option("--seed", seed_text, "Random seed");
        s->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
    };

    auto* extract = app.add_subcommand("extract", "Compute feature vectors from captures");
    data_opts(extract);
    common(extract);

    auto* train = app.add_subcommand("train", "Train a Random Forest model");
    data_opts(train);
    model_opts(train);
    common(train);
    train->add_flag("--grid", o.grid, "Pick hyperparameters by grid search first");

    auto* grid = app.add_subcommand("grid-search", "Evaluate the full hyperparameter grid");
    data_opts(grid);
    model_opts(grid);
    common(grid);
    grid->add_flag("--nested", o.nested, "Also report nested cross-validation");

    auto* evaluate = app.add_subcommand("evaluate", "Cross-validate, or score a trained model");
    data_opts(evaluate);
    model_opts(evaluate);
    common(evaluate);
    evaluate->add_option("--model", o.model, "Trained model to score on the input")->check(CLI::ExistingFile);
    evaluate->add_flag("--nested", o.nested, "Grid search inside each outer fold");
    evaluate->add_flag("--grid", o.grid, "With --nested: search the full grid");

    auto* curve = app.add_subcommand("learning-curve", "F1 against training-set size");
    data_opts(curve);
    model_opts(curve);
    common(curve);
    curve->add_option("--points", o.points)->capture_default_str();
    curve->add_option("--start", o.start)->capture_default_str();

    auto* importance = app.add_subcommand("importance", "Mean decrease in impurity per feature");
    data_opts(importance);
    model_opts(importance);
    common(importance);
    importance->add_option("--model", o.model, "Trained model")->check(CLI::ExistingFile);

    auto* detect = app.add_subcommand("detect", "Classify flows through the model registry");
    detect->add_option("--registry", o.registry, "Registry JSON")->required()->check(CLI::ExistingFile);
    detect->add_option("--in", o.inputs, "Capture or flow dump")->required()->check(CLI::ExistingFile);
    detect->add_option("--labels", o.labels, "Label sidecar CSV for confusion counts")->check(CLI::ExistingFile);
    detect->add_option("--agg", o.agg, "or|majority")->check(CLI::IsMember({"or", "majority"}))->capture_default_str();
    detect->add_flag("--keep-empty", o.keep_empty, "Keep flows without transport payload");
    common(detect);

    auto* cluster = app.add_subcommand("cluster-profiles", "Group profiles by TLSH similarity");
    cluster->add_option("--dir", o.profile_dir, "Directory of profile texts")->required()->check(CLI::ExistingDirectory);
    cluster->add_option("--sidecar", o.sidecar, "CSV: profile_id,mimicked_domain,instance_count")->required()->check(CLI::ExistingFile);
    cluster->add_option("--epsilon", o.epsilon)->capture_default_str();
    cluster->add_option("--min-pts", o.min_pts)->capture_default_str();
    common(cluster);

    auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic capture");
    synth->add_option("--plan", o.plan, "Plan JSON with c2 and benign specs")->check(CLI::ExistingFile);
    synth->add_option("--beacons", o.beacons, "Beacons per default C2 spec")->capture_default_str();
    synth->add_option("--benign-flows", o.benign_flows, "Flows per default benign spec")->capture_default_str();
    common(synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    Context ctx;
    ctx.subcommand = app.get_subcommands().front()->get_name();
    try {
        if (!seed_text.empty()) {
            try {
                std::size_t used = 0;
                if (seed_text.front() == '-' || seed_text.front() == '+') throw std::invalid_argument("sign");
                o.seed = std::stoull(seed_text, &used);
                if (used != seed_text.size()) throw std::invalid_argument("trailing characters");
            } catch (const std::logic_error&) {
                throw UsageError("--seed must be a non-negative integer");
            }
        }
        if ((ctx.subcommand == "train" || ctx.subcommand == "synth") && !o.seed) {
            throw UsageError(ctx.subcommand + " requires an explicit --seed");
        }
        if (!o.seed) o.seed = 1;
        const bool needs_data = ctx.subcommand != "detect" && ctx.subcommand != "cluster-profiles" &&
                                ctx.subcommand != "synth" && o.model.empty();
        if (needs_data && o.inputs.empty() && o.malicious.empty() && o.benign.empty()) {
            throw UsageError(ctx.subcommand + " needs --in, --malicious or --benign");
        }
        if (o.k < 2) throw UsageError("--k must be at least 2");
        if (o.jobs == 0) o.jobs = 1;
        // flag values are validated before anything is read
        feature_set_from_string(o.features);
        categorical_strategy_from_string(o.categorical);
        criterion_from_string(o.criterion);
        FeatureMask::parse(o.mask, feature_set_from_string(o.features));
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    ctx.opt = o;
    ctx.argv.assign(argv + 1, argv + argc);
    ctx.manifest["tool"] = "c2flow";
    ctx.manifest["subcommand"] = ctx.subcommand;
    ctx.manifest["argv"] = ctx.argv;
    ctx.manifest["seed"] = o.seed ? nlohmann::json(*o.seed) : nlohmann::json(nullptr);
    ctx.manifest["inputs"] = nlohmann::json::array();
    ctx.manifest["outputs"] = nlohmann::json::array();
    try {
        std::filesystem::create_directories(o.out);
        if (ctx.subcommand == "extract") {
            cmd_extract(ctx);
        } else if (ctx.subcommand == "train") {
            cmd_train(ctx);
        } else if (ctx.subcommand == "grid-search") {
            cmd_grid_search(ctx);
        } else if (ctx.subcommand == "evaluate") {
            cmd_evaluate(ctx);
        } else if (ctx.subcommand == "learning-curve") {
            cmd_learning_curve(ctx);
        } else if (ctx.subcommand == "importance") {
            cmd_importance(ctx);
        } else if (ctx.subcommand == "detect") {
            cmd_detect(ctx);
        } else if (ctx.subcommand == "cluster-profiles") {
            cmd_cluster_profiles(ctx);
        } else if (ctx.subcommand == "synth") {
            cmd_synth(ctx);
        }
        write_text(ctx.out_dir() / "run.json", ctx.manifest.dump(2) + "\n");
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace c2flow::cli
