#pragma once

// Dispatch engine: protocol from ports, domain hint -> profile group, then
// either the group's own model or a fanout over every generic-benign model.

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2flow/app_metadata.hpp"
#include "c2flow/error.hpp"
#include "c2flow/flow.hpp"
#include "c2flow/forest.hpp"
#include "c2flow/ingest.hpp"
#include "c2flow/parallel.hpp"
#include "c2flow/profile_catalog.hpp"

namespace c2flow {

enum class BenignKind { Specific, Generic };

inline std::string to_string(BenignKind b) { return b == BenignKind::Specific ? "specific" : "generic"; }

inline BenignKind benign_kind_from_string(const std::string& s) {
    if (s == "specific") return BenignKind::Specific;
    if (s == "generic") return BenignKind::Generic;
    throw ParseError("unknown benign kind: " + s);
}

enum class Aggregation { Or, Majority };

inline Aggregation aggregation_from_string(const std::string& s) {
    if (s == "or") return Aggregation::Or;
    if (s == "majority") return Aggregation::Majority;
    throw ParseError("unknown aggregation: " + s);
}

struct ModelEntry {
    AppProtocol protocol = AppProtocol::HTTP;
    std::string group;
    BenignKind benign = BenignKind::Specific;
    std::string path;  // as written in the registry file
    std::shared_ptr<const ForestModel> model;

    [[nodiscard]] std::string name() const {
        return to_string(protocol) + "/" + group + "/" + to_string(benign);
    }
};

class UnclassifiableFlow : public std::runtime_error {
public:
    UnclassifiableFlow(const FlowKey& key, const std::string& why)
        : std::runtime_error("unclassifiable flow " + key.to_string() + ": " + why), key_(key) {}
    [[nodiscard]] const FlowKey& key() const { return key_; }

private:
    FlowKey key_;
};

struct ModelRegistry {
    std::vector<ProfileGroup> groups;
    PortMap ports;
    std::vector<std::pair<std::pair<Transport, std::uint16_t>, AppProtocol>> port_overrides;
    std::vector<ModelEntry> models;

    [[nodiscard]] std::vector<SubnetRule> subnet_rules() const {
        std::vector<SubnetRule> rules;
        for (const auto& g : groups) rules.insert(rules.end(), g.subnets.begin(), g.subnets.end());
        return rules;
    }

    [[nodiscard]] const ModelEntry* specific(AppProtocol p, const std::string& group) const {
        for (const auto& m : models) {
            if (m.protocol == p && m.group == group && m.benign == BenignKind::Specific) return &m;
        }
        return nullptr;
    }

    [[nodiscard]] std::vector<const ModelEntry*> generic(AppProtocol p) const {
        std::vector<const ModelEntry*> out;
        for (const auto& m : models) {
            if (m.protocol == p && m.benign == BenignKind::Generic) out.push_back(&m);
        }
        return out;
    }

    void add_port_override(Transport t, std::uint16_t port, AppProtocol p) {
        ports.set(t, port, p);
        port_overrides.push_back({{t, port}, p});
    }
};

inline nlohmann::json registry_to_json(const ModelRegistry& r) {
    nlohmann::json ports = nlohmann::json::array();
    for (const auto& [tp, proto] : r.port_overrides) {
        ports.push_back({{"transport", std::string(to_string(tp.first))}, {"port", tp.second}, {"protocol", to_string(proto)}});
    }
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : r.models) {
        models.push_back({{"protocol", to_string(m.protocol)}, {"group", m.group}, {"benign", to_string(m.benign)}, {"path", m.path}});
    }
    return {{"groups", r.groups}, {"port_map", ports}, {"models", models}};
}

// Parses the registry; model paths are resolved against `base_dir` and each
// model file is loaded and checked.
inline ModelRegistry registry_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    ModelRegistry r;
    try {
        r.groups = j.value("groups", std::vector<ProfileGroup>{});
        std::set<std::string> ids;
        for (const auto& g : r.groups) {
            if (!ids.insert(g.group_id).second) throw ParseError("duplicate group id " + g.group_id);
        }
        const auto rules = r.subnet_rules();
        validate_subnet_rules(rules);
        for (const auto& p : j.value("port_map", nlohmann::json::array())) {
            r.add_port_override(transport_from_string(p.at("transport").get<std::string>()), p.at("port").get<std::uint16_t>(),
                                app_protocol_from_string(p.at("protocol").get<std::string>()));
        }
        for (const auto& m : j.value("models", nlohmann::json::array())) {
            ModelEntry e;
            e.protocol = app_protocol_from_string(m.at("protocol").get<std::string>());
            if (e.protocol == AppProtocol::Other) throw ParseError("models cannot target protocol Other");
            e.group = m.at("group").get<std::string>();
            e.benign = benign_kind_from_string(m.value("benign", std::string("specific")));
            e.path = m.at("path").get<std::string>();
            if (e.benign == BenignKind::Specific && r.specific(e.protocol, e.group)) {
                throw ParseError("duplicate specific model for " + e.name());
            }
            const auto full = std::filesystem::path(e.path).is_absolute() ? std::filesystem::path(e.path) : base_dir / e.path;
            if (!std::filesystem::exists(full)) throw ParseError("model file not found: " + full.string());
            e.model = std::make_shared<const ForestModel>(model_from_string(read_file_text(full.string())));
            r.models.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("registry: ") + e.what());
    } catch (const ContractError& e) {
        throw ParseError(std::string("registry: ") + e.what());
    }
    return r;
}

inline ModelRegistry load_registry(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_text(path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("registry " + path.string() + ": " + e.what());
    }
    return registry_from_json(j, path.parent_path());
}

inline AppProtocol infer_protocol(const FlowRecord& flow, const ModelRegistry& reg) { return reg.ports.infer(flow.key); }

inline std::optional<std::string> resolve_group(const FlowRecord& flow, const ModelRegistry& reg) {
    if (auto domain = primary_domain(flow.hints)) {
        // longest matching suffix wins
        const ProfileGroup* best = nullptr;
        std::size_t best_len = 0;
        for (const auto& g : reg.groups) {
            for (const auto& d : g.domains) {
                if (domain_matches(*domain, d) && (!best || d.size() > best_len)) {
                    best = &g;
                    best_len = d.size();
                }
            }
        }
        if (best) return best->group_id;
        return std::nullopt;
    }
    return match_subnet(flow.key.server_ip, reg.subnet_rules());
}

struct ModelScore {
    std::string model;
    double score = 0;
    int label = 0;
};

struct Verdict {
    FlowKey key;
    double first_ts = 0;
    AppProtocol protocol = AppProtocol::Other;
    Label label = Label::Benign;
    double score = 0;
    bool specific = false;  // SpecificModel path, otherwise GenericFanout
    std::optional<std::string> group;
    std::optional<std::string> domain_hint;
    bool hint_conflict = false;  // HTTP Host and SNI disagree; Host was used
    std::vector<ModelScore> scores;
};

inline Verdict classify_flow(const FlowRecord& flow, const ModelRegistry& reg, Aggregation agg = Aggregation::Or) {
    Verdict v;
    v.key = flow.key;
    v.first_ts = flow.first_ts;
    v.protocol = infer_protocol(flow, reg);
    v.domain_hint = primary_domain(flow.hints);
    v.hint_conflict = hint_conflict(flow.hints);
    if (v.protocol == AppProtocol::Other) throw UnclassifiableFlow(flow.key, "protocol Other");

    v.group = resolve_group(flow, reg);
    const ModelEntry* specific = v.group ? reg.specific(v.protocol, *v.group) : nullptr;
    if (specific) {
        const auto p = specific->model->predict(flow);
        v.specific = true;
        v.scores.push_back({specific->name(), p.score, p.label});
        v.score = p.score;
        v.label = p.label ? Label::Malicious : Label::Benign;
        return v;
    }
    const auto fanout = reg.generic(v.protocol);
    if (fanout.empty()) throw UnclassifiableFlow(flow.key, "no model for protocol " + to_string(v.protocol));
    std::size_t votes = 0;
    double max_score = 0, sum = 0;
    for (const auto* m : fanout) {
        const auto p = m->model->predict(flow);
        v.scores.push_back({m->name(), p.score, p.label});
        votes += static_cast<std::size_t>(p.label);
        max_score = std::max(max_score, p.score);
        sum += p.score;
    }
    if (agg == Aggregation::Or) {
        v.label = votes > 0 ? Label::Malicious : Label::Benign;
        v.score = max_score;
    } else {
        v.label = 2 * votes >= fanout.size() ? Label::Malicious : Label::Benign;
        v.score = sum / static_cast<double>(fanout.size());
    }
    return v;
}

// ---------------------------------------------------------------- Labels

using LabelKey = std::pair<FlowKey, double>;

inline std::string labels_to_csv(const std::vector<FlowRecord>& flows) {
    std::string out = "transport,client_ip,client_port,server_ip,server_port,first_ts,label\n";
    for (const auto& f : flows) {
        if (!f.label) continue;
        out += std::string(to_string(f.key.transport)) + ',' + f.key.client_ip.to_string() + ',' +
               std::to_string(f.key.client_port) + ',' + f.key.server_ip.to_string() + ',' +
               std::to_string(f.key.server_port) + ',' + format_number(f.first_ts) + ',' + to_string(*f.label) + '\n';
    }
    return out;
}

inline std::map<LabelKey, Label> labels_from_csv(const std::string& text) {
    std::map<LabelKey, Label> out;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cols = catalog_detail::split_csv_line(line);
        if (line_no == 1 && cols[0] == "transport") continue;
        if (cols.size() != 7) throw ParseError("labels line " + std::to_string(line_no) + ": expected 7 columns");
        try {
            FlowKey k;
            k.transport = transport_from_string(cols[0]);
            k.client_ip = Ipv4::parse(cols[1]);
            k.client_port = static_cast<std::uint16_t>(std::stoul(cols[2]));
            k.server_ip = Ipv4::parse(cols[3]);
            k.server_port = static_cast<std::uint16_t>(std::stoul(cols[4]));
            out[{k, std::stod(cols[5])}] = label_from_string(cols[6]);
        } catch (const std::logic_error& e) {
            throw ParseError("labels line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline std::size_t apply_labels(std::vector<FlowRecord>& flows, const std::map<LabelKey, Label>& labels) {
    std::size_t matched = 0;
    for (auto& f : flows) {
        auto it = labels.find({f.key, f.first_ts});
        if (it != labels.end()) {
            f.label = it->second;
            ++matched;
        }
    }
    return matched;
}

// ----------------------------------------------------------------- Batch

struct BatchEntry {
    FlowKey key;
    double first_ts = 0;
    std::optional<Label> truth;
    std::optional<Verdict> verdict;
    std::string error;
};

struct BatchReport {
    std::vector<BatchEntry> entries;  // sorted by (first_ts, key)
    std::size_t specific = 0, fanout = 0, unclassifiable = 0, malicious = 0, benign = 0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    bool has_labels = false;
};

inline BatchReport run_batch(const std::vector<FlowRecord>& flows, const ModelRegistry& reg,
                             Aggregation agg = Aggregation::Or, unsigned jobs = 1) {
    std::vector<std::size_t> order(flows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::tie(flows[a].first_ts, flows[a].key) < std::tie(flows[b].first_ts, flows[b].key);
    });
    BatchReport rep;
    rep.entries.resize(flows.size());
    parallel_for(order.size(), jobs, [&](std::size_t i) {
        const auto& f = flows[order[i]];
        auto& e = rep.entries[i];
        e.key = f.key;
        e.first_ts = f.first_ts;
        e.truth = f.label;
        try {
            e.verdict = classify_flow(f, reg, agg);
        } catch (const UnclassifiableFlow& ex) {
            e.error = ex.what();
        }
    });
    for (const auto& e : rep.entries) {
        if (e.truth) rep.has_labels = true;
        if (!e.verdict) {
            ++rep.unclassifiable;
            continue;
        }
        (e.verdict->specific ? rep.specific : rep.fanout)++;
        const bool mal = e.verdict->label == Label::Malicious;
        (mal ? rep.malicious : rep.benign)++;
        if (e.truth) {
            const bool truth = *e.truth == Label::Malicious;
            if (mal) {
                (truth ? rep.tp : rep.fp)++;
            } else {
                (truth ? rep.fn : rep.tn)++;
            }
        }
    }
    return rep;
}

inline std::string report_to_jsonl(const BatchReport& rep) {
    std::string out;
    for (const auto& e : rep.entries) {
        nlohmann::ordered_json j;
        j["key"] = nlohmann::json(e.key);
        j["first_ts"] = e.first_ts;
        if (e.verdict) {
            const auto& v = *e.verdict;
            j["protocol"] = to_string(v.protocol);
            j["domain_hint"] = v.domain_hint ? nlohmann::json(*v.domain_hint) : nlohmann::json(nullptr);
            if (v.hint_conflict) j["hint_conflict"] = true;
            j["path"] = v.specific ? "SpecificModel" : "GenericFanout";
            j["group"] = v.group ? nlohmann::json(*v.group) : nlohmann::json(nullptr);
            nlohmann::json scores = nlohmann::json::array();
            for (const auto& s : v.scores) scores.push_back({{"model", s.model}, {"score", s.score}});
            j["models"] = scores;
            j["label"] = to_string(v.label);
            j["score"] = v.score;
        } else {
            j["error"] = "UnclassifiableFlow";
            j["message"] = e.error;
        }
        j["truth"] = e.truth ? nlohmann::json(to_string(*e.truth)) : nlohmann::json(nullptr);
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::string report_summary_csv(const BatchReport& rep) {
    std::string out = "metric,value\n";
    auto row = [&](const std::string& k, const std::string& v) { out += k + ',' + v + '\n'; };
    row("flows", std::to_string(rep.entries.size()));
    row("specific_model", std::to_string(rep.specific));
    row("generic_fanout", std::to_string(rep.fanout));
    row("unclassifiable", std::to_string(rep.unclassifiable));
    row("malicious", std::to_string(rep.malicious));
    row("benign", std::to_string(rep.benign));
    if (rep.has_labels) {
        const auto m = metrics_from_counts(rep.tp, rep.fp, rep.tn, rep.fn);
        row("tp", std::to_string(rep.tp));
        row("fp", std::to_string(rep.fp));
        row("tn", std::to_string(rep.tn));
        row("fn", std::to_string(rep.fn));
        row("precision", format_number(m.precision));
        row("recall", format_number(m.recall));
        row("f1", format_number(m.f1));
    }
    return out;
}

}  // namespace c2flow
