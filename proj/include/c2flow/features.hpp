#pragma once

// NetFlow-style per-flow feature sets, categorical encoding and
// standardization.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2flow/error.hpp"
#include "c2flow/flow.hpp"

namespace c2flow {

enum class FeatureSetId { NetflowV5, NetflowV5Ext, NetflowV9, NetflowV9Ext, RamosBaseline };

inline constexpr std::array kAllFeatureSets = {FeatureSetId::NetflowV5, FeatureSetId::NetflowV5Ext,
                                               FeatureSetId::NetflowV9, FeatureSetId::NetflowV9Ext,
                                               FeatureSetId::RamosBaseline};

inline std::string to_string(FeatureSetId s) {
    switch (s) {
        case FeatureSetId::NetflowV5: return "nfv5";
        case FeatureSetId::NetflowV5Ext: return "nfv5ext";
        case FeatureSetId::NetflowV9: return "nfv9";
        case FeatureSetId::NetflowV9Ext: return "nfv9ext";
        case FeatureSetId::RamosBaseline: return "ramos";
    }
    throw ContractError("unknown feature set");
}

inline FeatureSetId feature_set_from_string(const std::string& s) {
    for (auto id : kAllFeatureSets) {
        if (to_string(id) == s) return id;
    }
    if (s == "NetflowV5") return FeatureSetId::NetflowV5;
    if (s == "NetflowV5Ext") return FeatureSetId::NetflowV5Ext;
    if (s == "NetflowV9") return FeatureSetId::NetflowV9;
    if (s == "NetflowV9Ext") return FeatureSetId::NetflowV9Ext;
    if (s == "RamosBaseline") return FeatureSetId::RamosBaseline;
    throw ParseError("unknown feature set: " + s);
}

struct Schema {
    std::vector<std::string> numeric;
    std::vector<std::string> categorical;

    friend bool operator==(const Schema&, const Schema&) = default;

    [[nodiscard]] std::vector<std::string> all_names() const {
        auto out = numeric;
        out.insert(out.end(), categorical.begin(), categorical.end());
        return out;
    }
};

inline const std::vector<std::string>& flag_feature_names() {
    static const std::vector<std::string> names = {"flag_fin", "flag_syn", "flag_rst", "flag_psh",
                                                   "flag_ack", "flag_urg", "flag_ece", "flag_cwr"};
    return names;
}

inline Schema full_schema(FeatureSetId set) {
    Schema s;
    auto add_flags = [&] {
        for (const auto& f : flag_feature_names()) s.numeric.push_back(f);
    };
    switch (set) {
        case FeatureSetId::NetflowV5:
            s.numeric = {"pkt_count_bi", "bytes_total_bi", "duration"};
            add_flags();
            break;
        case FeatureSetId::NetflowV5Ext:
            s.numeric = {"pkt_count_bi", "bytes_total_bi", "duration"};
            add_flags();
            s.numeric.push_back("mean_pkt_size_bi");
            break;
        case FeatureSetId::NetflowV9:
            s.numeric = {"pkt_count_src",    "pkt_count_dst",    "bytes_total_src", "bytes_total_dst",
                         "min_pkt_size_src", "max_pkt_size_src", "duration"};
            add_flags();
            break;
        case FeatureSetId::NetflowV9Ext:
            s.numeric = {"pkt_count_src",    "pkt_count_dst",    "bytes_total_src", "bytes_total_dst",
                         "min_pkt_size_src", "max_pkt_size_src", "duration"};
            add_flags();
            for (const char* n : {"pkt_count_bi", "bytes_total_bi", "mean_pkt_size_bi", "mean_pkt_size_src",
                                  "mean_pkt_size_dst", "ratio_bytes", "ratio_pkts"}) {
                s.numeric.emplace_back(n);
            }
            break;
        case FeatureSetId::RamosBaseline:
            s.numeric = {"pkt_count_bi", "bytes_total_bi"};
            s.categorical = {"tcp_history", "protocol", "service"};
            break;
    }
    return s;
}

struct FeatureMask {
    std::set<std::string> exclude;

    static FeatureMask none() { return {}; }

    // Duration and the CWR/ECE flags, restricted to names present in `set`.
    static FeatureMask default_for(FeatureSetId set) {
        FeatureMask m;
        const auto names = full_schema(set).all_names();
        for (const char* n : {"duration", "flag_cwr", "flag_ece"}) {
            if (std::find(names.begin(), names.end(), n) != names.end()) m.exclude.insert(n);
        }
        return m;
    }

    // "default", "none", or a comma-separated list of names.
    static FeatureMask parse(const std::string& spec, FeatureSetId set) {
        if (spec == "default") return default_for(set);
        if (spec == "none" || spec.empty()) return none();
        FeatureMask m;
        std::size_t pos = 0;
        while (pos <= spec.size()) {
            auto comma = spec.find(',', pos);
            if (comma == std::string::npos) comma = spec.size();
            auto name = spec.substr(pos, comma - pos);
            if (!name.empty()) m.exclude.insert(name);
            pos = comma + 1;
        }
        return m;
    }

    friend bool operator==(const FeatureMask&, const FeatureMask&) = default;
};

inline Schema masked_schema(FeatureSetId set, const FeatureMask& mask) {
    Schema full = full_schema(set);
    const auto names = full.all_names();
    for (const auto& ex : mask.exclude) {
        if (std::find(names.begin(), names.end(), ex) == names.end()) {
            throw ContractError("mask excludes '" + ex + "' which is not in the " + to_string(set) + " schema");
        }
    }
    Schema out;
    for (const auto& n : full.numeric) {
        if (!mask.exclude.count(n)) out.numeric.push_back(n);
    }
    for (const auto& n : full.categorical) {
        if (!mask.exclude.count(n)) out.categorical.push_back(n);
    }
    return out;
}

struct FeatureVector {
    FeatureSetId set = FeatureSetId::NetflowV5;
    std::vector<std::pair<std::string, double>> numeric;
    std::vector<std::pair<std::string, std::string>> categorical;

    [[nodiscard]] double value(const std::string& name) const {
        for (const auto& [n, v] : numeric) {
            if (n == name) return v;
        }
        throw ContractError("feature not present: " + name);
    }

    [[nodiscard]] const std::string& token(const std::string& name) const {
        for (const auto& [n, v] : categorical) {
            if (n == name) return v;
        }
        throw ContractError("categorical feature not present: " + name);
    }
};

struct FeatureCounters {
    std::size_t zero_denominator = 0;
};

// Zeek-style connection history over {S,H,A,D,F,R}: first occurrence of each
// letter per direction, uppercase for the originator.
inline std::string tcp_history(const FlowRecord& flow) {
    std::string hist;
    std::set<char> seen_client;
    std::set<char> seen_server;
    auto note = [&](char c, Direction d) {
        auto& seen = d == Direction::ClientToServer ? seen_client : seen_server;
        if (!seen.insert(c).second) return;
        hist += d == Direction::ClientToServer ? c : static_cast<char>(c - 'A' + 'a');
    };
    for (const auto& p : flow.packets) {
        const std::uint8_t f = p.tcp_flags;
        if (flow.key.transport == Transport::TCP) {
            const bool syn = f & tcp_flag::SYN;
            const bool ack = f & tcp_flag::ACK;
            if (syn && !ack) note('S', p.direction);
            if (syn && ack) note('H', p.direction);
            if (ack && !syn && !(f & (tcp_flag::FIN | tcp_flag::RST)) && p.l4_payload == 0) note('A', p.direction);
            if (p.l4_payload > 0) note('D', p.direction);
            if (f & tcp_flag::FIN) note('F', p.direction);
            if (f & tcp_flag::RST) note('R', p.direction);
        } else if (p.l4_payload > 0) {
            note('D', p.direction);
        }
    }
    return hist;
}

inline std::string service_for_port(std::uint16_t port) {
    switch (port) {
        case 53: return "dns";
        case 80: return "http";
        case 443: return "ssl";
        default: return "-";
    }
}

inline FeatureVector compute_features(const FlowRecord& flow, FeatureSetId set, const FeatureMask& mask,
                                      FeatureCounters* counters = nullptr) {
    if (flow.packets.empty()) throw ContractError("flow without packets");
    const Schema schema = masked_schema(set, mask);

    double pkts_src = 0, pkts_dst = 0, bytes_src = 0, bytes_dst = 0, l4_bytes = 0;
    double min_src = 0, max_src = 0;
    bool any_src = false;
    std::uint8_t flags = 0;
    for (const auto& p : flow.packets) {
        flags |= p.tcp_flags;
        l4_bytes += p.l4_payload;
        if (p.direction == Direction::ClientToServer) {
            pkts_src += 1;
            bytes_src += p.l3_payload;
            if (!any_src || p.l3_payload < min_src) min_src = p.l3_payload;
            if (!any_src || p.l3_payload > max_src) max_src = p.l3_payload;
            any_src = true;
        } else {
            pkts_dst += 1;
            bytes_dst += p.l3_payload;
        }
    }
    const double pkts_bi = pkts_src + pkts_dst;
    const double bytes_bi = bytes_src + bytes_dst;
    auto safe_div = [&](double num, double den) {
        if (den == 0) {
            if (counters) ++counters->zero_denominator;
            return 0.0;
        }
        return num / den;
    };

    std::map<std::string, double> values;
    values["pkt_count_bi"] = pkts_bi;
    values["pkt_count_src"] = pkts_src;
    values["pkt_count_dst"] = pkts_dst;
    values["bytes_total_bi"] = set == FeatureSetId::RamosBaseline ? l4_bytes : bytes_bi;
    values["bytes_total_src"] = bytes_src;
    values["bytes_total_dst"] = bytes_dst;
    values["min_pkt_size_src"] = min_src;
    values["max_pkt_size_src"] = max_src;
    values["duration"] = flow.duration;
    for (std::size_t i = 0; i < 8; ++i) {
        values[flag_feature_names()[i]] = (flags >> i) & 1u ? 1.0 : 0.0;
    }

    FeatureVector fv;
    fv.set = set;
    for (const auto& name : schema.numeric) {
        double v;
        if (name == "mean_pkt_size_bi") {
            v = safe_div(bytes_bi, pkts_bi);
        } else if (name == "mean_pkt_size_src") {
            v = safe_div(bytes_src, pkts_src);
        } else if (name == "mean_pkt_size_dst") {
            v = safe_div(bytes_dst, pkts_dst);
        } else if (name == "ratio_bytes") {
            v = safe_div(bytes_dst, bytes_src);
        } else if (name == "ratio_pkts") {
            v = safe_div(pkts_dst, pkts_src);
        } else {
            v = values.at(name);
        }
        fv.numeric.emplace_back(name, v);
    }
    for (const auto& name : schema.categorical) {
        std::string token;
        if (name == "tcp_history") {
            token = tcp_history(flow);
        } else if (name == "protocol") {
            token = std::string(to_string(flow.key.transport));
        } else {
            token = service_for_port(flow.key.server_port);
        }
        fv.categorical.emplace_back(name, std::move(token));
    }
    return fv;
}

// ------------------------------------------------------------------ Matrix

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    [[nodiscard]] std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

    [[nodiscard]] Matrix select_rows(std::span<const std::size_t> idx) const {
        Matrix m(idx.size(), cols);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(idx[i] * cols), cols,
                        m.data.begin() + static_cast<std::ptrdiff_t>(i * cols));
        }
        return m;
    }
};

// --------------------------------------------------------------- Encoding

enum class CategoricalStrategy { OneHot, FrequencyRank };

inline std::string to_string(CategoricalStrategy s) { return s == CategoricalStrategy::OneHot ? "onehot" : "rank"; }

inline CategoricalStrategy categorical_strategy_from_string(const std::string& s) {
    if (s == "onehot" || s == "OneHot") return CategoricalStrategy::OneHot;
    if (s == "rank" || s == "FrequencyRank") return CategoricalStrategy::FrequencyRank;
    throw ParseError("unknown categorical strategy: " + s);
}

struct CategoricalEncoder {
    CategoricalStrategy strategy = CategoricalStrategy::OneHot;
    std::vector<std::string> columns;
    // OneHot: sorted vocabulary per column. FrequencyRank: tokens in rank order
    // (most frequent first, ties by token).
    std::vector<std::vector<std::string>> vocab;

    void fit(std::span<const FeatureVector> rows) {
        if (rows.empty()) throw ContractError("cannot fit a categorical encoder on an empty dataset");
        columns.clear();
        vocab.clear();
        for (const auto& [name, _] : rows.front().categorical) columns.push_back(name);
        for (std::size_t c = 0; c < columns.size(); ++c) {
            std::map<std::string, std::size_t> counts;
            for (const auto& r : rows) ++counts[r.categorical.at(c).second];
            std::vector<std::string> tokens;
            for (const auto& [tok, _] : counts) tokens.push_back(tok);
            if (strategy == CategoricalStrategy::FrequencyRank) {
                std::stable_sort(tokens.begin(), tokens.end(), [&](const std::string& a, const std::string& b) {
                    return counts[a] > counts[b];
                });
            }
            vocab.push_back(std::move(tokens));
        }
    }

    [[nodiscard]] std::size_t width() const {
        if (strategy == CategoricalStrategy::FrequencyRank) return columns.size();
        std::size_t w = 0;
        for (const auto& v : vocab) w += v.size();
        return w;
    }

    [[nodiscard]] std::vector<std::string> output_names() const {
        std::vector<std::string> out;
        for (std::size_t c = 0; c < columns.size(); ++c) {
            if (strategy == CategoricalStrategy::FrequencyRank) {
                out.push_back(columns[c] + "_rank");
            } else {
                for (const auto& tok : vocab[c]) out.push_back(columns[c] + "=" + tok);
            }
        }
        return out;
    }

    void transform_into(const FeatureVector& row, std::span<double> out) const {
        std::size_t o = 0;
        for (std::size_t c = 0; c < columns.size(); ++c) {
            const auto& tok = row.categorical.at(c).second;
            const auto& v = vocab[c];
            if (strategy == CategoricalStrategy::FrequencyRank) {
                auto it = std::find(v.begin(), v.end(), tok);
                out[o++] = it == v.end() ? static_cast<double>(v.size() + 1)
                                         : static_cast<double>(it - v.begin() + 1);
            } else {
                auto it = std::lower_bound(v.begin(), v.end(), tok);
                for (std::size_t k = 0; k < v.size(); ++k) out[o + k] = 0.0;
                if (it != v.end() && *it == tok) out[o + static_cast<std::size_t>(it - v.begin())] = 1.0;
                o += v.size();
            }
        }
    }
};

inline void to_json(nlohmann::json& j, const CategoricalEncoder& e) {
    j = nlohmann::json{{"strategy", to_string(e.strategy)}, {"columns", e.columns}, {"vocab", e.vocab}};
}

inline void from_json(const nlohmann::json& j, CategoricalEncoder& e) {
    e.strategy = categorical_strategy_from_string(j.at("strategy").get<std::string>());
    j.at("columns").get_to(e.columns);
    j.at("vocab").get_to(e.vocab);
}

struct EncodedDataset {
    Matrix matrix;
    std::vector<std::string> column_names;
    CategoricalEncoder encoder;
};

// Numeric features as-is followed by the encoded categorical block.
inline EncodedDataset encode_categoricals(std::span<const FeatureVector> rows, CategoricalStrategy strategy) {
    if (rows.empty()) throw ContractError("cannot encode an empty dataset");
    EncodedDataset out;
    out.encoder.strategy = strategy;
    out.encoder.fit(rows);
    const std::size_t n_num = rows.front().numeric.size();
    for (const auto& [name, _] : rows.front().numeric) out.column_names.push_back(name);
    for (auto& n : out.encoder.output_names()) out.column_names.push_back(std::move(n));
    out.matrix = Matrix(rows.size(), out.column_names.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].set != rows.front().set) throw ContractError("mixed feature sets in one dataset");
        auto dst = out.matrix.row(r);
        for (std::size_t c = 0; c < n_num; ++c) dst[c] = rows[r].numeric[c].second;
        out.encoder.transform_into(rows[r], dst.subspan(n_num));
    }
    return out;
}

// ------------------------------------------------------------ Standardizing

struct ScalerStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // population

    friend bool operator==(const ScalerStats&, const ScalerStats&) = default;
};

inline void to_json(nlohmann::json& j, const ScalerStats& s) {
    j = nlohmann::json{{"mean", s.mean}, {"std", s.stddev}};
}

inline void from_json(const nlohmann::json& j, ScalerStats& s) {
    j.at("mean").get_to(s.mean);
    j.at("std").get_to(s.stddev);
}

inline ScalerStats fit_scaler(const Matrix& m) {
    ScalerStats s;
    s.mean.assign(m.cols, 0.0);
    s.stddev.assign(m.cols, 0.0);
    if (m.rows == 0) return s;
    for (std::size_t c = 0; c < m.cols; ++c) {
        double sum = 0;
        for (std::size_t r = 0; r < m.rows; ++r) sum += m(r, c);
        const double mean = sum / static_cast<double>(m.rows);
        double ss = 0;
        for (std::size_t r = 0; r < m.rows; ++r) ss += (m(r, c) - mean) * (m(r, c) - mean);
        s.mean[c] = mean;
        s.stddev[c] = std::sqrt(ss / static_cast<double>(m.rows));
    }
    return s;
}

inline void apply_scaler_row(const ScalerStats& s, std::span<double> row) {
    for (std::size_t c = 0; c < s.mean.size(); ++c) {
        row[c] = s.stddev[c] > 0 ? (row[c] - s.mean[c]) / s.stddev[c] : 0.0;
    }
}

inline Matrix apply_scaler(const ScalerStats& s, Matrix m) {
    if (m.cols != s.mean.size()) throw ContractError("scaler width does not match matrix");
    for (std::size_t r = 0; r < m.rows; ++r) apply_scaler_row(s, m.row(r));
    return m;
}

// -------------------------------------------------------- Preprocessing

// Encoder + scaler fitted together on training rows; the scaler covers the
// numeric block only.
struct Preprocessor {
    FeatureSetId set = FeatureSetId::NetflowV9;
    FeatureMask mask;
    Schema schema;
    CategoricalEncoder encoder;
    ScalerStats scaler;
    std::vector<std::string> columns;

    void fit(std::span<const FeatureVector> rows, CategoricalStrategy strategy) {
        if (rows.empty()) throw ContractError("cannot fit preprocessing on an empty dataset");
        auto enc = encode_categoricals(rows, strategy);
        encoder = std::move(enc.encoder);
        columns = std::move(enc.column_names);
        const std::size_t n_num = rows.front().numeric.size();
        Matrix numeric(rows.size(), n_num);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < n_num; ++c) numeric(r, c) = rows[r].numeric[c].second;
        }
        scaler = fit_scaler(numeric);
    }

    void transform_into(const FeatureVector& fv, std::span<double> out) const {
        const std::size_t n_num = scaler.mean.size();
        if (fv.numeric.size() != n_num || fv.categorical.size() != encoder.columns.size() ||
            out.size() != columns.size()) {
            throw ContractError("feature vector does not match the model schema");
        }
        for (std::size_t c = 0; c < n_num; ++c) {
            if (fv.numeric[c].first != columns[c]) {
                throw ContractError("feature '" + fv.numeric[c].first + "' where model expects '" + columns[c] + "'");
            }
            out[c] = fv.numeric[c].second;
        }
        apply_scaler_row(scaler, out.subspan(0, n_num));
        encoder.transform_into(fv, out.subspan(n_num));
    }

    [[nodiscard]] Matrix transform(std::span<const FeatureVector> rows) const {
        Matrix m(rows.size(), columns.size());
        for (std::size_t r = 0; r < rows.size(); ++r) transform_into(rows[r], m.row(r));
        return m;
    }

    [[nodiscard]] Matrix transform(std::span<const FeatureVector> rows, std::span<const std::size_t> idx) const {
        Matrix m(idx.size(), columns.size());
        for (std::size_t i = 0; i < idx.size(); ++i) transform_into(rows[idx[i]], m.row(i));
        return m;
    }
};

inline void to_json(nlohmann::json& j, const Preprocessor& p) {
    j = nlohmann::json{{"feature_set", to_string(p.set)},
                       {"mask", p.mask.exclude},
                       {"schema", {{"numeric", p.schema.numeric}, {"categorical", p.schema.categorical}}},
                       {"encoder", p.encoder},
                       {"scaler", p.scaler},
                       {"columns", p.columns}};
}

inline void from_json(const nlohmann::json& j, Preprocessor& p) {
    p.set = feature_set_from_string(j.at("feature_set").get<std::string>());
    p.mask.exclude = j.at("mask").get<std::set<std::string>>();
    j.at("schema").at("numeric").get_to(p.schema.numeric);
    j.at("schema").at("categorical").get_to(p.schema.categorical);
    j.at("encoder").get_to(p.encoder);
    j.at("scaler").get_to(p.scaler);
    j.at("columns").get_to(p.columns);
    if (p.schema != masked_schema(p.set, p.mask)) throw ParseError("model schema does not match its feature set/mask");
}

// ------------------------------------------------------------------ Dataset

struct Dataset {
    FeatureSetId set = FeatureSetId::NetflowV9;
    FeatureMask mask;
    Schema schema;
    std::vector<FeatureVector> rows;
    std::vector<int> labels;
    FeatureCounters counters;

    [[nodiscard]] std::size_t size() const { return rows.size(); }
};

inline Dataset build_dataset(std::span<const FlowRecord> flows, FeatureSetId set, const FeatureMask& mask) {
    Dataset ds;
    ds.set = set;
    ds.mask = mask;
    ds.schema = masked_schema(set, mask);
    ds.rows.reserve(flows.size());
    ds.labels.reserve(flows.size());
    for (const auto& f : flows) {
        if (!f.label) throw ContractError("unlabeled flow " + f.key.to_string() + " in a training dataset");
        ds.rows.push_back(compute_features(f, set, mask, &ds.counters));
        ds.labels.push_back(*f.label == Label::Malicious ? 1 : 0);
    }
    return ds;
}

inline std::string format_number(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

// CSV with a header of schema names and a trailing `label` column (1/0, empty
// when unlabeled).
inline std::string features_to_csv(const Schema& schema, std::span<const FeatureVector> rows,
                                   std::span<const std::optional<Label>> labels) {
    std::string out;
    for (const auto& n : schema.all_names()) out += n + ',';
    out += "label\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (const auto& [_, v] : rows[r].numeric) out += format_number(v) + ',';
        for (const auto& [_, tok] : rows[r].categorical) out += tok + ',';
        if (r < labels.size() && labels[r]) out += *labels[r] == Label::Malicious ? "1" : "0";
        out += '\n';
    }
    return out;
}

}  // namespace c2flow
