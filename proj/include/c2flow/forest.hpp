#pragma once

// CART decision trees and Random Forests, plus the evaluation protocol built
// on them: stratified k-fold CV, grid search, MDI importance and learning
// curves.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "c2flow/error.hpp"
#include "c2flow/features.hpp"
#include "c2flow/log.hpp"
#include "c2flow/parallel.hpp"

namespace c2flow {

enum class Criterion { Gini, Entropy };

inline std::string to_string(Criterion c) { return c == Criterion::Gini ? "gini" : "entropy"; }

inline Criterion criterion_from_string(const std::string& s) {
    if (s == "gini") return Criterion::Gini;
    if (s == "entropy") return Criterion::Entropy;
    throw ParseError("unknown split criterion: " + s);
}

inline double node_impurity(Criterion c, double n0, double n1) {
    const double n = n0 + n1;
    if (n <= 0) return 0.0;
    const double p0 = n0 / n;
    const double p1 = n1 / n;
    if (c == Criterion::Gini) return 1.0 - p0 * p0 - p1 * p1;
    double h = 0;
    if (p0 > 0) h -= p0 * std::log2(p0);
    if (p1 > 0) h -= p1 * std::log2(p1);
    return h;
}

struct HyperParams {
    int n_trees = 100;
    Criterion criterion = Criterion::Gini;
    int max_depth = 10;
    int min_samples_split = 2;

    friend bool operator==(const HyperParams&, const HyperParams&) = default;

    [[nodiscard]] std::string to_string() const {
        return "(" + std::to_string(n_trees) + ", " + c2flow::to_string(criterion) + ", " +
               std::to_string(max_depth) + ", " + std::to_string(min_samples_split) + ")";
    }
};

inline void to_json(nlohmann::json& j, const HyperParams& h) {
    j = nlohmann::json{{"n_trees", h.n_trees},
                       {"criterion", to_string(h.criterion)},
                       {"max_depth", h.max_depth},
                       {"min_samples_split", h.min_samples_split}};
}

inline void from_json(const nlohmann::json& j, HyperParams& h) {
    j.at("n_trees").get_to(h.n_trees);
    h.criterion = criterion_from_string(j.at("criterion").get<std::string>());
    j.at("max_depth").get_to(h.max_depth);
    j.at("min_samples_split").get_to(h.min_samples_split);
}

// ---------------------------------------------------------------- Tree

struct TreeNode {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::array<std::uint32_t, 2> counts{0, 0};

    [[nodiscard]] bool is_leaf() const { return feature < 0; }
    // Leaf vote; an even split votes malicious.
    [[nodiscard]] int vote() const { return counts[1] >= counts[0] ? 1 : 0; }
    [[nodiscard]] double weight() const { return static_cast<double>(counts[0]) + counts[1]; }

    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    [[nodiscard]] const TreeNode& leaf_for(std::span<const double> row) const {
        const TreeNode* n = &nodes.front();
        while (!n->is_leaf()) n = &nodes[static_cast<std::size_t>(row[n->feature] <= n->threshold ? n->left : n->right)];
        return *n;
    }

    [[nodiscard]] int predict(std::span<const double> row) const { return leaf_for(row).vote(); }

    [[nodiscard]] std::size_t split_count() const {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return !n.is_leaf(); }));
    }

    // Weighted impurity of the leaves (sum over leaves of n_leaf/n_root * impurity).
    [[nodiscard]] double leaf_impurity(Criterion c) const {
        const double total = nodes.front().weight();
        double s = 0;
        for (const auto& n : nodes) {
            if (n.is_leaf()) s += n.weight() / total * node_impurity(c, n.counts[0], n.counts[1]);
        }
        return s;
    }

    friend bool operator==(const Tree&, const Tree&) = default;
};

inline void to_json(nlohmann::json& j, const Tree& t) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold;
    std::vector<std::array<std::uint32_t, 2>> counts;
    for (const auto& n : t.nodes) {
        feature.push_back(n.feature);
        threshold.push_back(n.threshold);
        left.push_back(n.left);
        right.push_back(n.right);
        counts.push_back(n.counts);
    }
    j = nlohmann::json{{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"counts", counts}};
}

inline void from_json(const nlohmann::json& j, Tree& t) {
    const auto feature = j.at("feature").get<std::vector<int>>();
    const auto threshold = j.at("threshold").get<std::vector<double>>();
    const auto left = j.at("left").get<std::vector<int>>();
    const auto right = j.at("right").get<std::vector<int>>();
    const auto counts = j.at("counts").get<std::vector<std::array<std::uint32_t, 2>>>();
    const std::size_t n = feature.size();
    if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || counts.size() != n) {
        throw ParseError("tree arrays have inconsistent lengths");
    }
    t.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& node = t.nodes[i];
        node = {feature[i], threshold[i], left[i], right[i], counts[i]};
        if (!node.is_leaf()) {
            if (left[i] <= static_cast<int>(i) || right[i] <= static_cast<int>(i) || left[i] >= static_cast<int>(n) ||
                right[i] >= static_cast<int>(n)) {
                throw ParseError("tree child index out of range");
            }
        } else if (node.counts[0] + node.counts[1] == 0) {
            throw ParseError("tree leaf without samples");
        }
    }
}

struct TreeParams {
    Criterion criterion = Criterion::Gini;
    int max_depth = 10;
    int min_samples_split = 2;
    std::size_t max_features = 0;  // 0 = all features
};

namespace tree_detail {

struct Builder {
    const Matrix& X;
    std::span<const int> y;
    TreeParams params;
    std::mt19937_64& rng;
    Tree tree;
    std::vector<std::pair<double, int>> scratch;
    std::vector<std::size_t> feature_order;

    int build(std::vector<std::size_t>& idx, int depth) {
        TreeNode node;
        for (auto i : idx) ++node.counts[static_cast<std::size_t>(y[i])];
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(node);

        const double n0 = node.counts[0];
        const double n1 = node.counts[1];
        const double n = n0 + n1;
        const bool pure = node.counts[0] == 0 || node.counts[1] == 0;
        if (pure || depth >= params.max_depth || idx.size() < static_cast<std::size_t>(params.min_samples_split)) {
            return id;
        }

        const double parent = node_impurity(params.criterion, n0, n1);
        const std::size_t d = X.cols;
        const std::size_t k = params.max_features == 0 ? d : std::min(params.max_features, d);
        std::iota(feature_order.begin(), feature_order.end(), std::size_t{0});

        double best_gain = -std::numeric_limits<double>::infinity();
        int best_feature = -1;
        double best_threshold = 0;
        std::size_t evaluated = 0;
        for (std::size_t pos = 0; pos < d && evaluated < k; ++pos) {
            std::uniform_int_distribution<std::size_t> pick(pos, d - 1);
            std::swap(feature_order[pos], feature_order[pick(rng)]);
            const std::size_t f = feature_order[pos];

            scratch.clear();
            for (auto i : idx) scratch.emplace_back(X(i, f), y[i]);
            std::sort(scratch.begin(), scratch.end());
            if (scratch.front().first == scratch.back().first) continue;  // constant here
            ++evaluated;

            double l0 = 0, l1 = 0;
            for (std::size_t s = 0; s + 1 < scratch.size(); ++s) {
                (scratch[s].second ? l1 : l0) += 1;
                if (scratch[s].first == scratch[s + 1].first) continue;
                const double nl = l0 + l1;
                const double nr = n - nl;
                const double child = nl / n * node_impurity(params.criterion, l0, l1) +
                                     nr / n * node_impurity(params.criterion, n0 - l0, n1 - l1);
                const double gain = parent - child;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = static_cast<int>(f);
                    double thr = scratch[s].first + (scratch[s + 1].first - scratch[s].first) / 2;
                    if (!(thr < scratch[s + 1].first)) thr = scratch[s].first;
                    best_threshold = thr;
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<std::size_t> left_idx, right_idx;
        for (auto i : idx) {
            (X(i, static_cast<std::size_t>(best_feature)) <= best_threshold ? left_idx : right_idx).push_back(i);
        }
        idx.clear();
        idx.shrink_to_fit();
        const int l = build(left_idx, depth + 1);
        const int r = build(right_idx, depth + 1);
        auto& self = tree.nodes[static_cast<std::size_t>(id)];
        self.feature = best_feature;
        self.threshold = best_threshold;
        self.left = l;
        self.right = r;
        return id;
    }
};

}  // namespace tree_detail

// Greedy CART on the rows listed in `sample` (duplicates allowed, as produced
// by bootstrapping). Labels must be 0/1.
inline Tree train_tree(const Matrix& X, std::span<const int> y, std::span<const std::size_t> sample,
                       const TreeParams& params, std::mt19937_64& rng) {
    if (sample.empty()) throw ContractError("train_tree: empty sample");
    if (X.rows != y.size()) throw ContractError("train_tree: X and y lengths differ");
    for (auto i : sample) {
        if (y[i] != 0 && y[i] != 1) throw ContractError("train_tree: labels must be 0 or 1");
    }
    tree_detail::Builder b{X, y, params, rng, {}, {}, std::vector<std::size_t>(X.cols)};
    std::vector<std::size_t> idx(sample.begin(), sample.end());
    b.build(idx, 0);
    return std::move(b.tree);
}

inline Tree train_tree(const Matrix& X, std::span<const int> y, const TreeParams& params, std::mt19937_64& rng) {
    std::vector<std::size_t> all(X.rows);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return train_tree(X, y, all, params, rng);
}

// --------------------------------------------------------------- Forest

struct Prediction {
    int label = 0;
    double score = 0.0;  // fraction of trees voting malicious
};

inline std::size_t default_max_features(std::size_t d) {
    return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
}

inline std::vector<Tree> train_forest(const Matrix& X, std::span<const int> y, const HyperParams& hp,
                                      std::uint64_t seed, unsigned jobs = 1) {
    if (X.rows == 0) throw ContractError("train_forest: empty training set");
    if (hp.n_trees < 1) throw ContractError("train_forest: n_trees must be positive");
    TreeParams tp{hp.criterion, hp.max_depth, hp.min_samples_split, default_max_features(X.cols)};
    std::vector<Tree> trees(static_cast<std::size_t>(hp.n_trees));
    parallel_for(trees.size(), jobs, [&](std::size_t t) {
        std::mt19937_64 rng(mix_seed(seed, t));
        std::uniform_int_distribution<std::size_t> draw(0, X.rows - 1);
        std::vector<std::size_t> sample(X.rows);
        for (auto& s : sample) s = draw(rng);
        trees[t] = train_tree(X, y, sample, tp, rng);
    });
    return trees;
}

inline Prediction predict_trees(std::span<const Tree> trees, std::span<const double> row) {
    if (trees.empty()) throw ContractError("predict: empty forest");
    std::size_t votes = 0;
    for (const auto& t : trees) votes += static_cast<std::size_t>(t.predict(row));
    Prediction p;
    p.score = static_cast<double>(votes) / static_cast<double>(trees.size());
    p.label = p.score >= 0.5 ? 1 : 0;
    return p;
}

// Trained forest with its preprocessing state.
struct ForestModel {
    Preprocessor prep;
    HyperParams hyperparams;
    std::uint64_t seed = 0;
    std::vector<Tree> trees;

    [[nodiscard]] Prediction predict_row(std::span<const double> encoded) const {
        if (encoded.size() != prep.columns.size()) {
            throw ContractError("row has " + std::to_string(encoded.size()) + " columns, model expects " +
                                std::to_string(prep.columns.size()));
        }
        return predict_trees(trees, encoded);
    }

    [[nodiscard]] Prediction predict(const FeatureVector& fv) const {
        if (fv.set != prep.set) throw ContractError("feature vector set does not match the model");
        std::vector<double> row(prep.columns.size());
        prep.transform_into(fv, row);
        return predict_trees(trees, row);
    }

    [[nodiscard]] Prediction predict(const FlowRecord& flow) const {
        return predict(compute_features(flow, prep.set, prep.mask));
    }
};

inline void to_json(nlohmann::json& j, const ForestModel& m) {
    j = nlohmann::json{{"format", "c2flow-forest/1"},
                       {"preprocessing", m.prep},
                       {"hyperparams", m.hyperparams},
                       {"seed", m.seed},
                       {"trees", m.trees}};
}

inline void from_json(const nlohmann::json& j, ForestModel& m) {
    if (j.value("format", std::string()) != "c2flow-forest/1") throw ParseError("not a c2flow forest model");
    j.at("preprocessing").get_to(m.prep);
    j.at("hyperparams").get_to(m.hyperparams);
    j.at("seed").get_to(m.seed);
    j.at("trees").get_to(m.trees);
    if (m.trees.empty()) throw ParseError("model without trees");
    for (const auto& t : m.trees) {
        for (const auto& n : t.nodes) {
            if (!n.is_leaf() && static_cast<std::size_t>(n.feature) >= m.prep.columns.size()) {
                throw ParseError("split feature index outside the model schema");
            }
        }
    }
}

inline std::string model_to_string(const ForestModel& m) { return nlohmann::json(m).dump() + "\n"; }

inline ForestModel model_from_string(const std::string& text) {
    try {
        return nlohmann::json::parse(text).get<ForestModel>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model file: ") + e.what());
    }
}

// ---------------------------------------------------------------- Metrics

struct Metrics {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double precision = 0, recall = 0, f1 = 0;
};

inline Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    Metrics m{tp, fp, tn, fn, 0, 0, 0};
    m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

inline Metrics metrics(std::span<const int> y_true, std::span<const int> y_pred) {
    if (y_true.size() != y_pred.size()) throw ContractError("metrics: length mismatch");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_pred[i] == 1) {
            (y_true[i] == 1 ? tp : fp)++;
        } else {
            (y_true[i] == 1 ? fn : tn)++;
        }
    }
    return metrics_from_counts(tp, fp, tn, fn);
}

// Half-width of the two-sided Student-t confidence interval of the mean.
inline double t_half_width(std::span<const double> values, double confidence) {
    const std::size_t n = values.size();
    if (n < 2) return 0.0;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    double ss = 0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0) return 0.0;
    boost::math::students_t dist(static_cast<double>(n - 1));
    const double t = boost::math::quantile(dist, 0.5 + confidence / 2);
    return t * sd / std::sqrt(static_cast<double>(n));
}

inline double mean_of(std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct CvReport {
    std::vector<Metrics> folds;
    Metrics pooled;
    double mean_f1 = 0, mean_precision = 0, mean_recall = 0;
    double ci_f1 = 0, ci_precision = 0, ci_recall = 0;  // 95% half-widths
};

inline CvReport summarize_folds(std::vector<Metrics> folds) {
    CvReport r;
    std::vector<double> f1, p, rc;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& m : folds) {
        f1.push_back(m.f1);
        p.push_back(m.precision);
        rc.push_back(m.recall);
        tp += m.tp;
        fp += m.fp;
        tn += m.tn;
        fn += m.fn;
    }
    r.mean_f1 = mean_of(f1);
    r.mean_precision = mean_of(p);
    r.mean_recall = mean_of(rc);
    r.ci_f1 = t_half_width(f1, 0.95);
    r.ci_precision = t_half_width(p, 0.95);
    r.ci_recall = t_half_width(rc, 0.95);
    r.pooled = metrics_from_counts(tp, fp, tn, fn);
    r.folds = std::move(folds);
    return r;
}

// Value rounded down to the hundredth, leading zero dropped: 0.987 -> ".98",
// 1.0 -> "1", 0.004 -> "0".
inline std::string format_hundredths(double v) {
    const long h = static_cast<long>(std::floor(v * 100 + 1e-9));
    if (h <= 0) return "0";
    std::string s = h >= 100 ? std::to_string(h / 100) : "";
    if (const long frac = h % 100; frac != 0) {
        s += '.';
        s += static_cast<char>('0' + frac / 10);
        if (frac % 10) s += static_cast<char>('0' + frac % 10);
    }
    return s;
}

inline std::string format_metric(double mean, double half_width) {
    return format_hundredths(mean) + "±" + format_hundredths(half_width);
}

// ------------------------------------------------------ Stratified folds

inline std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const int> y, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ContractError("stratified_kfold: k must be at least 2");
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 0 && y[i] != 1) throw ContractError("stratified_kfold: labels must be 0 or 1");
        by_class[static_cast<std::size_t>(y[i])].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        const auto n = by_class[static_cast<std::size_t>(c)].size();
        if (n > 0 && n < k) {
            throw ContractError("stratified_kfold: class " + std::to_string(c) + " has " + std::to_string(n) +
                                " members, fewer than k=" + std::to_string(k));
        }
    }
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t offset = 0;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t i = 0; i < members.size(); ++i) folds[(offset + i) % k].push_back(members[i]);
        offset = (offset + members.size()) % k;
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

inline std::vector<std::size_t> complement(std::size_t n, std::span<const std::size_t> sorted_subset) {
    std::vector<std::size_t> out;
    out.reserve(n - sorted_subset.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (j < sorted_subset.size() && sorted_subset[j] == i) {
            ++j;
        } else {
            out.push_back(i);
        }
    }
    return out;
}

// ------------------------------------------------------- Model training

struct TrainOptions {
    CategoricalStrategy strategy = CategoricalStrategy::OneHot;
    unsigned jobs = 1;
    // Fit encoder/scaler on every row instead of the training split. Only for
    // demonstrating leakage; never used by the evaluation paths.
    bool leak_preprocessing = false;
};

inline ForestModel train_model(const Dataset& ds, std::span<const std::size_t> rows, const HyperParams& hp,
                               std::uint64_t seed, const TrainOptions& opts = {}) {
    ForestModel m;
    m.hyperparams = hp;
    m.seed = seed;
    m.prep.set = ds.set;
    m.prep.mask = ds.mask;
    m.prep.schema = ds.schema;
    std::vector<FeatureVector> fit_rows;
    if (opts.leak_preprocessing) {
        fit_rows = ds.rows;
    } else {
        fit_rows.reserve(rows.size());
        for (auto i : rows) fit_rows.push_back(ds.rows[i]);
    }
    m.prep.fit(fit_rows, opts.strategy);
    Matrix X = m.prep.transform(ds.rows, rows);
    std::vector<int> y;
    y.reserve(rows.size());
    for (auto i : rows) y.push_back(ds.labels[i]);
    m.trees = train_forest(X, y, hp, seed, opts.jobs);
    return m;
}

inline ForestModel train_model(const Dataset& ds, const HyperParams& hp, std::uint64_t seed, const TrainOptions& opts = {}) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return train_model(ds, all, hp, seed, opts);
}

inline Metrics evaluate_model(const ForestModel& m, const Dataset& ds, std::span<const std::size_t> rows) {
    Matrix X = m.prep.transform(ds.rows, rows);
    std::vector<int> y_true, y_pred;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        y_true.push_back(ds.labels[rows[i]]);
        y_pred.push_back(m.predict_row(X.row(i)).label);
    }
    return metrics(y_true, y_pred);
}

inline CvReport cross_validate(const Dataset& ds, const HyperParams& hp, std::size_t k, std::uint64_t seed,
                               const TrainOptions& opts = {}) {
    const auto folds = stratified_kfold(ds.labels, k, seed);
    std::vector<Metrics> results(k);
    for (std::size_t f = 0; f < k; ++f) {
        const auto train = complement(ds.size(), folds[f]);
        const auto model = train_model(ds, train, hp, mix_seed(seed, 1000 + f), opts);
        results[f] = evaluate_model(model, ds, folds[f]);
    }
    return summarize_folds(std::move(results));
}

// ------------------------------------------------------------ Grid search

struct ParamGrid {
    std::vector<int> n_trees;
    std::vector<Criterion> criteria;
    std::vector<int> max_depth;
    std::vector<int> min_samples_split;

    static ParamGrid standard() {
        return {{10, 100, 500}, {Criterion::Gini, Criterion::Entropy}, {2, 5, 10, 15, 20}, {2, 5, 10, 50}};
    }

    static ParamGrid single(const HyperParams& hp) {
        return {{hp.n_trees}, {hp.criterion}, {hp.max_depth}, {hp.min_samples_split}};
    }

    [[nodiscard]] std::vector<HyperParams> cells() const {
        std::vector<HyperParams> out;
        for (int t : n_trees)
            for (auto c : criteria)
                for (int d : max_depth)
                    for (int s : min_samples_split) out.push_back({t, c, d, s});
        return out;
    }
};

struct GridCell {
    HyperParams hp;
    CvReport report;
};

struct GridResult {
    std::vector<GridCell> cells;  // grid order
    HyperParams best;
    std::size_t best_index = 0;
};

// Ordering used to pick the winner: higher mean F1, then fewer trees, smaller
// depth, larger min_samples_split, gini before entropy.
inline bool better_cell(const GridCell& a, const GridCell& b) {
    if (a.report.mean_f1 != b.report.mean_f1) return a.report.mean_f1 > b.report.mean_f1;
    if (a.hp.n_trees != b.hp.n_trees) return a.hp.n_trees < b.hp.n_trees;
    if (a.hp.max_depth != b.hp.max_depth) return a.hp.max_depth < b.hp.max_depth;
    if (a.hp.min_samples_split != b.hp.min_samples_split) return a.hp.min_samples_split > b.hp.min_samples_split;
    return a.hp.criterion == Criterion::Gini && b.hp.criterion != Criterion::Gini;
}

inline GridResult grid_search(const Dataset& ds, std::span<const std::size_t> rows, const ParamGrid& grid,
                              std::size_t k, std::uint64_t seed, const TrainOptions& opts = {}) {
    const auto cells = grid.cells();
    if (cells.empty()) throw ContractError("grid_search: empty grid");
    std::vector<int> y;
    for (auto i : rows) y.push_back(ds.labels[i]);
    const auto folds_local = stratified_kfold(y, k, seed);

    // Preprocessing is independent of hyperparameters: fit it once per fold.
    struct FoldData {
        Preprocessor prep;
        Matrix X_train, X_test;
        std::vector<int> y_train, y_test;
    };
    std::vector<FoldData> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        const auto train_local = complement(rows.size(), folds_local[f]);
        std::vector<std::size_t> train, test;
        for (auto i : train_local) train.push_back(rows[i]);
        for (auto i : folds_local[f]) test.push_back(rows[i]);
        auto& fd = folds[f];
        fd.prep.set = ds.set;
        fd.prep.mask = ds.mask;
        fd.prep.schema = ds.schema;
        std::vector<FeatureVector> fit_rows;
        for (auto i : train) fit_rows.push_back(ds.rows[i]);
        fd.prep.fit(fit_rows, opts.strategy);
        fd.X_train = fd.prep.transform(ds.rows, train);
        fd.X_test = fd.prep.transform(ds.rows, test);
        for (auto i : train) fd.y_train.push_back(ds.labels[i]);
        for (auto i : test) fd.y_test.push_back(ds.labels[i]);
    }

    GridResult result;
    result.cells.resize(cells.size());
    parallel_for(cells.size(), opts.jobs, [&](std::size_t c) {
        std::vector<Metrics> fold_metrics(k);
        for (std::size_t f = 0; f < k; ++f) {
            const auto& fd = folds[f];
            const auto trees = train_forest(fd.X_train, fd.y_train, cells[c], mix_seed(seed, 1000 + f));
            std::vector<int> pred;
            for (std::size_t r = 0; r < fd.X_test.rows; ++r) pred.push_back(predict_trees(trees, fd.X_test.row(r)).label);
            fold_metrics[f] = metrics(fd.y_test, pred);
        }
        result.cells[c] = {cells[c], summarize_folds(std::move(fold_metrics))};
    });
    for (std::size_t c = 1; c < result.cells.size(); ++c) {
        if (better_cell(result.cells[c], result.cells[result.best_index])) result.best_index = c;
    }
    result.best = result.cells[result.best_index].hp;
    return result;
}

inline GridResult grid_search(const Dataset& ds, const ParamGrid& grid, std::size_t k, std::uint64_t seed,
                              const TrainOptions& opts = {}) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return grid_search(ds, all, grid, k, seed, opts);
}

struct NestedCvResult {
    CvReport outer;
    std::vector<HyperParams> chosen;  // per outer fold
};

// Grid search repeated inside each outer training split; the outer test
// fold never influences hyperparameter choice.
inline NestedCvResult nested_cross_validate(const Dataset& ds, const ParamGrid& grid, std::size_t k, std::uint64_t seed,
                                            const TrainOptions& opts = {}) {
    const auto folds = stratified_kfold(ds.labels, k, seed);
    NestedCvResult out;
    std::vector<Metrics> results;
    for (std::size_t f = 0; f < k; ++f) {
        const auto train = complement(ds.size(), folds[f]);
        const auto inner = grid_search(ds, train, grid, k, mix_seed(seed, 2000 + f), opts);
        out.chosen.push_back(inner.best);
        const auto model = train_model(ds, train, inner.best, mix_seed(seed, 1000 + f), opts);
        results.push_back(evaluate_model(model, ds, folds[f]));
    }
    out.outer = summarize_folds(std::move(results));
    return out;
}

inline std::string grid_to_csv(const GridResult& g) {
    std::string out = "n_trees,criterion,max_depth,min_samples_split,mean_f1,ci95_f1,mean_precision,mean_recall,best\n";
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
        const auto& c = g.cells[i];
        out += std::to_string(c.hp.n_trees) + ',' + to_string(c.hp.criterion) + ',' + std::to_string(c.hp.max_depth) +
               ',' + std::to_string(c.hp.min_samples_split) + ',' + format_number(c.report.mean_f1) + ',' +
               format_number(c.report.ci_f1) + ',' + format_number(c.report.mean_precision) + ',' +
               format_number(c.report.mean_recall) + ',' + (i == g.best_index ? "1" : "0") + '\n';
    }
    return out;
}

// -------------------------------------------------------------------- MDI

struct MdiReport {
    std::vector<std::string> features;
    std::vector<double> mean;          // sums to 1 unless no tree has a split
    std::vector<double> ci99;          // half-widths across trees
    std::size_t trees_with_splits = 0;
};

inline std::vector<double> tree_importance(const Tree& t, std::size_t n_features, Criterion c) {
    std::vector<double> imp(n_features, 0.0);
    const double total = t.nodes.front().weight();
    for (const auto& n : t.nodes) {
        if (n.is_leaf()) continue;
        const auto& l = t.nodes[static_cast<std::size_t>(n.left)];
        const auto& r = t.nodes[static_cast<std::size_t>(n.right)];
        const double dec = n.weight() * node_impurity(c, n.counts[0], n.counts[1]) -
                           l.weight() * node_impurity(c, l.counts[0], l.counts[1]) -
                           r.weight() * node_impurity(c, r.counts[0], r.counts[1]);
        imp[static_cast<std::size_t>(n.feature)] += dec / total;
    }
    const double s = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (s > 0) {
        for (auto& v : imp) v /= s;
    }
    return imp;
}

inline MdiReport mdi(std::span<const Tree> trees, std::span<const std::string> features, Criterion c) {
    MdiReport rep;
    rep.features.assign(features.begin(), features.end());
    const std::size_t d = features.size();
    std::vector<std::vector<double>> per_tree;
    for (const auto& t : trees) {
        if (t.split_count() == 0) continue;
        per_tree.push_back(tree_importance(t, d, c));
    }
    rep.trees_with_splits = per_tree.size();
    rep.mean.assign(d, 0.0);
    rep.ci99.assign(d, 0.0);
    if (per_tree.empty()) {
        log().warn("MDI requested for a forest without splits; importances are all zero");
        return rep;
    }
    for (std::size_t f = 0; f < d; ++f) {
        std::vector<double> vals;
        for (const auto& v : per_tree) vals.push_back(v[f]);
        rep.mean[f] = mean_of(vals);
        rep.ci99[f] = t_half_width(vals, 0.99);
    }
    const double s = std::accumulate(rep.mean.begin(), rep.mean.end(), 0.0);
    if (s > 0) {
        for (auto& v : rep.mean) v /= s;
    }
    return rep;
}

inline MdiReport mdi(const ForestModel& m) { return mdi(m.trees, m.prep.columns, m.hyperparams.criterion); }

inline std::string mdi_to_csv(const MdiReport& r) {
    std::string out = "feature,importance,ci99\n";
    for (std::size_t i = 0; i < r.features.size(); ++i) {
        out += r.features[i] + ',' + format_number(r.mean[i]) + ',' + format_number(r.ci99[i]) + '\n';
    }
    return out;
}

// --------------------------------------------------------- Learning curve

struct CurvePoint {
    std::size_t train_size = 0;
    double mean_f1 = 0;
    double ci95 = 0;
    std::vector<double> fold_f1;
};

struct LearningCurve {
    std::vector<CurvePoint> points;
    bool clamped = false;
};

// `points` sizes log-spaced from `start` to `full`, rounded; every size is
// clamped to `full`.
inline std::vector<std::size_t> learning_curve_sizes(std::size_t full, std::size_t points = 20, std::size_t start = 50) {
    std::vector<std::size_t> sizes;
    if (full <= start) {
        sizes.assign(points, full);
        return sizes;
    }
    const double lo = std::log(static_cast<double>(start));
    const double hi = std::log(static_cast<double>(full));
    for (std::size_t i = 0; i < points; ++i) {
        const double t = points == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(points - 1);
        sizes.push_back(std::min(full, static_cast<std::size_t>(std::llround(std::exp(lo + t * (hi - lo))))));
    }
    sizes.front() = start;
    sizes.back() = full;
    return sizes;
}

// Stratified random subset of `rows` of the given size (largest-remainder
// allocation per class).
inline std::vector<std::size_t> stratified_subsample(std::span<const std::size_t> rows, std::span<const int> labels,
                                                     std::size_t size, std::mt19937_64& rng) {
    if (size >= rows.size()) return {rows.begin(), rows.end()};
    std::array<std::vector<std::size_t>, 2> by_class;
    for (auto r : rows) by_class[static_cast<std::size_t>(labels[r])].push_back(r);
    std::array<std::size_t, 2> take{};
    std::array<double, 2> rem{};
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < 2; ++c) {
        const double exact = static_cast<double>(size) * static_cast<double>(by_class[c].size()) / static_cast<double>(rows.size());
        take[c] = static_cast<std::size_t>(std::floor(exact));
        rem[c] = exact - static_cast<double>(take[c]);
        assigned += take[c];
    }
    while (assigned < size) {
        const std::size_t c = rem[1] > rem[0] ? 1 : 0;
        const std::size_t other = 1 - c;
        const std::size_t pick = take[c] < by_class[c].size() ? c : other;
        ++take[pick];
        rem[pick] = -1;
        ++assigned;
    }
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < 2; ++c) {
        auto members = by_class[c];
        std::shuffle(members.begin(), members.end(), rng);
        out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take[c]));
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline LearningCurve learning_curve(const Dataset& ds, const HyperParams& hp, std::size_t k, std::uint64_t seed,
                                    const TrainOptions& opts = {}, std::size_t points = 20, std::size_t start = 50) {
    const auto folds = stratified_kfold(ds.labels, k, seed);
    std::vector<std::vector<std::size_t>> trains;
    std::size_t full = std::numeric_limits<std::size_t>::max();
    for (const auto& f : folds) {
        trains.push_back(complement(ds.size(), f));
        full = std::min(full, trains.back().size());
    }
    LearningCurve lc;
    if (full < start) {
        lc.clamped = true;
        log().warn("learning curve: training split has {} rows, fewer than {}; all points clamped", full, start);
    }
    const auto sizes = learning_curve_sizes(full, points, start);
    lc.points.resize(sizes.size());
    for (std::size_t p = 0; p < sizes.size(); ++p) {
        auto& pt = lc.points[p];
        pt.train_size = sizes[p];
        pt.fold_f1.assign(k, 0.0);
        for (std::size_t f = 0; f < k; ++f) {
            std::mt19937_64 rng(mix_seed(seed, 10000 + p * 1000 + f));
            const auto sub = stratified_subsample(trains[f], ds.labels, sizes[p], rng);
            const auto model = train_model(ds, sub, hp, mix_seed(seed, 1000 + f), opts);
            pt.fold_f1[f] = evaluate_model(model, ds, folds[f]).f1;
        }
        pt.mean_f1 = mean_of(pt.fold_f1);
        pt.ci95 = t_half_width(pt.fold_f1, 0.95);
    }
    return lc;
}

inline std::string learning_curve_to_csv(const LearningCurve& lc) {
    std::string out = "train_size,mean_f1,ci95\n";
    for (const auto& p : lc.points) {
        out += std::to_string(p.train_size) + ',' + format_number(p.mean_f1) + ',' + format_number(p.ci95) + '\n';
    }
    return out;
}

}  // namespace c2flow
